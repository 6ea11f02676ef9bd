#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nowcast::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// A named parameter buffer and its gradient, viewed for one update.
template <typename T>
struct ParamBlock {
  std::string name;
  std::span<T> values;
  std::span<const T> grads;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> m;  // first moments, one per block
  std::vector<std::vector<double>> v;  // second moments
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, const std::vector<std::size_t>& block_sizes);
};

/// One bias-corrected Adam update with learning rate `lr`. All gradients are
/// checked first; a non-finite entry throws ValidationError naming the block
/// and nothing is modified.
template <typename T>
void adam_step(std::span<ParamBlock<T>> blocks, AdamState<T>& state, double lr);

/// Step decay: base_lr * factor^(number of milestones <= epoch). Epochs
/// count from 0, so with milestone 10 the decay applies from epoch 10 on.
double step_decay_lr(double base_lr, std::span<const int> milestones, double factor, int epoch);

}  // namespace nowcast::nn
