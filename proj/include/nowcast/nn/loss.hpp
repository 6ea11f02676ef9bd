#pragma once

#include <cmath>
#include <numbers>
#include <string_view>

#include "nowcast/nn/array5.hpp"

namespace nowcast::nn {

enum class LossKind { LogCosh, Mse };

std::string_view loss_name(LossKind k);
LossKind parse_loss(std::string_view name);

template <typename T>
struct LossResult {
  double value = 0.0;
  Array5<T> grad;  // d value / d pred
};

/// ln(cosh(d)) without overflow: |d| + ln((1 + e^(-2|d|)) / 2).
inline double logcosh(double d) {
  const double a = std::abs(d);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

/// Mean of ln(cosh(pred - target)); gradient tanh(pred - target) / n.
template <typename T>
LossResult<T> logcosh_loss(const Array5<T>& pred, const Array5<T>& target);

/// Mean squared difference; gradient 2 (pred - target) / n.
template <typename T>
LossResult<T> mse_loss(const Array5<T>& pred, const Array5<T>& target);

template <typename T>
LossResult<T> compute_loss(LossKind kind, const Array5<T>& pred, const Array5<T>& target) {
  return kind == LossKind::LogCosh ? logcosh_loss(pred, target) : mse_loss(pred, target);
}

}  // namespace nowcast::nn
