#pragma once

// Finite-difference checks shared by the unit and acceptance suites. Each
// check builds a small random problem in double precision, takes the loss
// sum(weights * output) (or the real loss for the loss functions and the
// full network) and compares analytic gradients with central differences.

#include <random>
#include <vector>

#include "nowcast/nn/gradcheck.hpp"
#include "nowcast/nn/layers.hpp"
#include "nowcast/nn/loss.hpp"
#include "nowcast/unet.hpp"

namespace nowcast::testing {

using nn::Array5;
using nn::Dims5;
using nn::GradCheckOptions;
using nn::GradCheckReport;

inline Array5<double> random_array(Dims5 d, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Array5<double> a(d);
  for (auto& v : a.values()) v = u(rng);
  return a;
}

inline double weighted_sum(const Array5<double>& a, const Array5<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * w.data()[i];
  return s;
}

inline GradCheckReport check_conv3d(std::uint64_t seed, const nn::ConvShape& shape, Dims5 in) {
  std::mt19937_64 rng(seed);
  nn::Conv3d<double> conv(shape);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& w : conv.weights) w = u(rng);
  for (auto& b : conv.bias) b = u(rng);
  auto x = random_array(in, rng);
  const auto w = random_array(conv.output_dims(in), rng);

  const auto g = nn::conv3d_backward(w, x, conv);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(&x.data()[i]), analytic.push_back(g.grad_x.data()[i]);
  for (std::size_t i = 0; i < conv.weights.size(); ++i) coords.push_back(&conv.weights[i]), analytic.push_back(g.grad_w[i]);
  for (std::size_t i = 0; i < conv.bias.size(); ++i) coords.push_back(&conv.bias[i]), analytic.push_back(g.grad_b[i]);
  auto eval = [&] { return nn::Probe{weighted_sum(nn::conv3d_forward(x, conv), w), 0}; };
  return nn::gradient_check(eval, coords, analytic);
}

inline GradCheckReport check_maxpool(std::uint64_t seed, Dims5 in, nn::Window3 window) {
  std::mt19937_64 rng(seed);
  auto x = random_array(in, rng);
  const auto pooled = nn::maxpool3d_forward(x, window);
  const auto w = random_array(pooled.output.dims(), rng);
  const auto gx = nn::maxpool3d_backward(w, pooled.cache);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(&x.data()[i]), analytic.push_back(gx.data()[i]);
  auto eval = [&] {
    const auto p = nn::maxpool3d_forward(x, window);
    std::uint64_t h = 0;
    for (auto i : p.cache.argmax) h = nn::mix_pattern(h, i);
    return nn::Probe{weighted_sum(p.output, w), h};
  };
  return nn::gradient_check(eval, coords, analytic);
}

inline GradCheckReport check_upsample(std::uint64_t seed, Dims5 in, nn::Window3 factors, Dims5 target) {
  std::mt19937_64 rng(seed);
  auto x = random_array(in, rng);
  const auto w = random_array(target, rng);
  const auto gx = nn::upsample3d_backward(w, factors, in);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(&x.data()[i]), analytic.push_back(gx.data()[i]);
  auto eval = [&] { return nn::Probe{weighted_sum(nn::upsample3d_to(x, factors, target), w), 0}; };
  return nn::gradient_check(eval, coords, analytic);
}

inline GradCheckReport check_relu(std::uint64_t seed, Dims5 in) {
  std::mt19937_64 rng(seed);
  auto x = random_array(in, rng);
  // keep inputs away from the kink
  for (auto& v : x.values())
    if (std::abs(v) < 1e-3) v = 0.1;
  const auto w = random_array(in, rng);
  const auto gx = nn::relu_backward(w, nn::relu_forward(x));
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < x.size(); ++i) coords.push_back(&x.data()[i]), analytic.push_back(gx.data()[i]);
  auto eval = [&] {
    const auto y = nn::relu_forward(x);
    std::uint64_t h = 0;
    for (double v : y.values()) h = nn::mix_pattern(h, v > 0.0);
    return nn::Probe{weighted_sum(y, w), h};
  };
  return nn::gradient_check(eval, coords, analytic);
}

inline GradCheckReport check_loss(std::uint64_t seed, nn::LossKind kind, Dims5 in, double scale) {
  std::mt19937_64 rng(seed);
  auto pred = random_array(in, rng, scale);
  const auto target = random_array(in, rng, scale);
  const auto r = nn::compute_loss(kind, pred, target);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < pred.size(); ++i) coords.push_back(&pred.data()[i]), analytic.push_back(r.grad.data()[i]);
  auto eval = [&] { return nn::Probe{nn::compute_loss(kind, pred, target).value, 0}; };
  return nn::gradient_check(eval, coords, analytic);
}

/// Whole-network check on `samples` randomly chosen parameters (0 = all).
inline GradCheckReport check_unet(const ModelConfig& cfg, std::uint64_t seed, std::size_t samples,
                                  GradCheckOptions opt = {}) {
  std::mt19937_64 rng(seed);
  auto model = build_unet<double>(cfg, seed);
  // Non-zero biases so bias gradients are exercised away from the init.
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (auto& c : model.convs())
    for (auto& b : c.bias) b = u(rng);
  const Dims5 in{1, cfg.time_steps, cfg.rows, cfg.cols, cfg.input_channels};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Array5<double> x(in), target({1, 1, cfg.rows, cfg.cols, 1});
  for (auto& v : x.values()) v = unit(rng);
  for (auto& v : target.values()) v = unit(rng);

  typename UNet3D<double>::Cache cache;
  const auto out = model.forward(x, &cache);
  const auto loss = nn::logcosh_loss(out, target);
  const auto grads = model.backward(loss.grad, cache);

  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t l = 0; l < model.convs().size(); ++l) {
    auto& c = model.convs()[l];
    for (std::size_t i = 0; i < c.weights.size(); ++i) coords.push_back(&c.weights[i]), analytic.push_back(grads.weights[l][i]);
    for (std::size_t i = 0; i < c.bias.size(); ++i) coords.push_back(&c.bias[i]), analytic.push_back(grads.biases[l][i]);
  }
  auto eval = [&] {
    typename UNet3D<double>::Cache c;
    const auto y = model.forward(x, &c);
    return nn::Probe{nn::logcosh_loss(y, target).value, UNet3D<double>::activation_pattern(c)};
  };
  opt.samples = samples;
  opt.seed = seed;
  return nn::gradient_check(eval, coords, analytic, opt);
}

}  // namespace nowcast::testing
