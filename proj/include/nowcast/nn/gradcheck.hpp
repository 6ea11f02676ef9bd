#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "nowcast/error.hpp"

namespace nowcast::nn {

/// Loss value plus a fingerprint of every piecewise-linear branch taken
/// (ReLU signs, pooling argmaxes). A changed fingerprint under perturbation
/// means the finite difference straddled a kink or tie.
struct Probe {
  double loss = 0.0;
  std::uint64_t pattern = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Denominator floor of the relative error.
  double floor = 1e-8;
  /// Coordinates to check; 0 checks all of them.
  std::size_t samples = 0;
  std::uint64_t seed = 1;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t resampled = 0;  // coordinates rejected because they sat on a kink
  std::size_t worst = 0;      // index of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central-difference check of `analytic[i]` = d loss / d *coords[i].
/// `eval` recomputes the loss at the current coordinate values.
template <typename Eval>
GradCheckReport gradient_check(Eval&& eval, std::span<double* const> coords, std::span<const double> analytic,
                               const GradCheckOptions& opt = {}) {
  if (coords.size() != analytic.size()) throw ShapeError("gradient_check: coordinate/gradient count mismatch");
  GradCheckReport report;
  if (coords.empty()) return report;

  std::vector<std::size_t> order(coords.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool sampled = opt.samples != 0 && opt.samples < coords.size();
  if (sampled) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  const std::size_t wanted = sampled ? opt.samples : coords.size();
  const Probe base = eval();

  for (std::size_t idx : order) {
    if (report.checked == wanted) break;
    double& x = *coords[idx];
    const double saved = x;
    x = saved + opt.eps;
    const Probe plus = eval();
    x = saved - opt.eps;
    const Probe minus = eval();
    x = saved;
    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      ++report.resampled;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * opt.eps);
    const double err = relative_error(analytic[idx], numeric, opt.floor);
    if (report.checked == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst = idx;
      report.worst_analytic = analytic[idx];
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  return report;
}

/// Order-sensitive fingerprint helper for Probe::pattern.
inline std::uint64_t mix_pattern(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace nowcast::nn
