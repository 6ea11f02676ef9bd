#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nowcast/grid.hpp"
#include "nowcast/pipeline.hpp"

namespace nowcast {

struct ContingencyTable {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ContingencyTable& operator+=(const ContingencyTable& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  friend bool operator==(const ContingencyTable&, const ContingencyTable&) = default;
};

/// Cells missing in `obs` are skipped. A cell is positive when its category
/// equals `category`. Throws ShapeError on mismatched grids.
ContingencyTable contingency(const RainGrid& pred, const RainGrid& obs, PrecipCategory category);

/// TP / (TP + FP + FN); nullopt when there are no events in either field.
std::optional<double> csi(const ContingencyTable& table);

struct FssParams {
  RateBounds bounds;
  std::size_t n = 3;  // odd window side

  static FssParams for_category(PrecipCategory c, std::size_t n = 3) { return {category_bounds(c), n}; }
  /// Throws ValidationError unless n is odd and lower < upper.
  void validate() const;
};

/// Per-cell indicator with a validity mask.
struct BinaryField {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> value;
  std::vector<std::uint8_t> valid;
};

struct ProbabilityField {
  std::size_t rows = 0, cols = 0;
  std::vector<double> value;
  std::vector<std::uint8_t> valid;
};

/// 1 where lower <= F < upper; missing cells are marked invalid.
BinaryField binary_probability(const RainGrid& field, RateBounds bounds);

/// Mean of the indicator over the n x n window around each valid cell,
/// counting only valid in-domain neighbours (windows shrink at the border).
/// Uses summed-area tables.
ProbabilityField neighborhood_probability(const BinaryField& bp, std::size_t n);

/// 1 - FBS / WFBS over cells valid in both fields; nullopt when WFBS is 0.
/// A cell missing in either field is masked out of both.
std::optional<double> fss(const RainGrid& pred, const RainGrid& obs, const FssParams& params);
/// Literal per-window summation. Slow; used to check fss.
std::optional<double> fss_bruteforce(const RainGrid& pred, const RainGrid& obs, const FssParams& params);

// ---------------------------------------------------------------------------
// Band histograms

inline constexpr std::size_t kHistogramBins = 64;

/// Normalized histogram over [lo, hi] with equal-width bins. Values outside
/// the range land in the end bins.
struct Histogram {
  double lo = 0.0, hi = 1.0;
  std::vector<double> mass;
};

/// Throws ValidationError if `values` is empty or lo >= hi.
Histogram make_histogram(std::span<const float> values, double lo, double hi, std::size_t bins = kHistogramBins);

struct HistogramPair {
  Histogram p, q;
  /// Same edges and bin count, each summing to 1 within 1e-9.
  void validate() const;
};

/// max over bins of |CDF_p - CDF_q|.
double ks_statistic(const HistogramPair& h);
/// sum p ln(p/q) after adding eps to every bin of both and renormalizing.
double kl_divergence(const HistogramPair& h, double eps = 1e-9);

struct BandComparison {
  std::size_t band = 0;
  std::size_t cells_a = 0, cells_b = 0;
  std::optional<double> ks, kl;  // empty when either event lacks cells of the category
};

/// Satellite values of one event at radar cells of `category`, per band.
/// The scene must already be on the radar grid. Bin edges come from the
/// training band extrema.
std::vector<std::optional<Histogram>> band_histograms(const SatScene& scene, const RainGrid& radar,
                                                      PrecipCategory category, const BandStats& edges);

/// KS and KL between two events' conditional band histograms.
std::vector<BandComparison> compare_events(const SatScene& scene_a, const RainGrid& radar_a, const SatScene& scene_b,
                                           const RainGrid& radar_b, PrecipCategory category, const BandStats& edges);

}  // namespace nowcast
