#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/grid.hpp"

namespace nowcast {

/// Forecast horizon. The model always sees 6 frames at 5-minute spacing,
/// ending `lead` minutes before the target.
enum class LeadTime { Min5 = 5, Min15 = 15, Min30 = 30 };

inline constexpr std::size_t kInputFrames = 6;
inline constexpr std::array<LeadTime, 3> kLeadTimes = {LeadTime::Min5, LeadTime::Min15, LeadTime::Min30};

inline int minutes(LeadTime lead) { return static_cast<int>(lead); }
/// Throws ValidationError unless m is 5, 15 or 30.
LeadTime lead_from_minutes(int m);

/// Input timestamps for target time t, oldest first: t-lead-25 ... t-lead.
std::array<Timestamp, kInputFrames> input_times(Timestamp target, LeadTime lead);

// ---------------------------------------------------------------------------
// Radar normalization: log base 202 of (x + 2); missing maps to 0.

/// Throws RangeError for rates above 200 or negative non-sentinel values.
double normalize_rate(double rate);
/// 202^n - 2 clamped at 0. Throws RangeError for n outside [0, 1].
double denormalize_rate(double norm);

Field normalize_radar(const RainGrid& grid);
RainGrid denormalize_radar(const Field& norm, Timestamp time = {});

// ---------------------------------------------------------------------------
// Satellite band statistics and min-max scaling

struct BandStats {
  std::array<double, kSatBands> min{};
  std::array<double, kSatBands> max{};
  std::size_t scenes = 0;  // number of scenes the extrema were fitted from

  bool fitted() const { return scenes > 0; }
  bool constant(std::size_t band) const { return min[band] == max[band]; }
};

/// Per-band extrema over every cell of every scene. Throws on empty input.
BandStats fit_band_stats(std::span<const SatScene> training_scenes);
BandStats merge_band_stats(const BandStats& a, const BandStats& b);

/// (X - min) / (max - min) per band, clamped to [0, 1]; a constant band maps
/// to zeros. Throws ValidationError for unfitted or non-finite stats.
SatScene normalize_satellite(const SatScene& scene, const BandStats& stats);

/// Separable Lanczos-3 resampling with pixel-centre alignment, border-clamped
/// taps and per-pixel weight renormalization. When shrinking, the kernel is
/// stretched by the scale factor.
Field resample_lanczos(const Field& band, std::size_t rows, std::size_t cols);
SatScene resample_scene(const SatScene& scene, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Dataset curation

/// Statistics of one radar record, or nullopt when the file cannot be read.
using RadarProbe = std::function<std::optional<GridStats>(const IndexRecord&)>;

/// Reads the radar file of each record; unreadable files yield nullopt.
RadarProbe file_probe();
/// Wraps a probe so every record is read at most once.
RadarProbe memoized(RadarProbe probe);

struct RemovalReport {
  std::size_t total = 0;
  std::size_t removed = 0;     // images whose max rate exceeds 200
  std::size_t unreadable = 0;  // recorded as missing
  std::vector<Timestamp> unreadable_times;

  double removed_fraction() const { return total ? static_cast<double>(removed) / static_cast<double>(total) : 0.0; }
};

struct FilterResult {
  DatasetIndex kept;
  RemovalReport report;
};

/// Drops whole images whose max non-missing rate exceeds 200 mm/h.
FilterResult filter_outliers(const DatasetIndex& index, const RadarProbe& probe = file_probe());

struct SubsampleResult {
  DatasetIndex kept;
  std::size_t no_rain_total = 0;
  std::size_t no_rain_kept = 0;
};

/// Keeps each no-rain image (rainy fraction 0) independently with
/// probability keep_fraction. The draw for a record depends only on
/// (seed, timestamp), so the result does not depend on index order.
/// Rainy images are always kept.
SubsampleResult subsample_no_rain(const DatasetIndex& index, double keep_fraction, std::uint64_t seed,
                                  const RadarProbe& probe = file_probe());

struct SequenceSample {
  Timestamp target_time{};
  LeadTime lead = LeadTime::Min5;
  bool multimodal = false;
  std::array<IndexRecord, kInputFrames> inputs;
  IndexRecord target;

  friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

/// One sample per index record whose 6 input frames (radar, plus satellite
/// when multimodal) and target radar are all present. Ordered by target time.
std::vector<SequenceSample> build_sequences(const DatasetIndex& index, LeadTime lead, bool multimodal);

// ---------------------------------------------------------------------------
// Preprocessing manifest

/// Half-open date range [begin, end).
struct DateRange {
  Timestamp begin{};
  Timestamp end{};

  bool contains(Timestamp t) const { return begin <= t && t < end; }
  bool overlaps(const DateRange& o) const { return begin < o.end && o.begin < end; }
};

/// Parses `BEGIN..END` (ISO-8601 timestamps or plain YYYY-MM-DD dates; END
/// is exclusive, a bare END date extends to the end of that day).
DateRange parse_date_range(std::string_view text);
std::string format_date_range(const DateRange& r);

struct PreprocessManifest {
  std::string tool_version;
  std::uint64_t seed = 0;
  double keep_fraction = 0.2;
  RemovalReport outliers;
  std::size_t no_rain_total = 0;
  std::size_t no_rain_kept = 0;
  std::map<std::string, DateRange> splits;  // train / val / test
  BandStats band_stats;
  std::size_t rows = 0;
  std::size_t cols = 0;
  /// "split.lead" (e.g. "train.30") -> sample count
  std::map<std::string, std::size_t> sample_counts;
};

std::string format_manifest(const PreprocessManifest& m);
PreprocessManifest parse_manifest(std::string_view text);

}  // namespace nowcast
