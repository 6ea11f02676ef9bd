#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nowcast {

/// Minutes since the Unix epoch (UTC). Radar and satellite products share
/// a 5-minute lattice.
using Timestamp = std::chrono::sys_time<std::chrono::minutes>;

inline constexpr std::chrono::minutes kFrameStep{5};

/// Sentinel stored in radar cells that have no valid measurement.
inline constexpr float kMissing = -999.0f;

/// Upper end of the physically plausible rain-rate range (mm/h).
inline constexpr double kMaxRate = 200.0;

inline bool is_missing(float v) { return v == kMissing; }

std::string format_iso8601(Timestamp t);
/// Accepts `YYYY-MM-DDTHH:MM`, optionally followed by `:SS` and/or `Z`.
Timestamp parse_iso8601(std::string_view text);

/// Plain row-major 2D float grid without physical meaning attached
/// (normalized fields, single satellite bands, network outputs).
struct Field {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Field() = default;
  Field(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), values(r * c, fill) {}
  Field(std::size_t r, std::size_t c, std::vector<float> v);

  float& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  friend bool operator==(const Field&, const Field&) = default;
};

/// One radar frame: rain rates in mm/h, row-major, with kMissing for
/// cells lacking a measurement. Values above 200 are representable so the
/// outlier filter can see them.
class RainGrid {
 public:
  RainGrid() = default;
  /// Throws ValidationError on empty dimensions, a size mismatch, or a value
  /// that is neither kMissing nor a finite non-negative rate.
  RainGrid(std::size_t rows, std::size_t cols, std::vector<float> values, Timestamp time = {});

  static RainGrid filled(std::size_t rows, std::size_t cols, float value, Timestamp time = {});

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  Timestamp time() const { return time_; }
  std::span<const float> values() const { return values_; }
  float at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  RainGrid with_time(Timestamp t) const;

  friend bool operator==(const RainGrid&, const RainGrid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> values_;
  Timestamp time_{};
};

inline constexpr std::size_t kSatBands = 11;

/// Short names of the imager channels in band order.
extern const std::array<std::string_view, kSatBands> kSatBandNames;

/// One satellite timestamp: 11 co-registered bands of identical size.
class SatScene {
 public:
  SatScene() = default;
  SatScene(std::vector<Field> bands, Timestamp time = {});

  std::size_t rows() const { return bands_.front().rows; }
  std::size_t cols() const { return bands_.front().cols; }
  Timestamp time() const { return time_; }
  const Field& band(std::size_t b) const { return bands_.at(b); }
  const std::vector<Field>& bands() const { return bands_; }

  friend bool operator==(const SatScene&, const SatScene&) = default;

 private:
  std::vector<Field> bands_;
  Timestamp time_{};
};

enum class PrecipCategory { NoRain, Light, Moderate, Heavy, Violent, Missing };

inline constexpr std::array<PrecipCategory, 4> kRainCategories = {
    PrecipCategory::Light, PrecipCategory::Moderate, PrecipCategory::Heavy, PrecipCategory::Violent};

/// Half-open interval [lower, upper) in mm/h; Violent's upper end is the
/// float just above 200 so that 200 itself is included.
struct RateBounds {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double rate) const { return lower <= rate && rate < upper; }
};

/// Bounds of a rain category. Light starts at the smallest positive float,
/// so exactly 0 mm/h is never Light.
RateBounds category_bounds(PrecipCategory c);

std::string_view category_name(PrecipCategory c);
PrecipCategory parse_category(std::string_view name);

/// Maps a rate to its category. Rates above 200 map to Violent.
/// Throws RangeError for negative values other than kMissing and for NaN.
PrecipCategory categorize(double rate);

struct GridStats {
  double max_rate = 0.0;
  double missing_fraction = 0.0;
  double rainy_fraction = 0.0;
};

/// Missing cells are excluded from the max and from the rainy count; the
/// fractions are relative to the total number of cells.
GridStats grid_stats(const RainGrid& grid);

// ---------------------------------------------------------------------------
// RFG1 container

/// Raw content of an RFG1 file: bands x rows x cols 32-bit floats,
/// band-major then row-major.
struct GridPayload {
  std::uint16_t bands = 1;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::int64_t timestamp_minutes = 0;
  std::vector<float> values;

  friend bool operator==(const GridPayload&, const GridPayload&) = default;
};

inline constexpr std::size_t kRfg1HeaderSize = 24;

std::vector<std::uint8_t> encode_rfg1(const GridPayload& payload);
/// Throws FormatError (with byte offset) on bad magic, unsupported
/// version/dtype, zero or overflowing dimensions, and truncated payloads.
GridPayload decode_rfg1(std::span<const std::uint8_t> bytes);

void write_payload(const std::filesystem::path& path, const GridPayload& payload);
GridPayload read_payload(const std::filesystem::path& path);

void write_grid(const std::filesystem::path& path, const RainGrid& grid);
RainGrid read_grid(const std::filesystem::path& path);
void write_scene(const std::filesystem::path& path, const SatScene& scene);
SatScene read_scene(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset index

struct IndexRecord {
  Timestamp time{};
  std::filesystem::path radar;
  std::optional<std::filesystem::path> satellite;

  friend bool operator==(const IndexRecord&, const IndexRecord&) = default;
};

using DatasetIndex = std::vector<IndexRecord>;

/// Reads `timestamp<TAB>radar_path<TAB>sat_path_or_dash` lines. Relative
/// paths are resolved against the index file's directory.
DatasetIndex read_index(const std::filesystem::path& path);
/// Writes paths relative to the index file's directory when they live below it.
void write_index(const std::filesystem::path& path, const DatasetIndex& index);

}  // namespace nowcast
