#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nowcast/grid.hpp"

namespace nowcast {

/// Synthetic radar + satellite sequence. Rain is a sum of advected,
/// anisotropic Gaussian cells that rise and decay over their lifetime.
/// Each satellite band is an affine map of a smoothed copy of the rain
/// field `sat_lead_minutes` in the future, plus noise, on a coarser grid.
struct SynthConfig {
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::size_t frames = 288;
  /// Mean number of live cells at any time.
  std::size_t cells = 6;
  double velocity_row = 0.3;  // cells per frame
  double velocity_col = 0.5;
  double amp_min = 5.0;  // peak rate of a cell, mm/h
  double amp_max = 60.0;
  double sigma_min = 2.0;  // cell radius in grid cells
  double sigma_max = 5.0;
  /// Lifetime phase advance per frame: a cell lives 1/growth frames with a
  /// sine-shaped intensity envelope. 0 means cells never change.
  double growth = 1.0 / 18.0;
  int sat_lead_minutes = 15;
  double noise = 0.02;  // satellite noise std, in units of the band's scale
  std::size_t sat_rows = 0;  // 0: rows * 47 / 288, at least 4
  std::size_t sat_cols = 0;  // 0: cols * 92 / 288, at least 4
  double sat_smoothing = 2.0;  // extra Gaussian blur of the satellite signal, grid cells
  /// Number of frames that get one implausible 250 mm/h pixel.
  std::size_t outlier_frames = 0;
  std::uint64_t seed = 1;
  Timestamp start = std::chrono::sys_days{std::chrono::year{2021} / 6 / 1};

  /// Throws ValidationError; lead must be a multiple of 5 in [0, 30] and
  /// amplitudes within (0, 200].
  void validate() const;
  std::size_t satellite_rows() const;
  std::size_t satellite_cols() const;
};

std::string format_synth_config(const SynthConfig& c);
SynthConfig parse_synth_config(std::string_view text);

struct SynthFrame {
  RainGrid radar;
  SatScene satellite;
};

/// Frame k is valid at start + 5k minutes. Deterministic per seed.
std::vector<SynthFrame> generate_synthetic(const SynthConfig& config);

/// Writes radar/ and satellite/ RFG1 files plus index.tsv below `dir` and
/// returns the index path.
std::filesystem::path write_synthetic(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace nowcast
