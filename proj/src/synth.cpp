#include "nowcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "nowcast/error.hpp"

namespace nowcast {

void SynthConfig::validate() const {
  if (rows < 4 || cols < 4) throw ValidationError("synthetic grid must be at least 4x4");
  if (frames == 0) throw ValidationError("synthetic frame count must be positive");
  if (!(amp_min > 0.0 && amp_min <= amp_max && amp_max <= kMaxRate))
    throw ValidationError("cell amplitudes must satisfy 0 < amp_min <= amp_max <= 200");
  if (!(sigma_min > 0.0 && sigma_min <= sigma_max)) throw ValidationError("cell radii must satisfy 0 < min <= max");
  if (!(growth >= 0.0 && growth <= 1.0)) throw ValidationError("growth must lie in [0, 1]");
  if (sat_lead_minutes < 0 || sat_lead_minutes > 30 || sat_lead_minutes % 5 != 0)
    throw ValidationError("satellite lead must be one of 0, 5, ..., 30 minutes");
  if (!(noise >= 0.0)) throw ValidationError("noise level must be non-negative");
  if (!(sat_smoothing >= 0.0)) throw ValidationError("satellite smoothing must be non-negative");
  if (!std::isfinite(velocity_row) || !std::isfinite(velocity_col)) throw ValidationError("velocity must be finite");
  if (outlier_frames > frames) throw ValidationError("more outlier frames than frames");
}

std::size_t SynthConfig::satellite_rows() const { return sat_rows ? sat_rows : std::max<std::size_t>(4, rows * 47 / 288); }
std::size_t SynthConfig::satellite_cols() const { return sat_cols ? sat_cols : std::max<std::size_t>(4, cols * 92 / 288); }

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Draws are built from raw 64-bit words so sequences do not depend on the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 g_;
};

struct Cell {
  double peak_time;  // frame index of maximum intensity
  double row, col;   // position at peak_time
  double vr, vc;
  double amp;
  // Inverse covariance of the elliptical footprint.
  double a, b, c;
  double sa, sb, theta;
};

struct Model {
  std::vector<Cell> cells;
  double life = 0.0;  // frames; 0 for permanent cells

  double envelope(const Cell& cell, double t) const {
    if (life == 0.0) return 1.0;
    const double age = t - (cell.peak_time - life / 2.0);
    if (age <= 0.0 || age >= life) return 0.0;
    return std::sin(std::numbers::pi * age / life);
  }

  /// Rain at (r, c) and frame time t; `blur` widens every cell by a
  /// Gaussian of that std while keeping its integral.
  double rate(double r, double c, double t, double blur) const {
    double sum = 0.0;
    for (const auto& cell : cells) {
      const double env = envelope(cell, t);
      if (env == 0.0) continue;
      const double dr = r - (cell.row + cell.vr * (t - cell.peak_time));
      const double dc = c - (cell.col + cell.vc * (t - cell.peak_time));
      if (blur == 0.0) {
        sum += cell.amp * env * std::exp(-0.5 * (cell.a * dr * dr + 2.0 * cell.b * dr * dc + cell.c * dc * dc));
        continue;
      }
      const double sa = std::hypot(cell.sa, blur), sb = std::hypot(cell.sb, blur);
      const double ct = std::cos(cell.theta), st = std::sin(cell.theta);
      const double u = ct * dr + st * dc, v = -st * dr + ct * dc;
      const double gain = (cell.sa * cell.sb) / (sa * sb);
      sum += cell.amp * env * gain * std::exp(-0.5 * (u * u / (sa * sa) + v * v / (sb * sb)));
    }
    return sum;
  }
};

Model make_model(const SynthConfig& cfg, Rng& rng) {
  Model m;
  const double lead_frames = cfg.sat_lead_minutes / 5.0;
  std::size_t count = cfg.cells;
  double t0 = 0.0, t1 = 0.0;
  if (cfg.growth > 0.0) {
    m.life = 1.0 / cfg.growth;
    t0 = -m.life / 2.0;
    t1 = static_cast<double>(cfg.frames) + lead_frames + m.life / 2.0;
    count = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.cells) * (t1 - t0) / m.life));
  }
  const double margin = 2.0 * cfg.sigma_max;
  const double jitter = 0.1 * std::hypot(cfg.velocity_row, cfg.velocity_col);
  for (std::size_t i = 0; i < count; ++i) {
    Cell c{};
    c.peak_time = cfg.growth > 0.0 ? rng.uniform(t0, t1) : 0.0;
    c.row = rng.uniform(-margin, static_cast<double>(cfg.rows) + margin);
    c.col = rng.uniform(-margin, static_cast<double>(cfg.cols) + margin);
    c.vr = cfg.velocity_row + jitter * rng.normal();
    c.vc = cfg.velocity_col + jitter * rng.normal();
    c.amp = rng.uniform(cfg.amp_min, cfg.amp_max);
    c.sa = rng.uniform(cfg.sigma_min, cfg.sigma_max);
    c.sb = rng.uniform(cfg.sigma_min, cfg.sigma_max);
    c.theta = rng.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(c.theta), st = std::sin(c.theta);
    const double ia = 1.0 / (c.sa * c.sa), ib = 1.0 / (c.sb * c.sb);
    c.a = ct * ct * ia + st * st * ib;
    c.b = ct * st * (ia - ib);
    c.c = st * st * ia + ct * ct * ib;
    m.cells.push_back(c);
  }
  return m;
}

// Per-band affine maps of the normalized cloud signal: reflectances rise
// over convection, brightness temperatures fall.
constexpr std::array<double, kSatBands> kBandOffset = {0.08, 0.10, 0.06, 285.0, 245.0, 255.0, 275.0, 270.0, 272.0, 265.0, 258.0};
constexpr std::array<double, kSatBands> kBandScale = {0.70, 0.60, 0.45, -35.0, -12.0, -18.0, -55.0, -60.0, -58.0, -48.0, -30.0};

constexpr double kRainFloor = 0.1;  // mm/h; weaker Gaussian tails are dry

}  // namespace

std::vector<SynthFrame> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Model model = make_model(cfg, rng);
  const double lead_frames = cfg.sat_lead_minutes / 5.0;
  const std::size_t sr = cfg.satellite_rows(), sc = cfg.satellite_cols();
  const double step_r = static_cast<double>(cfg.rows) / static_cast<double>(sr);
  const double step_c = static_cast<double>(cfg.cols) / static_cast<double>(sc);

  std::vector<std::size_t> outliers;
  for (std::size_t k = 0; k < cfg.outlier_frames; ++k) outliers.push_back(k * cfg.frames / cfg.outlier_frames);

  std::vector<SynthFrame> frames;
  frames.reserve(cfg.frames);
  for (std::size_t f = 0; f < cfg.frames; ++f) {
    const double t = static_cast<double>(f);
    const Timestamp when = cfg.start + kFrameStep * static_cast<int>(f);

    std::vector<float> rain(cfg.rows * cfg.cols);
    for (std::size_t r = 0; r < cfg.rows; ++r)
      for (std::size_t c = 0; c < cfg.cols; ++c) {
        double v = model.rate(static_cast<double>(r), static_cast<double>(c), t, 0.0);
        v = v < kRainFloor ? 0.0 : std::min(v, cfg.amp_max);
        rain[r * cfg.cols + c] = static_cast<float>(v);
      }
    if (std::find(outliers.begin(), outliers.end(), f) != outliers.end()) rain[0] = 250.0f;

    std::vector<double> signal(sr * sc);
    for (std::size_t r = 0; r < sr; ++r)
      for (std::size_t c = 0; c < sc; ++c) {
        const double rr = (static_cast<double>(r) + 0.5) * step_r - 0.5;
        const double cc = (static_cast<double>(c) + 0.5) * step_c - 0.5;
        signal[r * sc + c] = model.rate(rr, cc, t + lead_frames, cfg.sat_smoothing) / cfg.amp_max;
      }
    std::vector<Field> bands;
    for (std::size_t b = 0; b < kSatBands; ++b) {
      Field band(sr, sc);
      for (std::size_t i = 0; i < band.values.size(); ++i) {
        double v = kBandOffset[b] + kBandScale[b] * signal[i];
        if (cfg.noise > 0.0) v += cfg.noise * std::abs(kBandScale[b]) * rng.normal();
        band.values[i] = static_cast<float>(v);
      }
      bands.push_back(std::move(band));
    }
    frames.push_back({RainGrid(cfg.rows, cfg.cols, std::move(rain), when), SatScene(std::move(bands), when)});
  }
  return frames;
}

std::filesystem::path write_synthetic(const SynthConfig& cfg, const std::filesystem::path& dir) {
  const auto frames = generate_synthetic(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir / "radar", ec);
  std::filesystem::create_directories(dir / "satellite", ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  DatasetIndex index;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.rfg", f);
    const auto radar = dir / "radar" / name;
    const auto sat = dir / "satellite" / name;
    write_grid(radar, frames[f].radar);
    write_scene(sat, frames[f].satellite);
    index.push_back({frames[f].radar.time(), radar, sat});
  }
  const auto path = dir / "index.tsv";
  write_index(path, index);
  std::ofstream(dir / "synth.cfg") << format_synth_config(cfg);
  return path;
}

std::string format_synth_config(const SynthConfig& c) {
  std::ostringstream os;
  os << "rows=" << c.rows << "\ncols=" << c.cols << "\nframes=" << c.frames << "\ncells=" << c.cells
     << "\nvelocity_row=" << num(c.velocity_row) << "\nvelocity_col=" << num(c.velocity_col)
     << "\namp_min=" << num(c.amp_min) << "\namp_max=" << num(c.amp_max) << "\nsigma_min=" << num(c.sigma_min)
     << "\nsigma_max=" << num(c.sigma_max) << "\ngrowth=" << num(c.growth) << "\nsat_lead=" << c.sat_lead_minutes
     << "\nnoise=" << num(c.noise) << "\nsat_rows=" << c.satellite_rows() << "\nsat_cols=" << c.satellite_cols()
     << "\nsat_smoothing=" << num(c.sat_smoothing) << "\noutlier_frames=" << c.outlier_frames << "\nseed=" << c.seed
     << "\nstart=" << format_iso8601(c.start) << '\n';
  return os.str();
}

SynthConfig parse_synth_config(std::string_view text) {
  SynthConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("synth config line without '=': " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      auto size = [&] { return static_cast<std::size_t>(std::stoull(val)); };
      if (key == "rows") c.rows = size();
      else if (key == "cols") c.cols = size();
      else if (key == "frames") c.frames = size();
      else if (key == "cells") c.cells = size();
      else if (key == "velocity_row") c.velocity_row = std::stod(val);
      else if (key == "velocity_col") c.velocity_col = std::stod(val);
      else if (key == "amp_min") c.amp_min = std::stod(val);
      else if (key == "amp_max") c.amp_max = std::stod(val);
      else if (key == "sigma_min") c.sigma_min = std::stod(val);
      else if (key == "sigma_max") c.sigma_max = std::stod(val);
      else if (key == "growth") c.growth = std::stod(val);
      else if (key == "sat_lead") c.sat_lead_minutes = std::stoi(val);
      else if (key == "noise") c.noise = std::stod(val);
      else if (key == "sat_rows") c.sat_rows = size();
      else if (key == "sat_cols") c.sat_cols = size();
      else if (key == "sat_smoothing") c.sat_smoothing = std::stod(val);
      else if (key == "outlier_frames") c.outlier_frames = size();
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "start") c.start = parse_iso8601(val);
      else throw ValidationError("unknown synth config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ValidationError("bad value for synth config key '" + key + "': " + val);
    }
  }
  c.validate();
  return c;
}

}  // namespace nowcast
