#include "nowcast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

#include "nowcast/error.hpp"

namespace nowcast {

LeadTime lead_from_minutes(int m) {
  for (auto lead : kLeadTimes)
    if (minutes(lead) == m) return lead;
  throw ValidationError("lead time must be 5, 15 or 30 minutes, got " + std::to_string(m));
}

std::array<Timestamp, kInputFrames> input_times(Timestamp target, LeadTime lead) {
  std::array<Timestamp, kInputFrames> out;
  const Timestamp last = target - std::chrono::minutes{minutes(lead)};
  for (std::size_t i = 0; i < kInputFrames; ++i)
    out[i] = last - kFrameStep * static_cast<int>(kInputFrames - 1 - i);
  return out;
}

namespace {

const double kLogBase = std::log(kMaxRate + 2.0);

}  // namespace

double normalize_rate(double rate) {
  if (rate == static_cast<double>(kMissing)) return 0.0;
  if (!(rate >= 0.0)) throw RangeError("cannot normalize invalid rain rate " + std::to_string(rate));
  if (rate > kMaxRate) throw RangeError("rain rate " + std::to_string(rate) + " exceeds 200 mm/h; filter outliers first");
  return std::log(rate + 2.0) / kLogBase;
}

double denormalize_rate(double norm) {
  if (!(norm >= 0.0 && norm <= 1.0)) throw RangeError("normalized value " + std::to_string(norm) + " outside [0, 1]");
  return std::max(0.0, std::exp(norm * kLogBase) - 2.0);
}

Field normalize_radar(const RainGrid& grid) {
  Field out(grid.rows(), grid.cols());
  for (std::size_t i = 0; i < grid.size(); ++i) out.values[i] = static_cast<float>(normalize_rate(grid.values()[i]));
  return out;
}

RainGrid denormalize_radar(const Field& norm, Timestamp time) {
  std::vector<float> v(norm.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(denormalize_rate(norm.values[i]));
  return RainGrid(norm.rows, norm.cols, std::move(v), time);
}

BandStats fit_band_stats(std::span<const SatScene> scenes) {
  if (scenes.empty()) throw ValidationError("cannot fit band statistics from zero scenes");
  BandStats s;
  s.min.fill(std::numeric_limits<double>::infinity());
  s.max.fill(-std::numeric_limits<double>::infinity());
  for (const auto& scene : scenes) {
    for (std::size_t b = 0; b < kSatBands; ++b)
      for (float v : scene.band(b).values) {
        s.min[b] = std::min(s.min[b], static_cast<double>(v));
        s.max[b] = std::max(s.max[b], static_cast<double>(v));
      }
    ++s.scenes;
  }
  return s;
}

BandStats merge_band_stats(const BandStats& a, const BandStats& b) {
  if (!a.fitted()) return b;
  if (!b.fitted()) return a;
  BandStats s;
  for (std::size_t i = 0; i < kSatBands; ++i) {
    s.min[i] = std::min(a.min[i], b.min[i]);
    s.max[i] = std::max(a.max[i], b.max[i]);
  }
  s.scenes = a.scenes + b.scenes;
  return s;
}

SatScene normalize_satellite(const SatScene& scene, const BandStats& stats) {
  if (!stats.fitted()) throw ValidationError("band statistics have not been fitted");
  std::vector<Field> bands;
  bands.reserve(kSatBands);
  for (std::size_t b = 0; b < kSatBands; ++b) {
    if (!std::isfinite(stats.min[b]) || !std::isfinite(stats.max[b]) || stats.min[b] > stats.max[b])
      throw ValidationError("missing statistics for band " + std::string(kSatBandNames[b]));
    const Field& src = scene.band(b);
    Field dst(src.rows, src.cols);
    if (!stats.constant(b)) {
      const double span = stats.max[b] - stats.min[b];
      for (std::size_t i = 0; i < src.values.size(); ++i)
        dst.values[i] = static_cast<float>(std::clamp((src.values[i] - stats.min[b]) / span, 0.0, 1.0));
    }
    bands.push_back(std::move(dst));
  }
  return SatScene(std::move(bands), scene.time());
}

namespace {

constexpr int kLanczosA = 3;

double lanczos_kernel(double x) {
  if (x == 0.0) return 1.0;
  if (std::abs(x) >= kLanczosA) return 0.0;
  const double px = std::numbers::pi * x;
  return kLanczosA * std::sin(px) * std::sin(px / kLanczosA) / (px * px);
}

struct Taps {
  std::vector<std::size_t> start;  // offset into index/weight arrays per output sample
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

Taps lanczos_taps(std::size_t n_in, std::size_t n_out) {
  Taps taps;
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  const double stretch = std::max(1.0, scale);
  const double support = kLanczosA * stretch;
  for (std::size_t o = 0; o < n_out; ++o) {
    taps.start.push_back(taps.index.size());
    const double centre = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const auto lo = static_cast<long>(std::floor(centre - support)) + 1;
    const auto hi = static_cast<long>(std::floor(centre + support));
    double sum = 0.0;
    const std::size_t first = taps.weight.size();
    for (long k = lo; k <= hi; ++k) {
      const double w = lanczos_kernel((centre - static_cast<double>(k)) / stretch);
      if (w == 0.0) continue;
      taps.index.push_back(static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(n_in) - 1)));
      taps.weight.push_back(w);
      sum += w;
    }
    for (std::size_t i = first; i < taps.weight.size(); ++i) taps.weight[i] /= sum;
  }
  taps.start.push_back(taps.index.size());
  return taps;
}

}  // namespace

Field resample_lanczos(const Field& band, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ValidationError("resample target dimensions must be positive");
  if (band.rows < 2 || band.cols < 2) throw ValidationError("resample source must be at least 2x2");
  const Taps tr = lanczos_taps(band.rows, rows);
  const Taps tc = lanczos_taps(band.cols, cols);
  std::vector<double> tmp(band.rows * cols, 0.0);
  for (std::size_t r = 0; r < band.rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t k = tc.start[c]; k < tc.start[c + 1]; ++k) acc += tc.weight[k] * band.at(r, tc.index[k]);
      tmp[r * cols + c] = acc;
    }
  Field out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t k = tr.start[r]; k < tr.start[r + 1]; ++k) acc += tr.weight[k] * tmp[tr.index[k] * cols + c];
      out.at(r, c) = static_cast<float>(acc);
    }
  return out;
}

SatScene resample_scene(const SatScene& scene, std::size_t rows, std::size_t cols) {
  std::vector<Field> bands;
  bands.reserve(kSatBands);
  for (const auto& b : scene.bands()) bands.push_back(resample_lanczos(b, rows, cols));
  return SatScene(std::move(bands), scene.time());
}

RadarProbe file_probe() {
  return [](const IndexRecord& rec) -> std::optional<GridStats> {
    try {
      return grid_stats(read_grid(rec.radar));
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

RadarProbe memoized(RadarProbe probe) {
  auto cache = std::make_shared<std::map<std::string, std::optional<GridStats>>>();
  return [probe = std::move(probe), cache](const IndexRecord& rec) {
    const auto key = rec.radar.string();
    auto it = cache->find(key);
    if (it == cache->end()) it = cache->emplace(key, probe(rec)).first;
    return it->second;
  };
}

FilterResult filter_outliers(const DatasetIndex& index, const RadarProbe& probe) {
  FilterResult out;
  out.report.total = index.size();
  for (const auto& rec : index) {
    const auto stats = probe(rec);
    if (!stats) {
      ++out.report.unreadable;
      out.report.unreadable_times.push_back(rec.time);
      continue;
    }
    if (stats->max_rate > kMaxRate) {
      ++out.report.removed;
      continue;
    }
    out.kept.push_back(rec);
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SubsampleResult subsample_no_rain(const DatasetIndex& index, double keep_fraction, std::uint64_t seed,
                                  const RadarProbe& probe) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0))
    throw ValidationError("keep fraction must lie in [0, 1], got " + std::to_string(keep_fraction));
  SubsampleResult out;
  for (const auto& rec : index) {
    const auto stats = probe(rec);
    if (!stats || stats->rainy_fraction > 0.0) {
      out.kept.push_back(rec);
      continue;
    }
    ++out.no_rain_total;
    const auto minute = static_cast<std::uint64_t>(rec.time.time_since_epoch().count());
    const double u = static_cast<double>(splitmix64(splitmix64(seed) ^ minute) >> 11) * 0x1.0p-53;
    if (u < keep_fraction) {
      ++out.no_rain_kept;
      out.kept.push_back(rec);
    }
  }
  return out;
}

std::vector<SequenceSample> build_sequences(const DatasetIndex& index, LeadTime lead, bool multimodal) {
  std::map<Timestamp, const IndexRecord*> by_time;
  for (const auto& rec : index) by_time.emplace(rec.time, &rec);
  std::vector<SequenceSample> out;
  for (const auto& [t, target] : by_time) {
    SequenceSample s;
    s.target_time = t;
    s.lead = lead;
    s.multimodal = multimodal;
    s.target = *target;
    const auto times = input_times(t, lead);
    bool complete = true;
    for (std::size_t i = 0; i < kInputFrames && complete; ++i) {
      const auto it = by_time.find(times[i]);
      complete = it != by_time.end() && (!multimodal || it->second->satellite.has_value());
      if (complete) s.inputs[i] = *it->second;
    }
    if (complete) out.push_back(std::move(s));
  }
  return out;
}

namespace {

Timestamp parse_range_end(std::string_view text) {
  if (text.size() == 10) return parse_iso8601(std::string(text) + "T00:00") + std::chrono::days{1};
  return parse_iso8601(text);
}

Timestamp parse_range_begin(std::string_view text) {
  if (text.size() == 10) return parse_iso8601(std::string(text) + "T00:00");
  return parse_iso8601(text);
}

}  // namespace

DateRange parse_date_range(std::string_view text) {
  const auto sep = text.find("..");
  if (sep == std::string_view::npos) throw ValidationError("date range must look like BEGIN..END, got '" + std::string(text) + "'");
  DateRange r{parse_range_begin(text.substr(0, sep)), parse_range_end(text.substr(sep + 2))};
  if (!(r.begin < r.end)) throw ValidationError("empty date range '" + std::string(text) + "'");
  return r;
}

std::string format_date_range(const DateRange& r) { return format_iso8601(r.begin) + ".." + format_iso8601(r.end); }

std::string format_manifest(const PreprocessManifest& m) {
  std::ostringstream os;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "# nowcast preprocessing manifest\n";
  os << "tool_version=" << m.tool_version << '\n';
  os << "seed=" << m.seed << '\n';
  os << "keep_fraction=" << num(m.keep_fraction) << '\n';
  os << "rows=" << m.rows << '\n' << "cols=" << m.cols << '\n';
  os << "records_total=" << m.outliers.total << '\n';
  os << "outliers_removed=" << m.outliers.removed << '\n';
  os << "outliers_removed_fraction=" << num(m.outliers.removed_fraction()) << '\n';
  os << "unreadable=" << m.outliers.unreadable << '\n';
  for (auto t : m.outliers.unreadable_times) os << "unreadable_time=" << format_iso8601(t) << '\n';
  os << "no_rain_total=" << m.no_rain_total << '\n';
  os << "no_rain_kept=" << m.no_rain_kept << '\n';
  for (const auto& [name, range] : m.splits) os << "split." << name << '=' << format_date_range(range) << '\n';
  os << "band_stats.scenes=" << m.band_stats.scenes << '\n';
  for (std::size_t b = 0; b < kSatBands; ++b)
    os << "band." << kSatBandNames[b] << '=' << num(m.band_stats.min[b]) << ',' << num(m.band_stats.max[b]) << '\n';
  for (const auto& [key, n] : m.sample_counts) os << "samples." << key << '=' << n << '\n';
  return os.str();
}

PreprocessManifest parse_manifest(std::string_view text) {
  PreprocessManifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("manifest line without '=': " + line);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    auto starts = [&](std::string_view p) { return key.rfind(p, 0) == 0; };
    if (key == "tool_version") m.tool_version = val;
    else if (key == "seed") m.seed = std::stoull(val);
    else if (key == "keep_fraction") m.keep_fraction = std::stod(val);
    else if (key == "rows") m.rows = std::stoull(val);
    else if (key == "cols") m.cols = std::stoull(val);
    else if (key == "records_total") m.outliers.total = std::stoull(val);
    else if (key == "outliers_removed") m.outliers.removed = std::stoull(val);
    else if (key == "outliers_removed_fraction") continue;
    else if (key == "unreadable") m.outliers.unreadable = std::stoull(val);
    else if (key == "unreadable_time") m.outliers.unreadable_times.push_back(parse_iso8601(val));
    else if (key == "no_rain_total") m.no_rain_total = std::stoull(val);
    else if (key == "no_rain_kept") m.no_rain_kept = std::stoull(val);
    else if (starts("split.")) m.splits[key.substr(6)] = parse_date_range(val);
    else if (key == "band_stats.scenes") m.band_stats.scenes = std::stoull(val);
    else if (starts("band.")) {
      const auto name = key.substr(5);
      const auto it = std::find(kSatBandNames.begin(), kSatBandNames.end(), name);
      const auto comma = val.find(',');
      if (it == kSatBandNames.end() || comma == std::string::npos)
        throw ValidationError("bad band statistics line: " + line);
      const auto b = static_cast<std::size_t>(it - kSatBandNames.begin());
      m.band_stats.min[b] = std::stod(val.substr(0, comma));
      m.band_stats.max[b] = std::stod(val.substr(comma + 1));
    } else if (starts("samples.")) m.sample_counts[key.substr(8)] = std::stoull(val);
    else throw ValidationError("unknown manifest key '" + key + "'");
  }
  return m;
}

}  // namespace nowcast
