#include "nowcast/grid.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "nowcast/error.hpp"

namespace nowcast {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes[offset + i]} << (8 * i);
  return v;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string format_iso8601(Timestamp t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{t - day};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()));
  return buf;
}

Timestamp parse_iso8601(std::string_view text) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string str(text);
  int consumed = 0;
  const int n = std::sscanf(str.c_str(), "%4d-%2u-%2uT%2u:%2u%n", &y, &mo, &d, &h, &mi, &consumed);
  if (n != 5) throw ValidationError("bad timestamp '" + str + "'");
  std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == ':') {
    if (rest.size() < 3 || std::from_chars(rest.data() + 1, rest.data() + 3, s).ec != std::errc{})
      throw ValidationError("bad timestamp '" + str + "'");
    rest.remove_prefix(3);
  }
  if (rest == "Z") rest.remove_prefix(1);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
  if (!rest.empty() || !ymd.ok() || h > 23 || mi > 59 || s > 59)
    throw ValidationError("bad timestamp '" + str + "'");
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi};
}

Field::Field(std::size_t r, std::size_t c, std::vector<float> v) : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != rows * cols) throw ShapeError("field value count does not match dimensions");
}

RainGrid::RainGrid(std::size_t rows, std::size_t cols, std::vector<float> values, Timestamp time)
    : rows_(rows), cols_(cols), values_(std::move(values)), time_(time) {
  if (rows_ == 0 || cols_ == 0) throw ValidationError("rain grid needs at least one row and column");
  if (values_.size() != rows_ * cols_) throw ShapeError("rain grid value count does not match dimensions");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const float v = values_[i];
    if (!is_missing(v) && !(v >= 0.0f && std::isfinite(v)))
      throw RangeError("rain grid cell " + std::to_string(i) + " holds invalid rate " + std::to_string(v));
  }
}

RainGrid RainGrid::filled(std::size_t rows, std::size_t cols, float value, Timestamp time) {
  return RainGrid(rows, cols, std::vector<float>(rows * cols, value), time);
}

RainGrid RainGrid::with_time(Timestamp t) const {
  RainGrid copy = *this;
  copy.time_ = t;
  return copy;
}

const std::array<std::string_view, kSatBands> kSatBandNames = {
    "VIS006", "VIS008", "IR_016", "IR_039", "WV_062", "WV_073",
    "IR_087", "IR_097", "IR_108", "IR_120", "IR_134"};

SatScene::SatScene(std::vector<Field> bands, Timestamp time) : bands_(std::move(bands)), time_(time) {
  if (bands_.size() != kSatBands)
    throw ValidationError("satellite scene needs " + std::to_string(kSatBands) + " bands, got " +
                          std::to_string(bands_.size()));
  for (const auto& b : bands_) {
    if (b.rows == 0 || b.cols == 0) throw ValidationError("satellite band has empty dimensions");
    if (b.rows != bands_.front().rows || b.cols != bands_.front().cols)
      throw ShapeError("satellite bands differ in dimensions");
    if (b.values.size() != b.rows * b.cols) throw ShapeError("satellite band value count mismatch");
  }
}

RateBounds category_bounds(PrecipCategory c) {
  switch (c) {
    case PrecipCategory::Light:
      return {static_cast<double>(std::numeric_limits<float>::denorm_min()), 2.5};
    case PrecipCategory::Moderate:
      return {2.5, 7.5};
    case PrecipCategory::Heavy:
      return {7.5, 50.0};
    case PrecipCategory::Violent:
      return {50.0, static_cast<double>(std::nextafter(200.0f, 1000.0f))};
    default:
      throw ValidationError("category " + std::string(category_name(c)) + " has no rate bounds");
  }
}

std::string_view category_name(PrecipCategory c) {
  switch (c) {
    case PrecipCategory::NoRain: return "none";
    case PrecipCategory::Light: return "light";
    case PrecipCategory::Moderate: return "moderate";
    case PrecipCategory::Heavy: return "heavy";
    case PrecipCategory::Violent: return "violent";
    case PrecipCategory::Missing: return "missing";
  }
  return "?";
}

PrecipCategory parse_category(std::string_view name) {
  for (auto c : {PrecipCategory::NoRain, PrecipCategory::Light, PrecipCategory::Moderate, PrecipCategory::Heavy,
                 PrecipCategory::Violent, PrecipCategory::Missing}) {
    if (category_name(c) == name) return c;
  }
  throw ValidationError("unknown precipitation category '" + std::string(name) + "'");
}

PrecipCategory categorize(double rate) {
  if (rate == static_cast<double>(kMissing)) return PrecipCategory::Missing;
  if (!(rate >= 0.0)) throw RangeError("invalid rain rate " + std::to_string(rate));
  if (rate == 0.0) return PrecipCategory::NoRain;
  if (rate < 2.5) return PrecipCategory::Light;
  if (rate < 7.5) return PrecipCategory::Moderate;
  if (rate < 50.0) return PrecipCategory::Heavy;
  return PrecipCategory::Violent;
}

GridStats grid_stats(const RainGrid& grid) {
  GridStats s;
  std::size_t missing = 0, rainy = 0;
  for (float v : grid.values()) {
    if (is_missing(v)) {
      ++missing;
      continue;
    }
    s.max_rate = std::max(s.max_rate, static_cast<double>(v));
    if (v > 0.0f) ++rainy;
  }
  const auto n = static_cast<double>(grid.size());
  s.missing_fraction = static_cast<double>(missing) / n;
  s.rainy_fraction = static_cast<double>(rainy) / n;
  return s;
}

std::vector<std::uint8_t> encode_rfg1(const GridPayload& p) {
  const std::size_t expected = std::size_t{p.bands} * p.rows * p.cols;
  if (p.bands == 0 || p.rows == 0 || p.cols == 0) throw ValidationError("RFG1 payload has an empty dimension");
  if (p.values.size() != expected) throw ShapeError("RFG1 payload value count does not match dimensions");
  std::vector<std::uint8_t> out{'R', 'F', 'G', '1', 1, 0};
  out.reserve(kRfg1HeaderSize + 4 * expected);
  put_u16(out, p.bands);
  put_u32(out, p.rows);
  put_u32(out, p.cols);
  put_u64(out, static_cast<std::uint64_t>(p.timestamp_minutes));
  for (float v : p.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

GridPayload decode_rfg1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated RFG1 magic", bytes.size());
  if (bytes[0] != 'R' || bytes[1] != 'F' || bytes[2] != 'G' || bytes[3] != '1')
    throw FormatError("bad magic, expected RFG1", 0);
  if (bytes.size() < kRfg1HeaderSize) throw FormatError("truncated RFG1 header", bytes.size());
  if (bytes[4] != 1) throw FormatError("unsupported RFG1 version " + std::to_string(bytes[4]), 4);
  if (bytes[5] != 0) throw FormatError("unsupported RFG1 dtype " + std::to_string(bytes[5]), 5);
  GridPayload p;
  p.bands = static_cast<std::uint16_t>(get_le(bytes, 6, 2));
  p.rows = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  p.cols = static_cast<std::uint32_t>(get_le(bytes, 12, 4));
  p.timestamp_minutes = static_cast<std::int64_t>(get_le(bytes, 16, 8));
  if (p.bands == 0) throw FormatError("zero band count", 6);
  if (p.rows == 0) throw FormatError("zero row count", 8);
  if (p.cols == 0) throw FormatError("zero column count", 12);

  const std::uint64_t cells = std::uint64_t{p.rows} * p.cols;
  const std::uint64_t available = (bytes.size() - kRfg1HeaderSize) / 4;
  if (cells > std::numeric_limits<std::uint64_t>::max() / 4 / p.bands ||
      cells * p.bands > std::numeric_limits<std::size_t>::max() / 4)
    throw FormatError("dimension overflow", 6);
  const std::uint64_t count = cells * p.bands;
  if (count > available) throw FormatError("truncated RFG1 payload", bytes.size());
  if (bytes.size() != kRfg1HeaderSize + count * 4)
    throw FormatError("trailing bytes after RFG1 payload", kRfg1HeaderSize + count * 4);

  p.values.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    p.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, kRfg1HeaderSize + 4 * i, 4)));
  return p;
}

void write_payload(const std::filesystem::path& path, const GridPayload& payload) {
  const auto bytes = encode_rfg1(payload);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

GridPayload read_payload(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode_rfg1(bytes);
}

void write_grid(const std::filesystem::path& path, const RainGrid& grid) {
  GridPayload p;
  p.bands = 1;
  p.rows = static_cast<std::uint32_t>(grid.rows());
  p.cols = static_cast<std::uint32_t>(grid.cols());
  p.timestamp_minutes = grid.time().time_since_epoch().count();
  p.values.assign(grid.values().begin(), grid.values().end());
  write_payload(path, p);
}

RainGrid read_grid(const std::filesystem::path& path) {
  auto p = read_payload(path);
  if (p.bands != 1)
    throw FormatError(path.string() + ": radar grid must have 1 band, found " + std::to_string(p.bands), 6);
  return RainGrid(p.rows, p.cols, std::move(p.values), Timestamp{std::chrono::minutes{p.timestamp_minutes}});
}

void write_scene(const std::filesystem::path& path, const SatScene& scene) {
  GridPayload p;
  p.bands = static_cast<std::uint16_t>(scene.bands().size());
  p.rows = static_cast<std::uint32_t>(scene.rows());
  p.cols = static_cast<std::uint32_t>(scene.cols());
  p.timestamp_minutes = scene.time().time_since_epoch().count();
  p.values.reserve(std::size_t{p.bands} * p.rows * p.cols);
  for (const auto& b : scene.bands()) p.values.insert(p.values.end(), b.values.begin(), b.values.end());
  write_payload(path, p);
}

SatScene read_scene(const std::filesystem::path& path) {
  const auto p = read_payload(path);
  if (p.bands != kSatBands)
    throw FormatError(path.string() + ": satellite scene must have 11 bands, found " + std::to_string(p.bands), 6);
  const std::size_t plane = std::size_t{p.rows} * p.cols;
  std::vector<Field> bands;
  bands.reserve(p.bands);
  for (std::size_t b = 0; b < p.bands; ++b) {
    auto first = p.values.begin() + static_cast<std::ptrdiff_t>(b * plane);
    bands.emplace_back(p.rows, p.cols, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(plane)));
  }
  return SatScene(std::move(bands), Timestamp{std::chrono::minutes{p.timestamp_minutes}});
}

DatasetIndex read_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open index " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  DatasetIndex index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    IndexRecord rec;
    rec.time = parse_iso8601(fields[0]);
    rec.radar = resolve(fields[1]);
    if (fields[2] != "-") rec.satellite = resolve(fields[2]);
    index.push_back(std::move(rec));
  }
  return index;
}

void write_index(const std::filesystem::path& path, const DatasetIndex& index) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write index " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  auto shorten = [&](const std::filesystem::path& p) {
    const auto rel = std::filesystem::absolute(p).lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
  };
  for (const auto& r : index) {
    out << format_iso8601(r.time) << '\t' << shorten(r.radar) << '\t'
        << (r.satellite ? shorten(*r.satellite) : std::string("-")) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace nowcast
