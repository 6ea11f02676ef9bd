#include "nowcast/workflow.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "nowcast/error.hpp"

namespace nowcast {

namespace fs = std::filesystem;

void check_splits(const std::map<std::string, DateRange>& splits) {
  for (auto a = splits.begin(); a != splits.end(); ++a)
    for (auto b = std::next(a); b != splits.end(); ++b)
      if (a->second.overlaps(b->second))
        throw ValidationError("split ranges '" + a->first + "' and '" + b->first + "' overlap");
}

namespace {

std::string split_key(std::string_view split, LeadTime lead) {
  return std::string(split) + "." + std::to_string(minutes(lead));
}

bool inside(const SequenceSample& s, const DateRange& r) {
  return r.contains(s.inputs.front().time) && r.contains(s.target_time);
}

bool all_have_satellite(const DatasetIndex& index) {
  return !index.empty() &&
         std::all_of(index.begin(), index.end(), [](const IndexRecord& r) { return r.satellite.has_value(); });
}

}  // namespace

PreparedData preprocess(const DatasetIndex& index, const PreprocessOptions& options, FrameStore& store) {
  if (index.empty()) throw ValidationError("dataset index is empty");
  auto splits = options.splits;
  if (splits.empty()) {
    const auto [lo, hi] = std::minmax_element(index.begin(), index.end(),
                                              [](const auto& a, const auto& b) { return a.time < b.time; });
    splits["train"] = DateRange{lo->time, hi->time + kFrameStep};
  }
  check_splits(splits);

  const RadarProbe probe = memoized([&store](const IndexRecord& rec) -> std::optional<GridStats> {
    try {
      return grid_stats(store.radar(rec.radar));
    } catch (const Error&) {
      return std::nullopt;
    }
  });

  PreparedData out;
  auto& m = out.manifest;
  m.tool_version = std::string(kToolVersion);
  m.seed = options.seed;
  m.keep_fraction = options.keep_fraction;
  m.splits = splits;

  auto filtered = filter_outliers(index, probe);
  m.outliers = filtered.report;
  out.frames = std::move(filtered.kept);
  if (out.frames.empty()) throw ValidationError("no usable radar frames after filtering");
  m.rows = store.radar(out.frames.front().radar).rows();
  m.cols = store.radar(out.frames.front().radar).cols();

  const auto sub = subsample_no_rain(out.frames, options.keep_fraction, options.seed, probe);
  m.no_rain_total = sub.no_rain_total;
  m.no_rain_kept = sub.no_rain_kept;
  std::set<Timestamp> kept_targets;
  for (const auto& rec : sub.kept) kept_targets.insert(rec.time);

  if (const auto train = splits.find("train"); train != splits.end()) {
    std::vector<SatScene> scenes;
    for (const auto& rec : out.frames)
      if (rec.satellite && train->second.contains(rec.time))
        scenes.push_back(store.satellite(*rec.satellite, m.rows, m.cols));
    if (!scenes.empty()) m.band_stats = fit_band_stats(scenes);
  }

  const bool multimodal = all_have_satellite(out.frames);
  for (auto lead : options.leads) {
    const auto samples = build_sequences(out.frames, lead, multimodal);
    for (const auto& [name, range] : splits) {
      auto& times = out.targets[split_key(name, lead)];
      for (const auto& s : samples)
        if (inside(s, range) && kept_targets.count(s.target_time)) times.push_back(s.target_time);
      m.sample_counts[split_key(name, lead)] = times.size();
    }
  }
  return out;
}

void write_prepared(const PreparedData& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "targets", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream os(dir / "manifest.txt", std::ios::binary);
    if (!os) throw IoError("cannot write " + (dir / "manifest.txt").string());
    os << format_manifest(data.manifest);
  }
  write_index(dir / "frames.tsv", data.frames);
  for (const auto& [key, times] : data.targets) {
    std::ofstream os(dir / "targets" / (key + ".txt"), std::ios::binary);
    if (!os) throw IoError("cannot write target list " + key);
    for (auto t : times) os << format_iso8601(t) << '\n';
  }
}

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

PreparedData read_prepared(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.txt"))
    throw IoError("no preprocessed dataset at " + dir.string() + " (manifest.txt missing)");
  PreparedData data;
  data.manifest = parse_manifest(slurp(dir / "manifest.txt"));
  data.frames = read_index(dir / "frames.tsv");
  if (fs::is_directory(dir / "targets"))
    for (const auto& entry : fs::directory_iterator(dir / "targets")) {
      if (entry.path().extension() != ".txt") continue;
      auto& times = data.targets[entry.path().stem().string()];
      std::istringstream in(slurp(entry.path()));
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) times.push_back(parse_iso8601(line));
    }
  return data;
}

std::vector<SequenceSample> select_samples(const PreparedData& data, std::string_view split, LeadTime lead,
                                           bool multimodal) {
  const auto it = data.targets.find(split_key(split, lead));
  if (it == data.targets.end())
    throw ValidationError("no '" + std::string(split) + "' samples prepared for lead " + std::to_string(minutes(lead)));
  const std::set<Timestamp> wanted(it->second.begin(), it->second.end());
  std::vector<SequenceSample> out;
  for (auto& s : build_sequences(data.frames, lead, multimodal))
    if (wanted.count(s.target_time)) out.push_back(std::move(s));
  return out;
}

std::vector<TrainingExample> make_examples(std::span<const SequenceSample> samples, FrameStore& store,
                                           const BandStats* stats) {
  std::vector<TrainingExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(make_example(store.load(s), stats));
  return out;
}

std::string_view aggregation_name(Aggregation a) { return a == Aggregation::Pooled ? "pooled" : "per-image"; }

Aggregation parse_aggregation(std::string_view name) {
  if (name == "pooled") return Aggregation::Pooled;
  if (name == "per-image") return Aggregation::PerImage;
  throw ValidationError("aggregation must be 'pooled' or 'per-image', got '" + std::string(name) + "'");
}

std::map<PrecipCategory, CategoryScores> score_forecasts(std::span<const RainGrid> predictions,
                                                         std::span<const RainGrid> observations,
                                                         const ScoreOptions& options) {
  if (predictions.size() != observations.size())
    throw ValidationError("prediction and observation counts differ");
  std::map<PrecipCategory, CategoryScores> out;
  for (auto cat : options.categories) {
    const auto params = FssParams::for_category(cat, options.neighborhood);
    ContingencyTable pooled;
    double csi_sum = 0.0, fss_sum = 0.0;
    std::size_t csi_n = 0, fss_n = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const auto table = contingency(predictions[i], observations[i], cat);
      pooled += table;
      if (const auto c = csi(table)) csi_sum += *c, ++csi_n;
      if (const auto f = fss(predictions[i], observations[i], params)) fss_sum += *f, ++fss_n;
    }
    CategoryScores s;
    if (options.aggregation == Aggregation::Pooled) s.csi = csi(pooled);
    else if (csi_n) s.csi = csi_sum / static_cast<double>(csi_n);
    if (fss_n) s.fss = fss_sum / static_cast<double>(fss_n);
    out[cat] = s;
  }
  return out;
}

void SkillReport::set(const std::string& model, int lead, PrecipCategory category, const std::string& metric,
                      std::optional<double> score) {
  auto m = std::find(models.begin(), models.end(), model);
  if (m == models.end()) {
    models.push_back(model);
    for (auto& r : rows) r.scores.emplace_back();
    m = models.end() - 1;
  }
  const auto col = static_cast<std::size_t>(m - models.begin());
  auto row = std::find_if(rows.begin(), rows.end(), [&](const Row& r) {
    return r.lead == lead && r.category == category && r.metric == metric;
  });
  if (row == rows.end()) {
    rows.push_back({lead, category, metric, std::vector<std::optional<double>>(models.size())});
    row = rows.end() - 1;
  }
  row->scores[col] = score;
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.lead != b.lead) return a.lead < b.lead;
    if (a.category != b.category) return a.category < b.category;
    return a.metric < b.metric;
  });
}

std::optional<double> SkillReport::get(const std::string& model, int lead, PrecipCategory category,
                                       const std::string& metric) const {
  const auto m = std::find(models.begin(), models.end(), model);
  if (m == models.end()) return std::nullopt;
  for (const auto& r : rows)
    if (r.lead == lead && r.category == category && r.metric == metric)
      return r.scores[static_cast<std::size_t>(m - models.begin())];
  return std::nullopt;
}

void SkillReport::merge(const SkillReport& other) {
  if (!models.empty() && (other.dataset_id != dataset_id || other.aggregation != aggregation || other.seed != seed))
    throw ValidationError("cannot merge reports with different dataset, aggregation or seed");
  if (models.empty()) {
    dataset_id = other.dataset_id;
    aggregation = other.aggregation;
    seed = other.seed;
  }
  for (const auto& r : other.rows)
    for (std::size_t i = 0; i < other.models.size(); ++i) set(other.models[i], r.lead, r.category, r.metric, r.scores[i]);
}

namespace {

std::string cell(const std::optional<double>& v, bool paper_style) {
  if (!v) return paper_style ? "0.000" : "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

std::string category_label(PrecipCategory c) {
  std::string s(category_name(c));
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

std::string format_report_text(const SkillReport& report, bool paper_style) {
  std::vector<std::string> header{"Lead Time", "Category", "Metric"};
  header.insert(header.end(), report.models.begin(), report.models.end());
  std::vector<std::vector<std::string>> table{header};
  for (const auto& r : report.rows) {
    std::vector<std::string> line{std::to_string(r.lead) + " min", category_label(r.category), r.metric};
    for (const auto& s : r.scores) line.push_back(cell(s, paper_style));
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());

  std::ostringstream os;
  os << "# dataset: " << report.dataset_id << "\n# aggregation: " << report.aggregation << "\n# seed: " << report.seed
     << '\n';
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto& line = table[k];
    for (std::size_t i = 0; i < line.size(); ++i) {
      // Labels left-aligned, scores right-aligned.
      if (i < 3) os << std::left << std::setw(static_cast<int>(width[i])) << line[i];
      else os << std::right << std::setw(static_cast<int>(width[i])) << line[i];
      if (i + 1 < line.size()) os << "  ";
    }
    os << '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::string format_report_csv(const SkillReport& report, bool paper_style) {
  std::ostringstream os;
  os << "# dataset=" << report.dataset_id << "\n# aggregation=" << report.aggregation << "\n# seed=" << report.seed
     << "\nlead,category,metric";
  for (const auto& m : report.models) os << ',' << m;
  os << '\n';
  for (const auto& r : report.rows) {
    os << r.lead << ',' << category_name(r.category) << ',' << r.metric;
    for (const auto& s : r.scores) {
      if (s) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", *s);
        os << ',' << buf;
      } else {
        os << ',' << (paper_style ? "0.000000" : "n/a");
      }
    }
    os << '\n';
  }
  return os.str();
}

SkillReport parse_report_csv(std::string_view text) {
  SkillReport report;
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<std::string> models;
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    return parts;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(2, eq - 2), val = line.substr(eq + 1);
      if (key == "dataset") report.dataset_id = val;
      else if (key == "aggregation") report.aggregation = val;
      else if (key == "seed") report.seed = std::stoull(val);
      continue;
    }
    const auto parts = split(line);
    if (parts.size() < 3) throw ValidationError("malformed report line: " + line);
    if (parts[0] == "lead") {
      models.assign(parts.begin() + 3, parts.end());
      continue;
    }
    if (parts.size() != 3 + models.size()) throw ValidationError("report row has the wrong column count: " + line);
    for (std::size_t i = 0; i < models.size(); ++i) {
      std::optional<double> v;
      if (parts[3 + i] != "n/a") v = std::stod(parts[3 + i]);
      report.set(models[i], std::stoi(parts[0]), parse_category(parts[1]), parts[2], v);
    }
  }
  return report;
}

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb palette(float v) {
  switch (categorize(v)) {
    case PrecipCategory::NoRain: return {255, 255, 255};
    case PrecipCategory::Light: return {0, 90, 255};
    case PrecipCategory::Moderate: return {0, 170, 0};
    case PrecipCategory::Heavy: return {255, 140, 0};
    case PrecipCategory::Violent: return {220, 0, 0};
    case PrecipCategory::Missing: break;
  }
  return {128, 128, 128};
}

}  // namespace

std::vector<std::uint8_t> render_map(const RainGrid& grid) {
  const std::string header = "P6\n" + std::to_string(grid.cols()) + " " + std::to_string(grid.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * grid.size());
  for (float v : grid.values()) {
    const Rgb c = palette(v);
    out.insert(out.end(), {c.r, c.g, c.b});
  }
  return out;
}

void write_map(const RainGrid& grid, const fs::path& path) {
  const auto bytes = render_map(grid);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing image " + path.string());
}

}  // namespace nowcast
