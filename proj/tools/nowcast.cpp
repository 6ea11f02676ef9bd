// nowcast: synthetic data, preprocessing, training, prediction and skill reports.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nowcast/error.hpp"
#include "nowcast/nn/checkpoint.hpp"
#include "nowcast/synth.hpp"
#include "nowcast/workflow.hpp"

using namespace nowcast;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
  std::optional<int> lead;
  std::string model;
};

// Config files hold "section.key=value" lines; sections feed the matching parser.
using Sections = std::map<std::string, std::string>;

const std::set<std::string> kSections{"synth", "preprocess", "model", "train"};

Sections read_sections(const fs::path& path) {
  Sections s;
  if (path.empty()) return s;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto dot = line.find('.'), eq = line.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq)
      throw ValidationError("config line needs a section prefix (synth., preprocess., model., train.): " + line);
    const auto section = line.substr(0, dot);
    if (!kSections.count(section)) throw ValidationError("unknown config section '" + section + "'");
    s[section] += line.substr(dot + 1) + '\n';
  }
  return s;
}

std::string prefixed(const std::string& section, const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line))
    if (!line.empty()) out += section + "." + line + "\n";
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

LeadTime need_lead(const Globals& g) {
  if (!g.lead) throw ValidationError("--lead is required");
  return lead_from_minutes(*g.lead);
}

fs::path need_out(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required");
  return g.out;
}

std::string file_stamp(Timestamp t) {
  auto s = format_iso8601(t);
  std::erase(s, ':');
  return s;
}

// ---------------------------------------------------------------------------
// synth

struct SynthFlags {
  std::optional<std::size_t> frames;
  std::optional<std::size_t> outliers;
  std::optional<int> sat_lead;
};

int cmd_synth(const Globals& g, const SynthFlags& f) {
  const auto sections = read_sections(g.config);
  SynthConfig c = parse_synth_config(sections.count("synth") ? sections.at("synth") : "");
  if (g.seed) c.seed = *g.seed;
  if (f.frames) c.frames = *f.frames;
  if (f.outliers) c.outlier_frames = *f.outliers;
  if (f.sat_lead) c.sat_lead_minutes = *f.sat_lead;
  c.validate();
  const auto index = write_synthetic(c, need_out(g));
  std::printf("wrote %zu frames, index %s\n", c.frames, index.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessFlags {
  std::string index;
  std::optional<double> keep;
  std::string train_range, val_range, test_range;
};

int cmd_preprocess(const Globals& g, const PreprocessFlags& f) {
  const auto sections = read_sections(g.config);
  PreprocessOptions o;
  std::map<std::string, std::string> ranges;
  if (sections.count("preprocess")) {
    std::istringstream in(sections.at("preprocess"));
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      const auto key = line.substr(0, eq), val = line.substr(eq + 1);
      try {
        if (key == "keep") o.keep_fraction = std::stod(val);
        else if (key == "seed") o.seed = std::stoull(val);
        else if (key == "train_range" || key == "val_range" || key == "test_range")
          ranges[key.substr(0, key.find('_'))] = val;
        else throw ValidationError("unknown preprocess config key '" + key + "'");
      } catch (const std::logic_error&) {
        throw ValidationError("bad value for preprocess config key '" + key + "': " + val);
      }
    }
  }
  if (g.seed) o.seed = *g.seed;
  if (f.keep) o.keep_fraction = *f.keep;
  if (!f.train_range.empty()) ranges["train"] = f.train_range;
  if (!f.val_range.empty()) ranges["val"] = f.val_range;
  if (!f.test_range.empty()) ranges["test"] = f.test_range;
  for (const auto& [name, text] : ranges) o.splits[name] = parse_date_range(text);
  if (g.lead) o.leads = {lead_from_minutes(*g.lead)};
  if (f.index.empty()) throw ValidationError("--index is required");

  FrameStore store;
  const auto data = preprocess(read_index(f.index), o, store);
  write_prepared(data, need_out(g));
  const auto& m = data.manifest;
  std::printf("%zu of %zu frames kept (%zu outliers, %zu unreadable); no-rain %zu of %zu kept\n", data.frames.size(),
              m.outliers.total, m.outliers.removed, m.outliers.unreadable, m.no_rain_kept, m.no_rain_total);
  for (const auto& [key, n] : m.sample_counts) std::printf("  %-10s %zu samples\n", key.c_str(), n);
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct Run {
  ModelConfig config;
  TrainSchedule schedule;
  UNet3D<float> model;
};

Run load_run(const fs::path& dir) {
  if (!fs::exists(dir / "run.cfg")) throw IoError("no run.cfg in " + dir.string());
  const auto sections = read_sections(dir / "run.cfg");
  Run r;
  r.config = parse_model_config(sections.count("model") ? sections.at("model") : "");
  r.schedule = parse_train_schedule(sections.count("train") ? sections.at("train") : "");
  r.model = UNet3D<float>(r.config, r.schedule.seed);
  r.model.load_tensors(nn::read_checkpoint(dir / "model.rfp"));
  return r;
}

struct TrainFlags {
  std::string data;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::string loss;
  bool quiet = false;
};

int cmd_train(const Globals& g, const TrainFlags& f) {
  if (g.model.empty() || g.model == "persistence")
    throw ValidationError("train needs --model radar or --model multimodal");
  const Variant v = parse_variant(g.model);
  const LeadTime lead = need_lead(g);
  if (f.data.empty()) throw ValidationError("--data is required");
  const auto data = read_prepared(f.data);
  const auto sections = read_sections(g.config);

  ModelConfig cfg = parse_model_config(format_model_config(ModelConfig::desk(v)) +
                                       (sections.count("model") ? sections.at("model") : ""));
  if (cfg.variant != v) throw ValidationError("config model.variant disagrees with --model");
  cfg.rows = data.manifest.rows;
  cfg.cols = data.manifest.cols;
  cfg.lead_minutes = minutes(lead);
  cfg.validate();

  TrainSchedule s = parse_train_schedule(sections.count("train") ? sections.at("train") : "");
  if (g.seed) s.seed = *g.seed;
  if (f.epochs) {
    s.epochs = *f.epochs;
    std::erase_if(s.milestones, [&](int m) { return m >= s.epochs; });
  }
  if (f.lr) s.lr = *f.lr;
  if (f.batch) s.batch_size = *f.batch;
  if (!f.loss.empty()) s.loss = nn::parse_loss(f.loss);
  s.validate();

  const bool mm = v == Variant::Multimodal;
  const BandStats* stats = mm ? &data.manifest.band_stats : nullptr;
  if (mm && !stats->fitted()) throw ValidationError("dataset has no fitted band statistics for a multimodal model");
  FrameStore store;
  const auto train_samples = select_samples(data, "train", lead, mm);
  if (train_samples.empty()) throw ValidationError("no training samples for this lead");
  const auto train_set = make_examples(train_samples, store, stats);
  std::vector<TrainingExample> val_set;
  if (data.targets.count("val." + std::to_string(minutes(lead))))
    val_set = make_examples(select_samples(data, "val", lead, mm), store, stats);

  UNet3D<float> model(cfg, s.seed);
  std::fprintf(stderr, "training %s, lead %d min: %zu train / %zu val samples, %zu parameters\n",
               std::string(variant_name(v)).c_str(), minutes(lead), train_set.size(), val_set.size(),
               model.param_count());
  const auto result = train(model, train_set, val_set, s, [&](const EpochRecord& r) {
    if (!f.quiet)
      std::fprintf(stderr, "  epoch %3d  lr %.2e  train %.6f  val %.6f\n", r.epoch, r.lr, r.train_loss, r.val_loss);
    return true;
  });

  const fs::path out = need_out(g);
  fs::create_directories(out);
  nn::write_checkpoint(out / "model.rfp", model.to_tensors());
  write_text(out / "run.cfg", prefixed("model", format_model_config(cfg)) + prefixed("train", format_train_schedule(s)));
  write_text(out / "history.csv", format_history_csv(result.history));
  if (result.best_epoch >= 0) std::printf("best epoch %d, val loss %.6f\n", result.best_epoch, result.best_val_loss);
  std::printf("wrote %s\n", (out / "model.rfp").string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// predict / evaluate

struct Forecaster {
  std::string name;
  std::optional<Run> run;  // empty: persistence
};

std::vector<Forecaster> load_forecasters(const std::vector<std::string>& dirs, LeadTime lead) {
  std::vector<Forecaster> out;
  std::set<std::string> names;
  for (const auto& d : dirs) {
    Forecaster f{"", load_run(d)};
    if (f.run->config.lead_minutes != minutes(lead))
      throw ValidationError("checkpoint " + d + " was trained for lead " + std::to_string(f.run->config.lead_minutes) +
                            " min, not " + std::to_string(minutes(lead)));
    f.name = std::string(variant_name(f.run->config.variant));
    if (names.count(f.name)) f.name += ":" + fs::path(d).filename().string();
    names.insert(f.name);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<RainGrid> forecast(const Forecaster& f, std::span<const SequenceSample> samples,
                               const PreparedData& data, FrameStore& store) {
  std::vector<RainGrid> out;
  if (!f.run) {
    for (const auto& s : samples) out.push_back(persistence_forecast(store.load(s)));
    return out;
  }
  const auto& cfg = f.run->config;
  if (cfg.rows != data.manifest.rows || cfg.cols != data.manifest.cols)
    throw ValidationError("checkpoint grid does not match the dataset grid");
  const bool mm = cfg.variant == Variant::Multimodal;
  for (auto s : samples) {
    s.multimodal = mm;
    const auto ex = make_example(store.load(s), mm ? &data.manifest.band_stats : nullptr);
    out.push_back(predict(f.run->model, ex).with_time(s.target_time));
  }
  return out;
}

struct SampleFlags {
  std::string data;
  std::vector<std::string> checkpoints;
  std::string split = "test";
  std::string time;
};

std::vector<SequenceSample> pick_samples(const PreparedData& data, const SampleFlags& f, LeadTime lead,
                                         bool multimodal) {
  auto samples = select_samples(data, f.split, lead, multimodal);
  if (!f.time.empty()) {
    const Timestamp t = parse_iso8601(f.time);
    std::erase_if(samples, [&](const SequenceSample& s) { return s.target_time != t; });
    if (samples.empty()) throw ValidationError("no " + f.split + " sample with target time " + f.time);
  }
  if (samples.empty()) throw ValidationError("no " + f.split + " samples for this lead");
  return samples;
}

int cmd_predict(const Globals& g, const SampleFlags& f) {
  const LeadTime lead = need_lead(g);
  if (f.data.empty()) throw ValidationError("--data is required");
  const auto data = read_prepared(f.data);
  std::vector<Forecaster> fc;
  if (g.model == "persistence" || (g.model.empty() && f.checkpoints.empty())) fc.push_back({"persistence", {}});
  else {
    if (f.checkpoints.size() != 1) throw ValidationError("predict takes exactly one --checkpoint");
    fc = load_forecasters(f.checkpoints, lead);
    if (!g.model.empty() && g.model != fc[0].name) throw ValidationError("--model disagrees with the checkpoint");
  }
  const bool mm = fc[0].run && fc[0].run->config.variant == Variant::Multimodal;
  const auto samples = pick_samples(data, f, lead, mm);
  FrameStore store;
  const auto preds = forecast(fc[0], samples, data, store);
  const fs::path out = need_out(g);
  fs::create_directories(out);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto stamp = file_stamp(samples[i].target_time);
    write_grid(out / (stamp + "_" + fc[0].name + ".rfg"), preds[i]);
    write_map(preds[i], out / (stamp + "_" + fc[0].name + ".ppm"));
    write_map(store.radar(samples[i].target.radar), out / (stamp + "_observed.ppm"));
  }
  std::printf("wrote %zu forecasts to %s\n", samples.size(), out.string().c_str());
  return 0;
}

struct EvalFlags {
  std::string aggregation = "pooled";
  bool all_categories = false;
  bool paper_style = false;
  std::size_t neighborhood = 3;
  std::string maps;
};

int cmd_evaluate(const Globals& g, const SampleFlags& f, const EvalFlags& e) {
  const LeadTime lead = need_lead(g);
  if (f.data.empty()) throw ValidationError("--data is required");
  const auto data = read_prepared(f.data);
  auto fc = load_forecasters(f.checkpoints, lead);
  fc.push_back({"persistence", {}});
  bool mm = false;
  for (const auto& x : fc) mm = mm || (x.run && x.run->config.variant == Variant::Multimodal);
  // One sample set for every model, so columns are comparable.
  const auto samples = pick_samples(data, f, lead, mm);

  ScoreOptions so;
  so.aggregation = parse_aggregation(e.aggregation);
  so.neighborhood = e.neighborhood;
  if (e.all_categories) so.categories.assign(kRainCategories.begin(), kRainCategories.end());

  FrameStore store;
  std::vector<RainGrid> obs;
  for (const auto& s : samples) obs.push_back(store.radar(s.target.radar));

  SkillReport report;
  report.dataset_id = fs::path(f.data).filename().string() + "/" + f.split +
                      (f.time.empty() ? "" : "@" + f.time);
  report.aggregation = std::string(aggregation_name(so.aggregation));
  report.seed = data.manifest.seed;
  for (const auto& x : fc) {
    const auto preds = forecast(x, samples, data, store);
    for (const auto& [cat, sc] : score_forecasts(preds, obs, so)) {
      report.set(x.name, minutes(lead), cat, "CSI", sc.csi);
      report.set(x.name, minutes(lead), cat, "FSS", sc.fss);
    }
    if (!e.maps.empty()) {
      fs::create_directories(e.maps);
      for (std::size_t i = 0; i < samples.size(); ++i)
        write_map(preds[i], fs::path(e.maps) / (file_stamp(samples[i].target_time) + "_" + x.name + ".ppm"));
    }
  }
  if (!e.maps.empty())
    for (std::size_t i = 0; i < samples.size(); ++i)
      write_map(obs[i], fs::path(e.maps) / (file_stamp(samples[i].target_time) + "_observed.ppm"));

  if (!g.out.empty()) write_text(g.out, format_report_csv(report, e.paper_style));
  std::printf("%zu %s samples\n%s", samples.size(), f.split.c_str(), format_report_text(report, e.paper_style).c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const Globals& g, const std::vector<std::string>& inputs, bool paper_style, bool csv) {
  if (inputs.empty()) throw ValidationError("report needs at least one report CSV");
  SkillReport merged = parse_report_csv(read_text(inputs.front()));
  for (std::size_t i = 1; i < inputs.size(); ++i) merged.merge(parse_report_csv(read_text(inputs[i])));
  const auto text = csv ? format_report_csv(merged, paper_style) : format_report_text(merged, paper_style);
  if (g.out.empty()) std::fputs(text.c_str(), stdout);
  else write_text(g.out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar and satellite precipitation nowcasting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  Globals g;
  auto global = [&](CLI::App* sub) {
    sub->add_option("--seed", g.seed, "Random seed");
    sub->add_option("--out", g.out, "Output path");
    sub->add_option("--config", g.config, "key=value file with synth./preprocess./model./train. sections")
        ->check(CLI::ExistingFile);
    sub->add_option("--lead", g.lead, "Lead time in minutes")->check(CLI::IsMember({5, 15, 30}));
    sub->add_option("--model", g.model, "Forecaster")->check(CLI::IsMember({"radar", "multimodal", "persistence"}));
  };

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Write a synthetic radar + satellite dataset");
  global(synth);
  synth->add_option("--frames", sf.frames, "Number of 5-minute frames");
  synth->add_option("--outliers", sf.outliers, "Frames that get an implausible 250 mm/h pixel");
  synth->add_option("--sat-lead", sf.sat_lead, "Minutes by which satellite bands anticipate rain");

  PreprocessFlags pf;
  auto* prep = app.add_subcommand("preprocess", "Curate a dataset and fit normalization");
  global(prep);
  prep->add_option("--index", pf.index, "Dataset index.tsv")->check(CLI::ExistingFile);
  prep->add_option("--keep", pf.keep, "Fraction of no-rain targets to keep");
  prep->add_option("--train-range", pf.train_range, "YYYY-MM-DD..YYYY-MM-DD");
  prep->add_option("--val-range", pf.val_range, "YYYY-MM-DD..YYYY-MM-DD");
  prep->add_option("--test-range", pf.test_range, "YYYY-MM-DD..YYYY-MM-DD");

  TrainFlags tf;
  auto* trn = app.add_subcommand("train", "Train a U-Net forecaster");
  global(trn);
  trn->add_option("--data", tf.data, "Preprocessed dataset directory");
  trn->add_option("--epochs", tf.epochs, "Epochs (milestones past the end are dropped)");
  trn->add_option("--lr", tf.lr, "Initial learning rate");
  trn->add_option("--batch-size", tf.batch, "Batch size");
  trn->add_option("--loss", tf.loss, "Loss")->check(CLI::IsMember({"logcosh", "mse"}));
  trn->add_flag("--quiet", tf.quiet, "No per-epoch log");

  SampleFlags pred_f;
  auto* pred = app.add_subcommand("predict", "Write forecasts and rain maps");
  global(pred);
  pred->add_option("--data", pred_f.data, "Preprocessed dataset directory");
  pred->add_option("--checkpoint", pred_f.checkpoints, "Run directory from train");
  pred->add_option("--split", pred_f.split, "Split to forecast");
  pred->add_option("--time", pred_f.time, "Only this target time (ISO 8601)");

  SampleFlags eval_f;
  EvalFlags ef;
  auto* eval = app.add_subcommand("evaluate", "Score checkpoints and persistence on a split");
  global(eval);
  eval->add_option("--data", eval_f.data, "Preprocessed dataset directory");
  eval->add_option("--checkpoint", eval_f.checkpoints, "Run directories from train (repeatable)");
  eval->add_option("--split", eval_f.split, "Split to score");
  eval->add_option("--time", eval_f.time, "Score a single target time (ISO 8601)");
  eval->add_option("--aggregation", ef.aggregation, "pooled or per-image")
      ->check(CLI::IsMember({"pooled", "per-image"}));
  eval->add_flag("--all-categories", ef.all_categories, "Light and moderate too");
  eval->add_flag("--paper-style", ef.paper_style, "Print 0.000 for undefined scores");
  eval->add_option("--neighborhood", ef.neighborhood, "FSS window size (odd)");
  eval->add_option("--maps", ef.maps, "Directory for PPM rain maps");

  std::vector<std::string> report_in;
  bool report_paper = false, report_csv = false;
  auto* rep = app.add_subcommand("report", "Merge and print report CSVs");
  global(rep);
  rep->add_option("inputs", report_in, "Report CSV files")->check(CLI::ExistingFile);
  rep->add_flag("--paper-style", report_paper, "Print 0.000 for undefined scores");
  rep->add_flag("--csv", report_csv, "CSV instead of the aligned table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(g, sf);
    if (*prep) return cmd_preprocess(g, pf);
    if (*trn) return cmd_train(g, tf);
    if (*pred) return cmd_predict(g, pred_f);
    if (*eval) return cmd_evaluate(g, eval_f, ef);
    if (*rep) return cmd_report(g, report_in, report_paper, report_csv);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
