#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/models.hpp"
#include "nowcast/pipeline.hpp"
#include "nowcast/verify.hpp"

namespace nowcast {

inline constexpr std::string_view kToolVersion = "nowcast 0.1.0";

struct PreprocessOptions {
  double keep_fraction = 0.2;
  std::uint64_t seed = 1;
  /// Named half-open date ranges; must not overlap. Empty means one "train"
  /// split covering everything.
  std::map<std::string, DateRange> splits;
  std::vector<LeadTime> leads{kLeadTimes.begin(), kLeadTimes.end()};
};

/// Curated dataset: readable, outlier-free frames plus, per "split.lead",
/// the target times of the samples that survived no-rain subsampling.
/// Subsampling thins targets only; every curated frame stays usable as a
/// model input.
struct PreparedData {
  PreprocessManifest manifest;
  DatasetIndex frames;
  std::map<std::string, std::vector<Timestamp>> targets;
};

/// Throws ValidationError when split ranges overlap.
void check_splits(const std::map<std::string, DateRange>& splits);

PreparedData preprocess(const DatasetIndex& index, const PreprocessOptions& options, FrameStore& store);

/// Layout: manifest.txt, frames.tsv, targets/<split>.<lead>.txt
void write_prepared(const PreparedData& data, const std::filesystem::path& dir);
/// Throws IoError when the manifest or frame index is missing.
PreparedData read_prepared(const std::filesystem::path& dir);

/// Samples of one split at one lead. Multimodal samples require satellite
/// data on all inputs.
std::vector<SequenceSample> select_samples(const PreparedData& data, std::string_view split, LeadTime lead,
                                           bool multimodal);

std::vector<TrainingExample> make_examples(std::span<const SequenceSample> samples, FrameStore& store,
                                           const BandStats* stats);

// ---------------------------------------------------------------------------
// Scoring

enum class Aggregation { Pooled, PerImage };

std::string_view aggregation_name(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

struct ScoreOptions {
  std::vector<PrecipCategory> categories{PrecipCategory::Heavy, PrecipCategory::Violent};
  Aggregation aggregation = Aggregation::Pooled;
  std::size_t neighborhood = 3;
};

struct CategoryScores {
  std::optional<double> csi;
  std::optional<double> fss;
};

/// CSI from pooled contingency counts (or the mean of per-image CSI);
/// FSS as the mean over images where it is defined, in input order.
std::map<PrecipCategory, CategoryScores> score_forecasts(std::span<const RainGrid> predictions,
                                                         std::span<const RainGrid> observations,
                                                         const ScoreOptions& options);

struct SkillReport {
  std::string dataset_id;
  std::string aggregation = "pooled";
  std::uint64_t seed = 0;
  std::vector<std::string> models;

  struct Row {
    int lead = 0;
    PrecipCategory category = PrecipCategory::Heavy;
    std::string metric;  // "CSI" or "FSS"
    std::vector<std::optional<double>> scores;  // parallel to models
  };
  std::vector<Row> rows;

  void set(const std::string& model, int lead, PrecipCategory category, const std::string& metric,
           std::optional<double> score);
  std::optional<double> get(const std::string& model, int lead, PrecipCategory category,
                            const std::string& metric) const;
  /// Adds every score of `other`. Metadata must agree.
  void merge(const SkillReport& other);
};

/// Aligned table, rows (lead, category, metric), one column per model.
/// Undefined scores print as n/a, or 0.000 when paper_style is set.
std::string format_report_text(const SkillReport& report, bool paper_style = false);
std::string format_report_csv(const SkillReport& report, bool paper_style = false);
SkillReport parse_report_csv(std::string_view text);

/// Binary PPM (P6) with the category palette; missing cells are gray.
std::vector<std::uint8_t> render_map(const RainGrid& grid);
void write_map(const RainGrid& grid, const std::filesystem::path& path);

}  // namespace nowcast
