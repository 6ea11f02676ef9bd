#include <doctest.h>

#include <cmath>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/pipeline.hpp"

using namespace nowcast;

namespace {

Timestamp at(int minute) { return parse_iso8601("2021-07-14T00:00") + std::chrono::minutes{minute}; }

SatScene constant_scene(float v, std::size_t rows = 3, std::size_t cols = 3) {
  return SatScene(std::vector<Field>(kSatBands, Field(rows, cols, v)));
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("radar normalization matches high-precision reference values") {
  CHECK(normalize_rate(0.0) == doctest::Approx(0.13057879143873863992).epsilon(1e-15));
  CHECK(normalize_rate(37.4) == doctest::Approx(0.6920837504300079079).epsilon(1e-15));
  CHECK(std::abs(denormalize_rate(normalize_rate(37.4)) - 37.4) < 1e-12);
  CHECK(normalize_rate(-999.0) == 0.0);
  CHECK(std::abs(normalize_rate(200.0) - 1.0) < 1e-12);
  CHECK(denormalize_rate(0.0) == 0.0);  // 202^0 - 2 < 0 is clamped
}

TEST_CASE("radar normalization rejects out-of-domain values") {
  CHECK_THROWS_AS(normalize_rate(200.5), RangeError);
  CHECK_THROWS_AS(normalize_rate(-1.0), RangeError);
  CHECK_THROWS_AS(denormalize_rate(1.0001), RangeError);
  CHECK_THROWS_AS(denormalize_rate(-0.01), RangeError);
}

TEST_CASE("normalization is monotone and round-trips") {
  double prev = -1.0;
  for (int i = 0; i <= 2000; ++i) {
    const double x = 0.1 * i;
    const double n = normalize_rate(x);
    CHECK(n > prev);
    CHECK(n >= 0.0);
    CHECK(n <= 1.0);
    CHECK(std::abs(denormalize_rate(n) - x) < 1e-9);
    prev = n;
  }
}

TEST_CASE("grid normalization maps missing to zero") {
  const RainGrid g(1, 3, {kMissing, 0.0f, 200.0f});
  const Field n = normalize_radar(g);
  CHECK(n.values[0] == 0.0f);
  CHECK(n.values[2] == doctest::Approx(1.0));
  const RainGrid back = denormalize_radar(n);
  CHECK(back.values()[0] == 0.0f);
  CHECK(back.values()[2] == doctest::Approx(200.0).epsilon(1e-5));
}

TEST_CASE("lead times and input windows") {
  CHECK(lead_from_minutes(15) == LeadTime::Min15);
  CHECK_THROWS_AS(lead_from_minutes(10), ValidationError);
  const auto times = input_times(at(60), LeadTime::Min30);
  CHECK(times.front() == at(5));
  CHECK(times.back() == at(30));
  for (std::size_t i = 1; i < times.size(); ++i) CHECK(times[i] - times[i - 1] == kFrameStep);
}

TEST_CASE("band statistics and min-max scaling") {
  std::vector<SatScene> train{constant_scene(2.0f), constant_scene(6.0f)};
  const auto stats = fit_band_stats(train);
  CHECK(stats.scenes == 2);
  CHECK(stats.min[4] == 2.0);
  CHECK(stats.max[4] == 6.0);

  const auto norm = normalize_satellite(constant_scene(3.0f), stats);
  CHECK(norm.band(0).values[0] == doctest::Approx(0.25));
  // Values outside the training range are clamped.
  CHECK(normalize_satellite(constant_scene(10.0f), stats).band(3).values[0] == 1.0f);
  CHECK(normalize_satellite(constant_scene(-10.0f), stats).band(3).values[0] == 0.0f);

  const auto flat = fit_band_stats(std::vector<SatScene>{constant_scene(5.0f)});
  CHECK(flat.constant(7));
  CHECK(normalize_satellite(constant_scene(5.0f), flat).band(7).values[4] == 0.0f);

  CHECK_THROWS_AS(normalize_satellite(constant_scene(1.0f), BandStats{}), ValidationError);
  CHECK_THROWS_AS(fit_band_stats(std::vector<SatScene>{}), ValidationError);

  const auto merged = merge_band_stats(fit_band_stats(std::vector<SatScene>{constant_scene(2.0f)}),
                                       fit_band_stats(std::vector<SatScene>{constant_scene(6.0f)}));
  CHECK(merged.min == stats.min);
  CHECK(merged.max == stats.max);
}

TEST_CASE("normalized satellite values stay in [0, 1]") {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> noise(250.0f, 20.0f);
  std::vector<SatScene> scenes;
  for (int s = 0; s < 4; ++s) {
    std::vector<Field> bands;
    for (std::size_t b = 0; b < kSatBands; ++b) {
      Field f(5, 5);
      for (auto& v : f.values) v = noise(rng);
      bands.push_back(f);
    }
    scenes.emplace_back(bands);
  }
  const auto stats = fit_band_stats(std::span<const SatScene>(scenes).first(2));
  for (const auto& s : scenes) {
    const auto norm = normalize_satellite(s, stats);
    for (const auto& band : norm.bands())
      for (float v : band.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
  }
}

TEST_CASE("Lanczos upsampling of a checkerboard matches direct 2D summation") {
  const Field src(2, 2, {0.0f, 1.0f, 1.0f, 0.0f});
  const double expected[4][4] = {
      {-0.227609641335000, 0.150638204806952, 0.849361795193048, 1.227609641335000},
      {0.150638204806951, 0.332253921599268, 0.667746078400732, 0.849361795193049},
      {0.849361795193048, 0.667746078400733, 0.332253921599268, 0.150638204806952},
      {1.227609641335000, 0.849361795193049, 0.150638204806951, -0.227609641335000},
  };
  const Field out = resample_lanczos(src, 4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(out.at(r, c) == doctest::Approx(expected[r][c]).epsilon(1e-6));
}

TEST_CASE("Lanczos preserves constants and identity size") {
  const Field flat(7, 5, 3.25f);
  for (auto [r, c] : {std::pair{14, 10}, {3, 2}, {7, 5}, {64, 64}}) {
    const Field out = resample_lanczos(flat, r, c);
    CHECK(out.rows == static_cast<std::size_t>(r));
    for (float v : out.values) CHECK(v == doctest::Approx(3.25).epsilon(1e-6));
  }
  Field ramp(4, 6);
  for (std::size_t i = 0; i < ramp.values.size(); ++i) ramp.values[i] = static_cast<float>(i * i % 7);
  const Field same = resample_lanczos(ramp, 4, 6);
  for (std::size_t i = 0; i < ramp.values.size(); ++i) CHECK(same.values[i] == doctest::Approx(ramp.values[i]));
  CHECK_THROWS_AS(resample_lanczos(ramp, 0, 3), ValidationError);
  CHECK_THROWS_AS(resample_lanczos(Field(1, 4), 3, 3), ValidationError);
}

TEST_CASE("outlier filter drops whole images and records unreadable files") {
  DatasetIndex index;
  for (int i = 0; i < 5; ++i) index.push_back({at(5 * i), "r" + std::to_string(i), std::nullopt});
  const RadarProbe probe = [](const IndexRecord& r) -> std::optional<GridStats> {
    if (r.radar == "r1") return GridStats{250.0, 0.0, 1.0};
    if (r.radar == "r3") return std::nullopt;
    return GridStats{r.radar == "r4" ? 200.0 : 10.0, 0.0, 0.5};
  };
  const auto res = filter_outliers(index, probe);
  CHECK(res.kept.size() == 3);
  CHECK(res.report.removed == 1);
  CHECK(res.report.unreadable == 1);
  CHECK(res.report.unreadable_times == std::vector<Timestamp>{at(15)});
  CHECK(res.report.removed_fraction() == doctest::Approx(0.2));
  CHECK(res.kept.back().radar == "r4");  // 200 itself is plausible
}

TEST_CASE("no-rain subsampling is seeded, order independent and near the keep fraction") {
  DatasetIndex index;
  for (int i = 0; i < 10000; ++i) index.push_back({at(5 * i), "r", std::nullopt});
  const RadarProbe dry = [](const IndexRecord&) { return GridStats{0.0, 0.0, 0.0}; };
  const auto a = subsample_no_rain(index, 0.2, 42, dry);
  CHECK(a.no_rain_total == 10000);
  // three binomial standard deviations around 2000
  CHECK(a.no_rain_kept >= 1880);
  CHECK(a.no_rain_kept <= 2120);

  DatasetIndex reversed(index.rbegin(), index.rend());
  const auto b = subsample_no_rain(reversed, 0.2, 42, dry);
  CHECK(DatasetIndex(b.kept.rbegin(), b.kept.rend()) == a.kept);
  CHECK(subsample_no_rain(index, 0.2, 43, dry).kept != a.kept);

  CHECK(subsample_no_rain(index, 1.0, 1, dry).kept.size() == index.size());
  CHECK(subsample_no_rain(index, 0.0, 1, dry).kept.empty());
  const RadarProbe wet = [](const IndexRecord&) { return GridStats{5.0, 0.0, 0.3}; };
  CHECK(subsample_no_rain(index, 0.0, 1, wet).kept.size() == index.size());
  CHECK_THROWS_AS(subsample_no_rain(index, 1.5, 1, dry), ValidationError);
}

TEST_CASE("sequences need every input frame") {
  DatasetIndex index;
  for (int i = 0; i < 20; ++i) {
    if (i == 12) continue;  // gap
    index.push_back({at(5 * i), "r" + std::to_string(i), i == 3 ? std::nullopt : std::optional<std::filesystem::path>("s")});
  }
  const auto radar = build_sequences(index, LeadTime::Min5, false);
  // targets 6..19 except those whose window or target touches frame 12
  for (const auto& s : radar) {
    CHECK(s.inputs.back().time == s.target_time - std::chrono::minutes{5});
    CHECK(s.target.time == s.target_time);
    for (const auto& in : s.inputs) CHECK(in.time != at(60));
  }
  CHECK(radar.size() == 7);  // 6..11 and 19
  const auto multi = build_sequences(index, LeadTime::Min5, true);
  CHECK(multi.size() == 3);  // frame 3 lacks satellite, so targets 6..9 drop out
  // inputs t-11..t-6: targets 11 and 13..17
  CHECK(build_sequences(index, LeadTime::Min30, false).size() == 6);
}

TEST_CASE("date ranges parse dates and timestamps") {
  const auto r = parse_date_range("2018-06-01..2019-08-31");
  CHECK(r.begin == parse_iso8601("2018-06-01T00:00"));
  CHECK(r.end == parse_iso8601("2019-09-01T00:00"));
  CHECK(r.contains(parse_iso8601("2019-08-31T23:55")));
  CHECK_FALSE(r.contains(r.end));
  CHECK(parse_date_range(format_date_range(r)).begin == r.begin);
  CHECK_THROWS_AS(parse_date_range("2019-01-01"), ValidationError);
  CHECK_THROWS_AS(parse_date_range("2019-01-02..2019-01-01"), ValidationError);
  CHECK(r.overlaps(parse_date_range("2019-08-31..2020-01-01")));
  CHECK_FALSE(r.overlaps(parse_date_range("2019-09-01..2020-01-01")));
}

TEST_CASE("manifest round-trips") {
  PreprocessManifest m;
  m.tool_version = "test";
  m.seed = 9;
  m.keep_fraction = 0.2;
  m.outliers.total = 10;
  m.outliers.removed = 1;
  m.outliers.unreadable = 1;
  m.outliers.unreadable_times = {at(5)};
  m.splits["train"] = parse_date_range("2021-06-01..2021-06-02");
  m.band_stats.scenes = 3;
  m.band_stats.min.fill(-1.5);
  m.band_stats.max.fill(300.25);
  m.sample_counts["train.5"] = 12;
  m.rows = m.cols = 64;
  const auto text = format_manifest(m);
  CHECK(text.find("seed=9") != std::string::npos);
  CHECK(text.find("outliers_removed_fraction=0.10000000000000001") != std::string::npos);
  CHECK(format_manifest(parse_manifest(text)) == text);
  CHECK_THROWS_AS(parse_manifest("bogus=1\n"), ValidationError);
}

}  // TEST_SUITE
