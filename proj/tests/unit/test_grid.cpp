#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/grid.hpp"

using namespace nowcast;

TEST_SUITE("grid") {

TEST_CASE("timestamps round-trip through ISO-8601") {
  const auto t = parse_iso8601("2021-07-14T13:05Z");
  CHECK(format_iso8601(t) == "2021-07-14T13:05Z");
  CHECK(parse_iso8601("2021-07-14T13:05") == t);
  CHECK(parse_iso8601("2021-07-14T13:05:00Z") == t);
  CHECK_THROWS_AS(parse_iso8601("2021-07-14 13:05"), ValidationError);
  CHECK_THROWS_AS(parse_iso8601("2021-02-30T00:00"), ValidationError);
}

TEST_CASE("rain grid validates its values") {
  CHECK_NOTHROW(RainGrid(2, 2, {0.0f, 1.5f, kMissing, 250.0f}));
  CHECK_THROWS_AS(RainGrid(2, 2, {0.0f, 1.0f, 2.0f}), ValidationError);
  CHECK_THROWS_AS(RainGrid(0, 2, {}), ValidationError);
  CHECK_THROWS_AS(RainGrid(1, 2, {0.0f, -1.0f}), ValidationError);
  CHECK_THROWS_AS(RainGrid(1, 2, {0.0f, std::numeric_limits<float>::quiet_NaN()}), ValidationError);
}

TEST_CASE("categories follow the half-open bounds") {
  CHECK(categorize(0.0) == PrecipCategory::NoRain);
  CHECK(categorize(1e-30) == PrecipCategory::Light);
  CHECK(categorize(2.4999) == PrecipCategory::Light);
  CHECK(categorize(2.5) == PrecipCategory::Moderate);
  CHECK(categorize(7.5) == PrecipCategory::Heavy);
  CHECK(categorize(49.99) == PrecipCategory::Heavy);
  CHECK(categorize(50.0) == PrecipCategory::Violent);
  CHECK(categorize(200.0) == PrecipCategory::Violent);
  CHECK(categorize(-999.0) == PrecipCategory::Missing);
  CHECK_THROWS_AS(categorize(-1.0), RangeError);

  CHECK(category_bounds(PrecipCategory::Heavy).contains(7.5));
  CHECK_FALSE(category_bounds(PrecipCategory::Heavy).contains(50.0));
  CHECK(category_bounds(PrecipCategory::Violent).contains(200.0));
  for (auto c : kRainCategories) CHECK(parse_category(category_name(c)) == c);
  CHECK_THROWS_AS(parse_category("drizzle"), ValidationError);
}

TEST_CASE("every positive rate up to 200 lands in exactly one rain category") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int i = 0; i < 2000; ++i) {
    const double r = u(rng);
    if (r == 0.0) continue;
    int hits = 0;
    for (auto c : kRainCategories) hits += category_bounds(c).contains(r);
    CHECK(hits == 1);
  }
}

TEST_CASE("grid stats skip missing cells") {
  const RainGrid g(2, 2, {kMissing, 0.0f, 3.0f, 12.0f});
  const auto s = grid_stats(g);
  CHECK(s.max_rate == 12.0);
  CHECK(s.missing_fraction == doctest::Approx(0.25));
  CHECK(s.rainy_fraction == doctest::Approx(0.5));
}

TEST_CASE("satellite scenes need 11 equal bands") {
  std::vector<Field> bands(kSatBands, Field(3, 4));
  CHECK_NOTHROW(SatScene{bands});
  bands.pop_back();
  CHECK_THROWS_AS(SatScene{bands}, ValidationError);
  bands.emplace_back(3, 5);
  CHECK_THROWS_AS(SatScene{bands}, ValidationError);
}

TEST_CASE("RFG1 encoding is byte exact") {
  GridPayload p;
  p.rows = 1;
  p.cols = 2;
  p.timestamp_minutes = 60;
  p.values = {1.0f, kMissing};
  const auto bytes = encode_rfg1(p);
  REQUIRE(bytes.size() == kRfg1HeaderSize + 8);
  const std::vector<std::uint8_t> header{'R', 'F', 'G', '1', 1, 0, 1, 0, 1, 0, 0, 0, 2, 0, 0, 0, 60, 0, 0, 0, 0, 0, 0, 0};
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
  // 1.0f and -999.0f little-endian
  const std::vector<std::uint8_t> body{0x00, 0x00, 0x80, 0x3f, 0x00, 0xc0, 0x79, 0xc4};
  CHECK(std::equal(body.begin(), body.end(), bytes.begin() + kRfg1HeaderSize));
  CHECK(decode_rfg1(bytes) == p);
}

TEST_CASE("RFG1 random payloads round-trip") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    GridPayload p;
    p.bands = static_cast<std::uint16_t>(1 + rng() % 3);
    p.rows = static_cast<std::uint32_t>(1 + rng() % 9);
    p.cols = static_cast<std::uint32_t>(1 + rng() % 9);
    p.timestamp_minutes = static_cast<std::int64_t>(rng() % 100000000) - 50000000;
    for (std::size_t k = 0; k < std::size_t{p.bands} * p.rows * p.cols; ++k)
      p.values.push_back(rng() % 5 == 0 ? kMissing : static_cast<float>(rng() % 20000) / 100.0f);
    const auto bytes = encode_rfg1(p);
    CHECK(decode_rfg1(bytes) == p);
    CHECK(encode_rfg1(decode_rfg1(bytes)) == bytes);
  }
}

TEST_CASE("RFG1 decoding reports where it failed") {
  GridPayload p;
  p.rows = 2;
  p.cols = 2;
  p.values = {0, 1, 2, 3};
  auto bytes = encode_rfg1(p);

  auto offset_of = [](const std::vector<std::uint8_t>& b) -> std::uint64_t {
    try {
      decode_rfg1(b);
    } catch (const FormatError& e) {
      return e.offset();
    }
    FAIL("expected a FormatError");
    return 0;
  };

  auto bad = bytes;
  bad[0] = 'X';
  CHECK(offset_of(bad) == 0);
  bad = bytes;
  bad[4] = 2;
  CHECK(offset_of(bad) == 4);
  bad = bytes;
  bad[5] = 1;
  CHECK(offset_of(bad) == 5);
  bad = bytes;
  bad[8] = 0;
  CHECK(offset_of(bad) == 8);
  bad.assign(bytes.begin(), bytes.begin() + 10);
  CHECK(offset_of(bad) == 10);
  bad.assign(bytes.begin(), bytes.end() - 1);
  CHECK(offset_of(bad) == bytes.size() - 1);
  bad = bytes;
  bad.push_back(0);
  CHECK(offset_of(bad) == bytes.size());
}

TEST_CASE("grid files and index round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "nowcast_grid_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "r");
  const auto t = parse_iso8601("2021-07-14T12:00");
  const RainGrid g(2, 3, {0, 1, 2, kMissing, 4, 5}, t);
  write_grid(dir / "r" / "a.rfg", g);
  CHECK(read_grid(dir / "r" / "a.rfg") == g);
  CHECK_THROWS_AS(read_grid(dir / "nope.rfg"), IoError);

  const DatasetIndex index{{t, dir / "r" / "a.rfg", std::nullopt}, {t + kFrameStep, dir / "r" / "a.rfg", dir / "s.rfg"}};
  write_index(dir / "index.tsv", index);
  CHECK(read_index(dir / "index.tsv") == index);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
