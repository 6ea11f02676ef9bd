#include "nowcast/verify.hpp"

#include <algorithm>
#include <cmath>

#include "nowcast/error.hpp"

namespace nowcast {

namespace {

void require_same_shape(const RainGrid& a, const RainGrid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("grid shapes differ: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

ContingencyTable contingency(const RainGrid& pred, const RainGrid& obs, PrecipCategory category) {
  require_same_shape(pred, obs);
  // Same half-open test as the binary probability, so CSI and FSS agree on
  // what an event is.
  const bool rain = category != PrecipCategory::NoRain && category != PrecipCategory::Missing;
  const RateBounds bounds = rain ? category_bounds(category) : RateBounds{};
  auto hit = [&](float v) { return rain ? !is_missing(v) && bounds.contains(v) : categorize(v) == category; };
  ContingencyTable t;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const float o = obs.values()[i];
    if (is_missing(o)) continue;
    const bool po = hit(o);
    const bool pp = hit(pred.values()[i]);
    if (pp && po) ++t.tp;
    else if (pp) ++t.fp;
    else if (po) ++t.fn;
    else ++t.tn;
  }
  return t;
}

std::optional<double> csi(const ContingencyTable& t) {
  const auto events = t.tp + t.fp + t.fn;
  if (events == 0) return std::nullopt;
  return static_cast<double>(t.tp) / static_cast<double>(events);
}

void FssParams::validate() const {
  if (n == 0 || n % 2 == 0) throw ValidationError("neighborhood size must be odd and positive, got " + std::to_string(n));
  if (!(bounds.lower < bounds.upper)) throw ValidationError("category bounds need lower < upper");
}

BinaryField binary_probability(const RainGrid& field, RateBounds bounds) {
  if (!(bounds.lower < bounds.upper)) throw ValidationError("category bounds need lower < upper");
  BinaryField bp{field.rows(), field.cols(), std::vector<std::uint8_t>(field.size()),
                 std::vector<std::uint8_t>(field.size())};
  for (std::size_t i = 0; i < field.size(); ++i) {
    const float v = field.values()[i];
    bp.valid[i] = !is_missing(v);
    bp.value[i] = bp.valid[i] && bounds.contains(v);
  }
  return bp;
}

ProbabilityField neighborhood_probability(const BinaryField& bp, std::size_t n) {
  if (n == 0 || n % 2 == 0) throw ValidationError("neighborhood size must be odd and positive, got " + std::to_string(n));
  const std::size_t R = bp.rows, C = bp.cols, W = C + 1;
  // Integer tables keep the window sums exact.
  std::vector<std::int64_t> ones((R + 1) * W, 0), valid((R + 1) * W, 0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      const std::size_t s = (r + 1) * W + (c + 1);
      ones[s] = (bp.valid[i] && bp.value[i]) + ones[s - 1] + ones[s - W] - ones[s - W - 1];
      valid[s] = bp.valid[i] + valid[s - 1] + valid[s - W] - valid[s - W - 1];
    }
  auto box = [&](const std::vector<std::int64_t>& t, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
    return t[r1 * W + c1] - t[r0 * W + c1] - t[r1 * W + c0] + t[r0 * W + c0];
  };
  const std::size_t h = n / 2;
  ProbabilityField np{R, C, std::vector<double>(R * C, 0.0), bp.valid};
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t r0 = r > h ? r - h : 0, r1 = std::min(R, r + h + 1);
    for (std::size_t c = 0; c < C; ++c) {
      if (!bp.valid[r * C + c]) continue;
      const std::size_t c0 = c > h ? c - h : 0, c1 = std::min(C, c + h + 1);
      np.value[r * C + c] =
          static_cast<double>(box(ones, r0, c0, r1, c1)) / static_cast<double>(box(valid, r0, c0, r1, c1));
    }
  }
  return np;
}

namespace {

std::optional<double> fss_from_np(const ProbabilityField& p, const ProbabilityField& o) {
  double fbs = 0.0, wfbs = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    if (!p.valid[i]) continue;
    const double a = p.value[i], b = o.value[i];
    fbs += (a - b) * (a - b);
    wfbs += a * a + b * b;
    ++count;
  }
  if (count == 0 || wfbs == 0.0) return std::nullopt;
  return 1.0 - (fbs / static_cast<double>(count)) / (wfbs / static_cast<double>(count));
}

void joint_mask(BinaryField& a, BinaryField& b) {
  for (std::size_t i = 0; i < a.valid.size(); ++i) {
    const std::uint8_t v = a.valid[i] & b.valid[i];
    a.valid[i] = b.valid[i] = v;
    a.value[i] &= v;
    b.value[i] &= v;
  }
}

}  // namespace

std::optional<double> fss(const RainGrid& pred, const RainGrid& obs, const FssParams& params) {
  params.validate();
  require_same_shape(pred, obs);
  auto bp = binary_probability(pred, params.bounds);
  auto bo = binary_probability(obs, params.bounds);
  joint_mask(bp, bo);
  return fss_from_np(neighborhood_probability(bp, params.n), neighborhood_probability(bo, params.n));
}

std::optional<double> fss_bruteforce(const RainGrid& pred, const RainGrid& obs, const FssParams& params) {
  params.validate();
  require_same_shape(pred, obs);
  const auto R = static_cast<long>(obs.rows()), C = static_cast<long>(obs.cols());
  const long h = static_cast<long>(params.n / 2);
  auto valid = [&](long r, long c) { return !is_missing(pred.at(r, c)) && !is_missing(obs.at(r, c)); };
  auto in_cat = [&](float v) { return params.bounds.contains(v) ? 1.0 : 0.0; };
  double fbs = 0.0, wfbs = 0.0;
  std::size_t count = 0;
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) {
      if (!valid(r, c)) continue;
      double sp = 0.0, so = 0.0, j = 0.0;
      for (long rr = r - h; rr <= r + h; ++rr)
        for (long cc = c - h; cc <= c + h; ++cc) {
          if (rr < 0 || rr >= R || cc < 0 || cc >= C || !valid(rr, cc)) continue;
          sp += in_cat(pred.at(rr, cc));
          so += in_cat(obs.at(rr, cc));
          j += 1.0;
        }
      const double a = sp / j, b = so / j;
      fbs += (a - b) * (a - b);
      wfbs += a * a + b * b;
      ++count;
    }
  if (count == 0 || wfbs == 0.0) return std::nullopt;
  return 1.0 - (fbs / static_cast<double>(count)) / (wfbs / static_cast<double>(count));
}

Histogram make_histogram(std::span<const float> values, double lo, double hi, std::size_t bins) {
  if (values.empty()) throw ValidationError("cannot build a histogram from zero values");
  if (!(lo < hi) || bins == 0) throw ValidationError("histogram needs lo < hi and at least one bin");
  Histogram h{lo, hi, std::vector<double>(bins, 0.0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (float v : values) {
    const double k = std::floor((v - lo) / width);
    const auto bin = static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(bins - 1)));
    h.mass[bin] += 1.0;
  }
  for (double& m : h.mass) m /= static_cast<double>(values.size());
  return h;
}

void HistogramPair::validate() const {
  if (p.mass.size() != q.mass.size() || p.lo != q.lo || p.hi != q.hi)
    throw ValidationError("histograms must share bin edges");
  for (const auto* h : {&p, &q}) {
    double s = 0.0;
    for (double m : h->mass) {
      if (!(m >= 0.0)) throw ValidationError("histogram mass must be non-negative");
      s += m;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ValidationError("histogram does not sum to 1");
  }
}

double ks_statistic(const HistogramPair& h) {
  h.validate();
  double cp = 0.0, cq = 0.0, d = 0.0;
  for (std::size_t i = 0; i < h.p.mass.size(); ++i) {
    cp += h.p.mass[i];
    cq += h.q.mass[i];
    d = std::max(d, std::abs(cp - cq));
  }
  return std::min(d, 1.0);
}

double kl_divergence(const HistogramPair& h, double eps) {
  if (!(eps > 0.0)) throw ValidationError("KL smoothing epsilon must be positive");
  h.validate();
  const auto n = static_cast<double>(h.p.mass.size());
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < h.p.mass.size(); ++i) {
    sp += h.p.mass[i];
    sq += h.q.mass[i];
  }
  sp += n * eps;
  sq += n * eps;
  double kl = 0.0;
  for (std::size_t i = 0; i < h.p.mass.size(); ++i) {
    const double a = (h.p.mass[i] + eps) / sp, b = (h.q.mass[i] + eps) / sq;
    kl += a * std::log(a / b);
  }
  return std::max(kl, 0.0);
}

std::vector<std::optional<Histogram>> band_histograms(const SatScene& scene, const RainGrid& radar,
                                                      PrecipCategory category, const BandStats& edges) {
  if (scene.rows() != radar.rows() || scene.cols() != radar.cols())
    throw ShapeError("satellite scene must be resampled to the radar grid first");
  if (!edges.fitted()) throw ValidationError("band statistics have not been fitted");
  std::vector<std::optional<Histogram>> out(kSatBands);
  for (std::size_t b = 0; b < kSatBands; ++b) {
    std::vector<float> picked;
    for (std::size_t i = 0; i < radar.size(); ++i)
      if (categorize(radar.values()[i]) == category) picked.push_back(scene.band(b).values[i]);
    if (picked.empty()) continue;
    double lo = edges.min[b], hi = edges.max[b];
    if (!(lo < hi)) hi = lo + 1.0;
    out[b] = make_histogram(picked, lo, hi);
  }
  return out;
}

std::vector<BandComparison> compare_events(const SatScene& scene_a, const RainGrid& radar_a, const SatScene& scene_b,
                                           const RainGrid& radar_b, PrecipCategory category, const BandStats& edges) {
  const auto ha = band_histograms(scene_a, radar_a, category, edges);
  const auto hb = band_histograms(scene_b, radar_b, category, edges);
  std::size_t na = 0, nb = 0;
  for (auto v : radar_a.values()) na += categorize(v) == category;
  for (auto v : radar_b.values()) nb += categorize(v) == category;
  std::vector<BandComparison> out;
  for (std::size_t b = 0; b < kSatBands; ++b) {
    BandComparison cmp{b, na, nb, std::nullopt, std::nullopt};
    if (ha[b] && hb[b]) {
      const HistogramPair pair{*ha[b], *hb[b]};
      cmp.ks = ks_statistic(pair);
      cmp.kl = kl_divergence(pair);
    }
    out.push_back(cmp);
  }
  return out;
}

}  // namespace nowcast
