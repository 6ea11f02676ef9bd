#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "nowcast/error.hpp"
#include "nowcast/nn/adam.hpp"
#include "nowcast/nn/checkpoint.hpp"
#include "nowcast/nn/loss.hpp"

namespace nowcast::nn {

std::string_view loss_name(LossKind k) { return k == LossKind::LogCosh ? "logcosh" : "mse"; }

LossKind parse_loss(std::string_view name) {
  if (name == "logcosh") return LossKind::LogCosh;
  if (name == "mse") return LossKind::Mse;
  throw ValidationError("unknown loss '" + std::string(name) + "' (expected logcosh or mse)");
}

namespace {

template <typename T>
void check_same_shape(const Array5<T>& pred, const Array5<T>& target, const char* what) {
  if (pred.dims() != target.dims())
    throw ShapeError(std::string(what) + ": prediction " + to_string(pred.dims()) + " vs target " +
                     to_string(target.dims()));
}

}  // namespace

template <typename T>
LossResult<T> logcosh_loss(const Array5<T>& pred, const Array5<T>& target) {
  check_same_shape(pred, target, "logcosh_loss");
  LossResult<T> r{0.0, Array5<T>(pred.dims())};
  const auto n = static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
    sum += logcosh(d);
    r.grad.data()[i] = static_cast<T>(std::tanh(d) / n);
  }
  r.value = sum / n;
  return r;
}

template <typename T>
LossResult<T> mse_loss(const Array5<T>& pred, const Array5<T>& target) {
  check_same_shape(pred, target, "mse_loss");
  LossResult<T> r{0.0, Array5<T>(pred.dims())};
  const auto n = static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
    sum += d * d;
    r.grad.data()[i] = static_cast<T>(2.0 * d / n);
  }
  r.value = sum / n;
  return r;
}

template LossResult<float> logcosh_loss(const Array5<float>&, const Array5<float>&);
template LossResult<double> logcosh_loss(const Array5<double>&, const Array5<double>&);
template LossResult<float> mse_loss(const Array5<float>&, const Array5<float>&);
template LossResult<double> mse_loss(const Array5<double>&, const Array5<double>&);

template <typename T>
AdamState<T>::AdamState(AdamConfig cfg, const std::vector<std::size_t>& block_sizes) : config(cfg) {
  for (std::size_t n : block_sizes) {
    m.emplace_back(n, 0.0);
    v.emplace_back(n, 0.0);
  }
}

template <typename T>
void adam_step(std::span<ParamBlock<T>> blocks, AdamState<T>& state, double lr) {
  if (blocks.size() != state.m.size()) throw ShapeError("adam_step: block count does not match optimizer state");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.values.size() != blk.grads.size() || blk.values.size() != state.m[b].size())
      throw ShapeError("adam_step: size mismatch in parameter block '" + blk.name + "'");
    for (std::size_t i = 0; i < blk.grads.size(); ++i)
      if (!std::isfinite(static_cast<double>(blk.grads[i])))
        throw ValidationError("non-finite gradient in parameter block '" + blk.name + "' at element " +
                              std::to_string(i));
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& blk = blocks[b];
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < blk.values.size(); ++i) {
      const double g = static_cast<double>(blk.grads[i]);
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      blk.values[i] = static_cast<T>(static_cast<double>(blk.values[i]) - lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<ParamBlock<float>>, AdamState<float>&, double);
template void adam_step(std::span<ParamBlock<double>>, AdamState<double>&, double);

double step_decay_lr(double base_lr, std::span<const int> milestones, double factor, int epoch) {
  double lr = base_lr;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

// ---------------------------------------------------------------------------
// RFP1

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::uint64_t n, const char* what) const {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("truncated RFP1 ") + what, bytes_.size());
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_rfp1(std::span<const NamedTensor> tensors) {
  std::vector<std::uint8_t> out{'R', 'F', 'P', '1', 1};
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::uint64_t count = 1;
    for (auto d : t.shape) count *= d;
    if (count != t.values.size()) throw ShapeError("tensor '" + t.name + "' value count does not match its shape");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, d);
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedTensor> decode_rfp1(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  if (in.str(4, "magic") != "RFP1") throw FormatError("bad magic, expected RFP1", 0);
  const auto version = in.u8("version");
  if (version != 1) throw FormatError("unsupported RFP1 version " + std::to_string(version), 4);
  const auto count = in.u32("tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const auto name_len = in.u32("name length");
    t.name = in.str(name_len, "name");
    const auto rank_at = in.pos();
    const auto rank = in.u32("rank");
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rank_at);
    std::uint64_t elems = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = in.u32("dims");
      t.shape.push_back(d);
      elems *= d;
      if (elems > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension overflow", in.pos() - 4);
    }
    in.need(elems * 4, "values");
    t.values.resize(elems);
    for (auto& v : t.values) v = std::bit_cast<float>(in.u32("values"));
    tensors.push_back(std::move(t));
  }
  if (!in.done()) throw FormatError("trailing bytes after RFP1 payload", in.pos());
  return tensors;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  const auto bytes = encode_rfp1(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_rfp1(bytes);
}

}  // namespace nowcast::nn
