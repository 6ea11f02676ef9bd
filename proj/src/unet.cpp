#include "nowcast/unet.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "nowcast/error.hpp"
#include "nowcast/nn/gradcheck.hpp"

namespace nowcast {

std::string_view variant_name(Variant v) { return v == Variant::RadarOnly ? "radar" : "multimodal"; }

Variant parse_variant(std::string_view name) {
  if (name == "radar") return Variant::RadarOnly;
  if (name == "multimodal") return Variant::Multimodal;
  throw ValidationError("unknown model variant '" + std::string(name) + "' (expected radar or multimodal)");
}

nn::Window3 ModelConfig::pool_window() const {
  return variant == Variant::RadarOnly ? nn::Window3{1, 2, 2} : nn::Window3{2, 2, 2};
}

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

std::size_t ModelConfig::padded_rows() const {
  return reflect_pad ? round_up(rows, std::size_t{1} << (levels - 1)) : rows;
}

std::size_t ModelConfig::padded_cols() const {
  return reflect_pad ? round_up(cols, std::size_t{1} << (levels - 1)) : cols;
}

void ModelConfig::validate() const {
  if (levels < 2) throw ValidationError("levels must be >= 2, got " + std::to_string(levels));
  if (base_channels < 1) throw ValidationError("base_channels must be >= 1");
  if (input_channels < 1) throw ValidationError("input_channels must be >= 1");
  if (time_steps < 1) throw ValidationError("time_steps must be >= 1");
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0)
    throw ValidationError("temporal_kernel must be odd, got " + std::to_string(temporal_kernel));
  if (lead_minutes != 5 && lead_minutes != 15 && lead_minutes != 30)
    throw ValidationError("lead must be 5, 15 or 30 minutes, got " + std::to_string(lead_minutes));
  const std::size_t div = std::size_t{1} << (levels - 1);
  if (rows == 0 || cols == 0) throw ValidationError("grid dims must be >= 1");
  if (!reflect_pad) {
    if (rows % div != 0)
      throw ValidationError("rows=" + std::to_string(rows) + " is not divisible by 2^(levels-1)=" + std::to_string(div));
    if (cols % div != 0)
      throw ValidationError("cols=" + std::to_string(cols) + " is not divisible by 2^(levels-1)=" + std::to_string(div));
  } else if (rows < 2 || cols < 2) {
    throw ValidationError("reflect padding needs rows and cols >= 2");
  }
}

ModelConfig ModelConfig::reference(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.input_channels = v == Variant::RadarOnly ? 1 : 12;
  c.temporal_kernel = v == Variant::RadarOnly ? 1 : 3;
  return c;
}

ModelConfig ModelConfig::desk(Variant v) {
  ModelConfig c = reference(v);
  c.rows = c.cols = 64;
  c.levels = 3;
  c.base_channels = 4;
  return c;
}

std::string format_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os << "variant=" << variant_name(c.variant) << '\n'
     << "input_channels=" << c.input_channels << '\n'
     << "levels=" << c.levels << '\n'
     << "base_channels=" << c.base_channels << '\n'
     << "rows=" << c.rows << '\n'
     << "cols=" << c.cols << '\n'
     << "time_steps=" << c.time_steps << '\n'
     << "temporal_kernel=" << c.temporal_kernel << '\n'
     << "lead=" << c.lead_minutes << '\n'
     << "reflect_pad=" << (c.reflect_pad ? 1 : 0) << '\n';
  return os.str();
}

ModelConfig parse_model_config(std::string_view text) {
  ModelConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("model config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    auto num = [&] { return static_cast<std::size_t>(std::stoull(val)); };
    try {
      if (key == "variant") c.variant = parse_variant(val);
      else if (key == "input_channels") c.input_channels = num();
      else if (key == "levels") c.levels = num();
      else if (key == "base_channels") c.base_channels = num();
      else if (key == "rows") c.rows = num();
      else if (key == "cols") c.cols = num();
      else if (key == "time_steps") c.time_steps = num();
      else if (key == "temporal_kernel") c.temporal_kernel = num();
      else if (key == "lead") c.lead_minutes = std::stoi(val);
      else if (key == "reflect_pad") c.reflect_pad = val == "1" || val == "true";
      else throw ValidationError("unknown model config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ValidationError("bad value for model config key '" + key + "': " + val);
    }
  }
  c.validate();
  return c;
}

template <typename T>
UNet3D<T>::UNet3D(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t L = config_.levels;
  const std::size_t kt = config_.temporal_kernel;
  const std::size_t pt = (kt - 1) / 2;
  auto add = [&](std::string name, std::size_t in, std::size_t out, std::size_t t, std::size_t pad, std::size_t k) {
    convs_.emplace_back(nn::ConvShape{t, k, k, in, out, pad});
    names_.push_back(std::move(name));
  };
  std::size_t ch = config_.input_channels;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const std::size_t c = config_.base_channels << l;
    add("enc" + std::to_string(l) + ".conv0", ch, c, kt, pt, 3);
    add("enc" + std::to_string(l) + ".conv1", c, c, kt, pt, 3);
    ch = c;
  }
  const std::size_t cm = config_.base_channels << (L - 1);
  add("mid.conv0", ch, cm, kt, pt, 3);
  add("mid.conv1", cm, cm, kt, pt, 3);
  ch = cm;
  for (std::size_t l = L - 1; l-- > 0;) {
    const std::size_t c = config_.base_channels << l;
    add("dec" + std::to_string(l) + ".conv0", ch + c, c, kt, pt, 3);
    add("dec" + std::to_string(l) + ".conv1", c, c, kt, pt, 3);
    ch = c;
  }
  // The decoder restores the input time extent, so the head collapses time_steps frames.
  add("head.conv0", ch, 2, config_.time_steps, 0, 3);
  add("head.conv1", 2, 1, 1, 0, 1);

  std::mt19937_64 rng(seed);
  for (auto& conv : convs_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(conv.shape.patch_size()));
    for (auto& w : conv.weights) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
      w = static_cast<T>((2.0 * u - 1.0) * limit);
    }
  }
  (void)skip_shapes();
}

template <typename T>
LayoutCounts UNet3D<T>::layout() const {
  const std::size_t L = config_.levels;
  return {convs_.size(), L - 1, L - 1, L - 1};
}

template <typename T>
std::vector<SkipShape> UNet3D<T>::skip_shapes() const {
  const std::size_t L = config_.levels;
  const auto w = config_.pool_window();
  std::vector<nn::Dims5> enc_dims;
  nn::Dims5 d{1, config_.time_steps, config_.padded_rows(), config_.padded_cols(), config_.input_channels};
  for (std::size_t l = 0; l + 1 < L; ++l) {
    d = convs_[enc(l, 1)].output_dims(convs_[enc(l, 0)].output_dims(d));
    enc_dims.push_back(d);
    d = nn::pooled_dims(d, w);
  }
  d = convs_[mid(1)].output_dims(convs_[mid(0)].output_dims(d));
  std::vector<SkipShape> out(L - 1);
  for (std::size_t l = L - 1; l-- > 0;) {
    nn::Dims5 up{d.batch, enc_dims[l].time, enc_dims[l].rows, enc_dims[l].cols, d.channels};
    if (nn::ceil_div(up.time, w.time) != d.time || nn::ceil_div(up.rows, w.rows) != d.rows ||
        nn::ceil_div(up.cols, w.cols) != d.cols)
      throw ShapeError("decoder level " + std::to_string(l) + " cannot be upsampled back to " + to_string(enc_dims[l]));
    out[l] = {enc_dims[l], up};
    nn::Dims5 cat = up;
    cat.channels += enc_dims[l].channels;
    d = convs_[dec(l, 1)].output_dims(convs_[dec(l, 0)].output_dims(cat));
  }
  d = convs_[head(1)].output_dims(convs_[head(0)].output_dims(d));
  if (d.time != 1 || d.channels != 1) throw ShapeError("head does not collapse to a single frame");
  return out;
}

template <typename T>
std::size_t UNet3D<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& c : convs_) n += c.param_count();
  return n;
}

template <typename T>
nn::Array5<T> UNet3D<T>::pad_input(const nn::Array5<T>& x) const {
  const auto& d = x.dims();
  const std::size_t pr = config_.padded_rows(), pc = config_.padded_cols();
  if (pr == d.rows && pc == d.cols) return x;
  auto reflect = [](std::size_t i, std::size_t n) {
    // mirror without repeating the edge sample: n, n+1 -> n-2, n-3
    std::size_t period = 2 * (n - 1);
    std::size_t k = i % period;
    return k < n ? k : period - k;
  };
  nn::Array5<T> y(nn::Dims5{d.batch, d.time, pr, pc, d.channels});
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t t = 0; t < d.time; ++t)
      for (std::size_t r = 0; r < pr; ++r)
        for (std::size_t c = 0; c < pc; ++c) {
          const T* src = x.data() + x.offset(b, t, reflect(r, d.rows), reflect(c, d.cols));
          std::copy(src, src + d.channels, y.data() + y.offset(b, t, r, c));
        }
  return y;
}

template <typename T>
nn::Array5<T> UNet3D<T>::forward(const nn::Array5<T>& x, Cache* cache) const {
  const auto& d = x.dims();
  if (d.time != config_.time_steps || d.rows != config_.rows || d.cols != config_.cols ||
      d.channels != config_.input_channels)
    throw ShapeError("model expects B x " + std::to_string(config_.time_steps) + " x " + std::to_string(config_.rows) +
                     " x " + std::to_string(config_.cols) + " x " + std::to_string(config_.input_channels) +
                     " input, got " + to_string(d));
  const std::size_t L = config_.levels;
  const auto w = config_.pool_window();
  Cache local;
  Cache& c = cache ? *cache : local;
  c.enc_a.assign(L - 1, {});
  c.enc_b.assign(L - 1, {});
  c.pooled.assign(L - 1, {});
  c.dec_cat.assign(L - 1, {});
  c.dec_a.assign(L - 1, {});
  c.dec_b.assign(L - 1, {});
  c.input = pad_input(x);

  const nn::Array5<T>* h = &c.input;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    c.enc_a[l] = nn::relu_forward(nn::conv3d_forward(*h, convs_[enc(l, 0)]));
    c.enc_b[l] = nn::relu_forward(nn::conv3d_forward(c.enc_a[l], convs_[enc(l, 1)]));
    c.pooled[l] = nn::maxpool3d_forward(c.enc_b[l], w);
    h = &c.pooled[l].output;
  }
  c.mid_a = nn::relu_forward(nn::conv3d_forward(*h, convs_[mid(0)]));
  c.mid_b = nn::relu_forward(nn::conv3d_forward(c.mid_a, convs_[mid(1)]));
  h = &c.mid_b;
  for (std::size_t l = L - 1; l-- > 0;) {
    nn::Dims5 target = c.enc_b[l].dims();
    target.channels = h->dims().channels;
    c.dec_cat[l] = nn::concat_channels(nn::upsample3d_to(*h, w, target), c.enc_b[l]);
    c.dec_a[l] = nn::relu_forward(nn::conv3d_forward(c.dec_cat[l], convs_[dec(l, 0)]));
    c.dec_b[l] = nn::relu_forward(nn::conv3d_forward(c.dec_a[l], convs_[dec(l, 1)]));
    h = &c.dec_b[l];
  }
  c.head_a = nn::relu_forward(nn::conv3d_forward(*h, convs_[head(0)]));
  c.out = nn::conv3d_forward(c.head_a, convs_[head(1)]);

  const auto& od = c.out.dims();
  if (od.rows == config_.rows && od.cols == config_.cols) return c.out;
  nn::Array5<T> y(nn::Dims5{od.batch, 1, config_.rows, config_.cols, 1});
  for (std::size_t b = 0; b < od.batch; ++b)
    for (std::size_t r = 0; r < config_.rows; ++r)
      for (std::size_t col = 0; col < config_.cols; ++col) y(b, 0, r, col, 0) = c.out(b, 0, r, col, 0);
  return y;
}

template <typename T>
typename UNet3D<T>::Gradients UNet3D<T>::zero_gradients() const {
  Gradients g;
  for (const auto& c : convs_) {
    g.weights.emplace_back(c.weights.size(), T{0});
    g.biases.emplace_back(c.bias.size(), T{0});
  }
  return g;
}

template <typename T>
typename UNet3D<T>::Gradients UNet3D<T>::backward(const nn::Array5<T>& grad_out, const Cache& c) const {
  const std::size_t L = config_.levels;
  const auto w = config_.pool_window();
  Gradients g = zero_gradients();
  auto conv_back = [&](const nn::Array5<T>& go, const nn::Array5<T>& in, std::size_t idx, bool want_x = true) {
    return nn::conv3d_backward_accumulate(go, in, convs_[idx], g.weights[idx], g.biases[idx], want_x);
  };

  nn::Array5<T> go;
  const auto& od = c.out.dims();
  if (grad_out.dims() == od) {
    go = grad_out;
  } else {
    if (grad_out.dims() != nn::Dims5{od.batch, 1, config_.rows, config_.cols, 1})
      throw ShapeError("backward: gradient dims " + to_string(grad_out.dims()) + " do not match model output");
    go = nn::Array5<T>(od);
    for (std::size_t b = 0; b < od.batch; ++b)
      for (std::size_t r = 0; r < config_.rows; ++r)
        for (std::size_t col = 0; col < config_.cols; ++col) go(b, 0, r, col, 0) = grad_out(b, 0, r, col, 0);
  }

  auto gh = conv_back(go, c.head_a, head(1));
  gh = nn::relu_backward(gh, c.head_a);
  auto gx = conv_back(gh, c.dec_b[0], head(0));

  std::vector<nn::Array5<T>> g_skip(L - 1);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    gx = nn::relu_backward(gx, c.dec_b[l]);
    gx = conv_back(gx, c.dec_a[l], dec(l, 1));
    gx = nn::relu_backward(gx, c.dec_a[l]);
    gx = conv_back(gx, c.dec_cat[l], dec(l, 0));
    const nn::Array5<T>& below = (l + 2 == L) ? c.mid_b : c.dec_b[l + 1];
    auto [g_up, g_sk] = nn::split_channels(gx, below.dims().channels);
    g_skip[l] = std::move(g_sk);
    gx = nn::upsample3d_backward(g_up, w, below.dims());
  }
  gx = nn::relu_backward(gx, c.mid_b);
  gx = conv_back(gx, c.mid_a, mid(1));
  gx = nn::relu_backward(gx, c.mid_a);
  gx = conv_back(gx, c.pooled[L - 2].output, mid(0));
  for (std::size_t l = L - 1; l-- > 0;) {
    gx = nn::maxpool3d_backward(gx, c.pooled[l].cache);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] += g_skip[l].data()[i];
    gx = nn::relu_backward(gx, c.enc_b[l]);
    gx = conv_back(gx, c.enc_a[l], enc(l, 1));
    gx = nn::relu_backward(gx, c.enc_a[l]);
    const nn::Array5<T>& in = l == 0 ? c.input : c.pooled[l - 1].output;
    gx = conv_back(gx, in, enc(l, 0), l != 0);
  }
  return g;
}

template <typename T>
std::uint64_t UNet3D<T>::activation_pattern(const Cache& c) {
  std::uint64_t h = 0;
  auto signs = [&](const nn::Array5<T>& a) {
    std::uint64_t word = 0;
    std::size_t bits = 0;
    for (T v : a.values()) {
      word = (word << 1) | (v > T{0} ? 1u : 0u);
      if (++bits == 64) {
        h = nn::mix_pattern(h, word);
        word = 0;
        bits = 0;
      }
    }
    h = nn::mix_pattern(h, word);
  };
  for (const auto& a : c.enc_a) signs(a);
  for (const auto& a : c.enc_b) signs(a);
  for (const auto& p : c.pooled)
    for (auto i : p.cache.argmax) h = nn::mix_pattern(h, i);
  signs(c.mid_a);
  signs(c.mid_b);
  for (const auto& a : c.dec_a) signs(a);
  for (const auto& a : c.dec_b) signs(a);
  signs(c.head_a);
  return h;
}

template <typename T>
std::vector<nn::ParamBlock<T>> UNet3D<T>::param_blocks(const Gradients& grads) {
  std::vector<nn::ParamBlock<T>> blocks;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    blocks.push_back({names_[i] + ".weight", convs_[i].weights, grads.weights[i]});
    blocks.push_back({names_[i] + ".bias", convs_[i].bias, grads.biases[i]});
  }
  return blocks;
}

template <typename T>
std::vector<std::size_t> UNet3D<T>::block_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& c : convs_) {
    sizes.push_back(c.weights.size());
    sizes.push_back(c.bias.size());
  }
  return sizes;
}

template <typename T>
std::vector<nn::NamedTensor> UNet3D<T>::to_tensors() const {
  std::vector<nn::NamedTensor> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& s = convs_[i].shape;
    auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    out.push_back({names_[i] + ".weight",
                   {u32(s.out_channels), u32(s.kt), u32(s.kh), u32(s.kw), u32(s.in_channels)},
                   std::vector<float>(convs_[i].weights.begin(), convs_[i].weights.end())});
    out.push_back({names_[i] + ".bias", {u32(s.out_channels)},
                   std::vector<float>(convs_[i].bias.begin(), convs_[i].bias.end())});
  }
  return out;
}

template <typename T>
void UNet3D<T>::load_tensors(std::span<const nn::NamedTensor> tensors) {
  const auto expected = to_tensors();
  if (tensors.size() != expected.size())
    throw ValidationError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model needs " +
                          std::to_string(expected.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != expected[i].name || tensors[i].shape != expected[i].shape)
      throw ValidationError("checkpoint tensor '" + tensors[i].name + "' does not match model tensor '" +
                            expected[i].name + "'");
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& wt = tensors[2 * i].values;
    const auto& bt = tensors[2 * i + 1].values;
    convs_[i].weights.assign(wt.begin(), wt.end());
    convs_[i].bias.assign(bt.begin(), bt.end());
  }
}

template class UNet3D<float>;
template class UNet3D<double>;

}  // namespace nowcast
