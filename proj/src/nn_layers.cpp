#include <algorithm>
#include <cstring>

#include "nowcast/nn/layers.hpp"

namespace nowcast::nn {

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[k + j] * b[k + j];
  T tail = 0;
  for (; k < n; ++k) tail += a[k] * b[k];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

template <typename T>
void axpy(T* y, T a, const T* x, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

// Signed offset of kernel tap `k` around output coordinate `o` with padding `pad`.
inline std::ptrdiff_t tap(std::size_t o, std::size_t k, std::size_t pad) {
  return static_cast<std::ptrdiff_t>(o) + static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
}

// Gathers the receptive fields of one output row into patch[cols][K]
// (K ordered dt, dh, dw, channel), zero-filling padded taps.
template <typename T>
void gather_row(const Array5<T>& x, const ConvShape& s, std::size_t b, std::size_t to, std::size_t r,
                std::vector<T>& patch) {
  const Dims5& d = x.dims();
  const std::size_t K = s.patch_size();
  const std::size_t cin = s.in_channels;
  const std::size_t ph = s.kh / 2, pw = s.kw / 2;
  for (std::size_t c = 0; c < d.cols; ++c) {
    T* dst = patch.data() + c * K;
    for (std::size_t dt = 0; dt < s.kt; ++dt) {
      const auto ti = tap(to, dt, s.pad_t);
      for (std::size_t dh = 0; dh < s.kh; ++dh, dst += s.kw * cin) {
        const auto ri = tap(r, dh, ph);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(d.time) || ri < 0 ||
            ri >= static_cast<std::ptrdiff_t>(d.rows)) {
          std::fill(dst, dst + s.kw * cin, T{0});
          continue;
        }
        for (std::size_t dw = 0; dw < s.kw; ++dw) {
          const auto ci = tap(c, dw, pw);
          T* seg = dst + dw * cin;
          if (ci < 0 || ci >= static_cast<std::ptrdiff_t>(d.cols)) {
            std::fill(seg, seg + cin, T{0});
          } else {
            const T* src = x.data() + x.offset(b, static_cast<std::size_t>(ti), static_cast<std::size_t>(ri),
                                               static_cast<std::size_t>(ci));
            std::copy(src, src + cin, seg);
          }
        }
      }
    }
  }
}

// Adjoint of gather_row: adds patch gradients back into grad_x.
template <typename T>
void scatter_row(Array5<T>& grad_x, const ConvShape& s, std::size_t b, std::size_t to, std::size_t r,
                 const std::vector<T>& dpatch) {
  const Dims5& d = grad_x.dims();
  const std::size_t K = s.patch_size();
  const std::size_t cin = s.in_channels;
  const std::size_t ph = s.kh / 2, pw = s.kw / 2;
  for (std::size_t c = 0; c < d.cols; ++c) {
    const T* src = dpatch.data() + c * K;
    for (std::size_t dt = 0; dt < s.kt; ++dt) {
      const auto ti = tap(to, dt, s.pad_t);
      for (std::size_t dh = 0; dh < s.kh; ++dh, src += s.kw * cin) {
        const auto ri = tap(r, dh, ph);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(d.time) || ri < 0 ||
            ri >= static_cast<std::ptrdiff_t>(d.rows))
          continue;
        for (std::size_t dw = 0; dw < s.kw; ++dw) {
          const auto ci = tap(c, dw, pw);
          if (ci < 0 || ci >= static_cast<std::ptrdiff_t>(d.cols)) continue;
          T* dst = grad_x.data() + grad_x.offset(b, static_cast<std::size_t>(ti), static_cast<std::size_t>(ri),
                                                 static_cast<std::size_t>(ci));
          axpy(dst, T{1}, src + dw * cin, cin);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Conv3d<T>::Conv3d(ConvShape s) : shape(s), weights(s.weight_count(), T{0}), bias(s.out_channels, T{0}) {
  if (s.kt == 0 || s.kh == 0 || s.kw == 0 || s.in_channels == 0 || s.out_channels == 0)
    throw ShapeError("convolution kernel and channel counts must be >= 1");
  if (s.kh % 2 == 0 || s.kw % 2 == 0) throw ShapeError("spatial kernel extents must be odd for same padding");
}

template <typename T>
Dims5 Conv3d<T>::output_dims(const Dims5& in) const {
  if (in.channels != shape.in_channels)
    throw ShapeError("conv3d expects " + std::to_string(shape.in_channels) + " input channels, got " +
                     std::to_string(in.channels));
  const std::size_t padded = in.time + 2 * shape.pad_t;
  if (padded < shape.kt)
    throw ShapeError("temporal kernel " + std::to_string(shape.kt) + " exceeds padded time extent " +
                     std::to_string(padded));
  return {in.batch, padded - shape.kt + 1, in.rows, in.cols, shape.out_channels};
}

template <typename T>
Array5<T> conv3d_forward(const Array5<T>& x, const Conv3d<T>& layer) {
  const ConvShape& s = layer.shape;
  const Dims5 od = layer.output_dims(x.dims());
  if (layer.weights.size() != s.weight_count() || layer.bias.size() != s.out_channels)
    throw ShapeError("conv3d parameter buffers do not match the kernel shape");
  Array5<T> y(od);
  const std::size_t K = s.patch_size();
  const std::size_t cout = s.out_channels;
  std::vector<T> patch(od.cols * K);
  for (std::size_t b = 0; b < od.batch; ++b)
    for (std::size_t t = 0; t < od.time; ++t)
      for (std::size_t r = 0; r < od.rows; ++r) {
        gather_row(x, s, b, t, r, patch);
        T* out = y.data() + y.offset(b, t, r, 0);
        for (std::size_t c = 0; c < od.cols; ++c) {
          const T* p = patch.data() + c * K;
          for (std::size_t o = 0; o < cout; ++o)
            out[c * cout + o] = layer.bias[o] + dot(p, layer.weights.data() + o * K, K);
        }
      }
  return y;
}

template <typename T>
Array5<T> conv3d_backward_accumulate(const Array5<T>& grad_out, const Array5<T>& x, const Conv3d<T>& layer,
                                     std::vector<T>& grad_w, std::vector<T>& grad_b, bool want_grad_x) {
  const ConvShape& s = layer.shape;
  const Dims5 od = layer.output_dims(x.dims());
  if (grad_out.dims() != od)
    throw ShapeError("conv3d backward: gradient dims " + to_string(grad_out.dims()) + " do not match output " +
                     to_string(od));
  if (grad_w.size() != s.weight_count() || grad_b.size() != s.out_channels)
    throw ShapeError("conv3d backward: gradient buffers do not match the kernel shape");
  const std::size_t K = s.patch_size();
  const std::size_t cout = s.out_channels;
  Array5<T> grad_x;
  if (want_grad_x) grad_x = Array5<T>(x.dims());
  std::vector<T> patch(od.cols * K);
  std::vector<T> dpatch(want_grad_x ? od.cols * K : 0);
  for (std::size_t b = 0; b < od.batch; ++b)
    for (std::size_t t = 0; t < od.time; ++t)
      for (std::size_t r = 0; r < od.rows; ++r) {
        const T* g = grad_out.data() + grad_out.offset(b, t, r, 0);
        bool any = false;
        for (std::size_t i = 0; i < od.cols * cout; ++i) any = any || g[i] != T{0};
        if (!any) continue;
        gather_row(x, s, b, t, r, patch);
        for (std::size_t c = 0; c < od.cols; ++c)
          for (std::size_t o = 0; o < cout; ++o) {
            const T gv = g[c * cout + o];
            if (gv == T{0}) continue;
            grad_b[o] += gv;
            axpy(grad_w.data() + o * K, gv, patch.data() + c * K, K);
          }
        if (!want_grad_x) continue;
        std::fill(dpatch.begin(), dpatch.end(), T{0});
        for (std::size_t c = 0; c < od.cols; ++c)
          for (std::size_t o = 0; o < cout; ++o) {
            const T gv = g[c * cout + o];
            if (gv != T{0}) axpy(dpatch.data() + c * K, gv, layer.weights.data() + o * K, K);
          }
        scatter_row(grad_x, s, b, t, r, dpatch);
      }
  return grad_x;
}

template <typename T>
ConvGrads<T> conv3d_backward(const Array5<T>& grad_out, const Array5<T>& x, const Conv3d<T>& layer) {
  ConvGrads<T> g;
  g.grad_w.assign(layer.shape.weight_count(), T{0});
  g.grad_b.assign(layer.shape.out_channels, T{0});
  g.grad_x = conv3d_backward_accumulate(grad_out, x, layer, g.grad_w, g.grad_b, true);
  return g;
}

Dims5 pooled_dims(const Dims5& in, Window3 w) {
  if (w.time == 0 || w.rows == 0 || w.cols == 0) throw ShapeError("pooling window extents must be >= 1");
  return {in.batch, ceil_div(in.time, w.time), ceil_div(in.rows, w.rows), ceil_div(in.cols, w.cols), in.channels};
}

template <typename T>
Pooled<T> maxpool3d_forward(const Array5<T>& x, Window3 w) {
  const Dims5& d = x.dims();
  const Dims5 od = pooled_dims(d, w);
  Pooled<T> out{Array5<T>(od), PoolCache{d, std::vector<std::size_t>(od.size())}};
  std::vector<T> best(d.channels);
  std::vector<std::size_t> where(d.channels);
  for (std::size_t b = 0; b < od.batch; ++b)
    for (std::size_t ot = 0; ot < od.time; ++ot)
      for (std::size_t orow = 0; orow < od.rows; ++orow)
        for (std::size_t oc = 0; oc < od.cols; ++oc) {
          bool first = true;
          for (std::size_t t = ot * w.time; t < std::min(d.time, (ot + 1) * w.time); ++t)
            for (std::size_t r = orow * w.rows; r < std::min(d.rows, (orow + 1) * w.rows); ++r)
              for (std::size_t c = oc * w.cols; c < std::min(d.cols, (oc + 1) * w.cols); ++c) {
                const std::size_t base = x.offset(b, t, r, c);
                for (std::size_t ch = 0; ch < d.channels; ++ch) {
                  const T v = x.data()[base + ch];
                  if (first || v > best[ch]) {
                    best[ch] = v;
                    where[ch] = base + ch;
                  }
                }
                first = false;
              }
          const std::size_t o = out.output.offset(b, ot, orow, oc);
          for (std::size_t ch = 0; ch < d.channels; ++ch) {
            out.output.data()[o + ch] = best[ch];
            out.cache.argmax[o + ch] = where[ch];
          }
        }
  return out;
}

template <typename T>
Array5<T> maxpool3d_backward(const Array5<T>& grad_out, const PoolCache& cache) {
  if (grad_out.size() != cache.argmax.size()) throw ShapeError("maxpool3d backward: gradient size mismatch");
  Array5<T> gx(cache.input_dims);
  for (std::size_t i = 0; i < cache.argmax.size(); ++i) gx.data()[cache.argmax[i]] += grad_out.data()[i];
  return gx;
}

namespace {

void check_upsample_target(const Dims5& in, Window3 f, const Dims5& target) {
  if (f.time == 0 || f.rows == 0 || f.cols == 0) throw ShapeError("upsampling factors must be >= 1");
  if (target.batch != in.batch || target.channels != in.channels)
    throw ShapeError("upsample target must keep batch and channel counts");
  if (target.time < in.time || target.rows < in.rows || target.cols < in.cols)
    throw ShapeError("upsample target " + to_string(target) + " is smaller than input " + to_string(in));
  if (ceil_div(target.time, f.time) != in.time || ceil_div(target.rows, f.rows) != in.rows ||
      ceil_div(target.cols, f.cols) != in.cols)
    throw ShapeError("upsample target " + to_string(target) + " is not reachable from " + to_string(in));
}

}  // namespace

template <typename T>
Array5<T> upsample3d_to(const Array5<T>& x, Window3 f, const Dims5& target) {
  const Dims5& d = x.dims();
  check_upsample_target(d, f, target);
  Array5<T> y(target);
  for (std::size_t b = 0; b < target.batch; ++b)
    for (std::size_t t = 0; t < target.time; ++t)
      for (std::size_t r = 0; r < target.rows; ++r)
        for (std::size_t c = 0; c < target.cols; ++c) {
          const T* src = x.data() + x.offset(b, t / f.time, r / f.rows, c / f.cols);
          std::copy(src, src + d.channels, y.data() + y.offset(b, t, r, c));
        }
  return y;
}

template <typename T>
Array5<T> upsample3d(const Array5<T>& x, Window3 f) {
  const Dims5& d = x.dims();
  return upsample3d_to(x, f, Dims5{d.batch, d.time * f.time, d.rows * f.rows, d.cols * f.cols, d.channels});
}

template <typename T>
Array5<T> upsample3d_backward(const Array5<T>& grad_out, Window3 f, const Dims5& input_dims) {
  const Dims5& target = grad_out.dims();
  check_upsample_target(input_dims, f, target);
  Array5<T> gx(input_dims);
  for (std::size_t b = 0; b < target.batch; ++b)
    for (std::size_t t = 0; t < target.time; ++t)
      for (std::size_t r = 0; r < target.rows; ++r)
        for (std::size_t c = 0; c < target.cols; ++c)
          axpy(gx.data() + gx.offset(b, t / f.time, r / f.rows, c / f.cols), T{1},
               grad_out.data() + grad_out.offset(b, t, r, c), input_dims.channels);
  return gx;
}

template <typename T>
Array5<T> relu_forward(const Array5<T>& x) {
  Array5<T> y = x;
  for (T& v : y.values()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
Array5<T> relu_backward(const Array5<T>& grad_out, const Array5<T>& y) {
  if (grad_out.dims() != y.dims()) throw ShapeError("relu backward: shape mismatch");
  Array5<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(y.data()[i] > T{0})) g.data()[i] = T{0};
  return g;
}

template <typename T>
Array5<T> concat_channels(const Array5<T>& a, const Array5<T>& b) {
  const Dims5& da = a.dims();
  const Dims5& db = b.dims();
  if (da.batch != db.batch || da.time != db.time || da.rows != db.rows || da.cols != db.cols)
    throw ShapeError("cannot concatenate " + to_string(da) + " with " + to_string(db));
  Dims5 dc = da;
  dc.channels = da.channels + db.channels;
  Array5<T> c(dc);
  const std::size_t n = da.batch * da.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * da.channels, da.channels, c.data() + i * dc.channels);
    std::copy_n(b.data() + i * db.channels, db.channels, c.data() + i * dc.channels + da.channels);
  }
  return c;
}

template <typename T>
std::pair<Array5<T>, Array5<T>> split_channels(const Array5<T>& grad, std::size_t first) {
  const Dims5& d = grad.dims();
  if (first == 0 || first >= d.channels) throw ShapeError("split point outside channel range");
  Dims5 da = d, db = d;
  da.channels = first;
  db.channels = d.channels - first;
  Array5<T> a(da), b(db);
  const std::size_t n = d.batch * d.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(grad.data() + i * d.channels, da.channels, a.data() + i * da.channels);
    std::copy_n(grad.data() + i * d.channels + first, db.channels, b.data() + i * db.channels);
  }
  return {std::move(a), std::move(b)};
}

#define NOWCAST_INSTANTIATE_LAYERS(T)                                                                         \
  template struct Conv3d<T>;                                                                                 \
  template Array5<T> conv3d_forward(const Array5<T>&, const Conv3d<T>&);                                     \
  template ConvGrads<T> conv3d_backward(const Array5<T>&, const Array5<T>&, const Conv3d<T>&);               \
  template Array5<T> conv3d_backward_accumulate(const Array5<T>&, const Array5<T>&, const Conv3d<T>&,        \
                                                std::vector<T>&, std::vector<T>&, bool);                     \
  template Pooled<T> maxpool3d_forward(const Array5<T>&, Window3);                                           \
  template Array5<T> maxpool3d_backward(const Array5<T>&, const PoolCache&);                                 \
  template Array5<T> upsample3d(const Array5<T>&, Window3);                                                  \
  template Array5<T> upsample3d_to(const Array5<T>&, Window3, const Dims5&);                                 \
  template Array5<T> upsample3d_backward(const Array5<T>&, Window3, const Dims5&);                           \
  template Array5<T> relu_forward(const Array5<T>&);                                                         \
  template Array5<T> relu_backward(const Array5<T>&, const Array5<T>&);                                      \
  template Array5<T> concat_channels(const Array5<T>&, const Array5<T>&);                                    \
  template std::pair<Array5<T>, Array5<T>> split_channels(const Array5<T>&, std::size_t);

NOWCAST_INSTANTIATE_LAYERS(float)
NOWCAST_INSTANTIATE_LAYERS(double)

}  // namespace nowcast::nn
