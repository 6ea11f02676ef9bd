#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "nowcast/nn/array5.hpp"

namespace nowcast::nn {

/// Kernel geometry of a 3D convolution. Spatial padding is always "same"
/// (zeros, kh/2 and kw/2 on each side, so kh/kw must be odd); temporal
/// padding is declared per layer, 0 giving "valid" handling along time.
struct ConvShape {
  std::size_t kt = 1;
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t pad_t = 0;

  std::size_t patch_size() const { return kt * kh * kw * in_channels; }
  std::size_t weight_count() const { return patch_size() * out_channels; }

  friend bool operator==(const ConvShape&, const ConvShape&) = default;
};

/// Stride-1 3D convolution. Weights are stored out-channel major as
/// [out][kt][kh][kw][in].
template <typename T>
struct Conv3d {
  ConvShape shape;
  std::vector<T> weights;
  std::vector<T> bias;

  Conv3d() = default;
  explicit Conv3d(ConvShape s);

  Dims5 output_dims(const Dims5& in) const;
  std::size_t param_count() const { return weights.size() + bias.size(); }
};

template <typename T>
struct ConvGrads {
  Array5<T> grad_x;
  std::vector<T> grad_w;
  std::vector<T> grad_b;
};

/// Direct convolution. Throws ShapeError on channel mismatch or when the
/// temporal kernel does not fit the padded input.
template <typename T>
Array5<T> conv3d_forward(const Array5<T>& x, const Conv3d<T>& layer);

/// Exact adjoint of conv3d_forward. `x` is the forward input.
template <typename T>
ConvGrads<T> conv3d_backward(const Array5<T>& grad_out, const Array5<T>& x, const Conv3d<T>& layer);

/// Accumulating variant: adds parameter gradients into grad_w/grad_b and
/// returns the input gradient (skipped when want_grad_x is false).
template <typename T>
Array5<T> conv3d_backward_accumulate(const Array5<T>& grad_out, const Array5<T>& x, const Conv3d<T>& layer,
                                     std::vector<T>& grad_w, std::vector<T>& grad_b, bool want_grad_x = true);

struct Window3 {
  std::size_t time = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  friend bool operator==(const Window3&, const Window3&) = default;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Dimensions after non-overlapping pooling with ceiling semantics.
Dims5 pooled_dims(const Dims5& in, Window3 window);

struct PoolCache {
  Dims5 input_dims;
  std::vector<std::size_t> argmax;  // flat input offset per output element
};

template <typename T>
struct Pooled {
  Array5<T> output;
  PoolCache cache;
};

/// Non-overlapping max pooling; ragged last windows shrink. Ties go to the
/// first element in (time, row, col) order.
template <typename T>
Pooled<T> maxpool3d_forward(const Array5<T>& x, Window3 window);

template <typename T>
Array5<T> maxpool3d_backward(const Array5<T>& grad_out, const PoolCache& cache);

/// Nearest-neighbour repetition by `factors`.
template <typename T>
Array5<T> upsample3d(const Array5<T>& x, Window3 factors);

/// Nearest-neighbour upsampling to explicit dims, used to invert a
/// ceiling-pooled size exactly. Requires ceil(target / factor) == input on
/// every axis; a target smaller than the input throws ShapeError.
template <typename T>
Array5<T> upsample3d_to(const Array5<T>& x, Window3 factors, const Dims5& target);

/// Sums gradients over each repetition group.
template <typename T>
Array5<T> upsample3d_backward(const Array5<T>& grad_out, Window3 factors, const Dims5& input_dims);

template <typename T>
Array5<T> relu_forward(const Array5<T>& x);

/// Uses the forward output as mask; the subgradient at 0 is 0.
template <typename T>
Array5<T> relu_backward(const Array5<T>& grad_out, const Array5<T>& y);

/// Channel concatenation [a | b]; all other dims must match.
template <typename T>
Array5<T> concat_channels(const Array5<T>& a, const Array5<T>& b);

template <typename T>
std::pair<Array5<T>, Array5<T>> split_channels(const Array5<T>& grad, std::size_t first_channels);

}  // namespace nowcast::nn
