#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nowcast/error.hpp"

namespace nowcast::nn {

/// batch x time x rows x cols x channels, channels fastest.
struct Dims5 {
  std::size_t batch = 1;
  std::size_t time = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t channels = 1;

  std::size_t size() const { return batch * time * rows * cols * channels; }
  std::size_t voxels() const { return time * rows * cols; }

  friend bool operator==(const Dims5&, const Dims5&) = default;
};

inline std::string to_string(const Dims5& d) {
  return std::to_string(d.batch) + "x" + std::to_string(d.time) + "x" + std::to_string(d.rows) + "x" +
         std::to_string(d.cols) + "x" + std::to_string(d.channels);
}

template <typename T>
class Array5 {
 public:
  using value_type = T;

  Array5() = default;
  explicit Array5(Dims5 dims, T fill = T{0}) : dims_(dims), values_(dims.size(), fill) {
    if (dims.batch == 0 || dims.time == 0 || dims.rows == 0 || dims.cols == 0 || dims.channels == 0)
      throw ShapeError("Array5 dimensions must be >= 1, got " + to_string(dims));
  }
  Array5(Dims5 dims, std::vector<T> values) : dims_(dims), values_(std::move(values)) {
    if (values_.size() != dims_.size()) throw ShapeError("Array5 value count does not match " + to_string(dims));
  }

  const Dims5& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  std::size_t offset(std::size_t b, std::size_t t, std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return (((b * dims_.time + t) * dims_.rows + r) * dims_.cols + c) * dims_.channels + ch;
  }
  T& operator()(std::size_t b, std::size_t t, std::size_t r, std::size_t c, std::size_t ch) {
    return values_[offset(b, t, r, c, ch)];
  }
  T operator()(std::size_t b, std::size_t t, std::size_t r, std::size_t c, std::size_t ch) const {
    return values_[offset(b, t, r, c, ch)];
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <typename U>
  Array5<U> cast() const {
    return Array5<U>(dims_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const Array5&, const Array5&) = default;

 private:
  Dims5 dims_{0, 0, 0, 0, 0};
  std::vector<T> values_;
};

}  // namespace nowcast::nn
