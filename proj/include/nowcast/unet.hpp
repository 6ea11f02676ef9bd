#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nowcast/nn/adam.hpp"
#include "nowcast/nn/array5.hpp"
#include "nowcast/nn/checkpoint.hpp"
#include "nowcast/nn/layers.hpp"

namespace nowcast {

enum class Variant { RadarOnly, Multimodal };

std::string_view variant_name(Variant v);  // "radar" / "multimodal"
Variant parse_variant(std::string_view name);

/// Architecture description of a 3D U-Net forecaster.
struct ModelConfig {
  Variant variant = Variant::RadarOnly;
  std::size_t input_channels = 1;
  std::size_t levels = 5;  // encoder levels including the bottleneck
  std::size_t base_channels = 64;
  std::size_t rows = 288;
  std::size_t cols = 288;
  std::size_t time_steps = 6;
  /// Temporal extent of the body convolutions (odd, zero padded to keep time).
  std::size_t temporal_kernel = 1;
  int lead_minutes = 5;
  /// Reflect-pad inputs whose spatial dims are not divisible by
  /// 2^(levels-1) instead of rejecting them.
  bool reflect_pad = false;

  /// 2x2x1 (time preserved) for RadarOnly, 2x2x2 for Multimodal.
  nn::Window3 pool_window() const;
  std::size_t padded_rows() const;
  std::size_t padded_cols() const;
  /// Throws ValidationError naming the offending field.
  void validate() const;

  /// 288x288, 6 frames, base 64, 5 levels.
  static ModelConfig reference(Variant v);
  /// 64x64, 6 frames, base 4, 3 levels.
  static ModelConfig desk(Variant v);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// key=value lines, '#' comments. Unknown keys throw ValidationError.
std::string format_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view text);

struct LayoutCounts {
  std::size_t convs = 0;
  std::size_t pools = 0;
  std::size_t upsamples = 0;
  std::size_t skips = 0;
};

/// Shape bookkeeping for one skip connection, checked at build time.
struct SkipShape {
  nn::Dims5 encoder;    // skip tensor (batch 1)
  nn::Dims5 upsampled;  // decoder tensor after upsampling
};

/// Encoder: (levels-1) x [conv, conv, pool]; bottleneck [conv, conv];
/// decoder: (levels-1) x [upsample, concat skip, conv, conv]; head: a
/// temporal-collapse conv (extent = incoming time, no temporal padding) to 2
/// channels, then a 1x1x1 conv to one channel. ReLU follows every conv except
/// the last. Output is in normalized radar space.
template <typename T>
class UNet3D {
 public:
  struct Cache {
    nn::Array5<T> input;
    std::vector<nn::Array5<T>> enc_a, enc_b;
    std::vector<nn::Pooled<T>> pooled;
    nn::Array5<T> mid_a, mid_b;
    std::vector<nn::Array5<T>> dec_cat, dec_a, dec_b;  // indexed by level
    nn::Array5<T> head_a;
    nn::Array5<T> out;  // uncropped
  };

  struct Gradients {
    std::vector<std::vector<T>> weights;
    std::vector<std::vector<T>> biases;
  };

  UNet3D() = default;
  /// He-uniform weights from `seed`, zero biases.
  UNet3D(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  LayoutCounts layout() const;
  std::vector<SkipShape> skip_shapes() const;
  std::size_t param_count() const;

  std::vector<nn::Conv3d<T>>& convs() { return convs_; }
  const std::vector<nn::Conv3d<T>>& convs() const { return convs_; }
  const std::vector<std::string>& conv_names() const { return names_; }

  /// x: B x time_steps x rows x cols x input_channels. Returns B x 1 x rows x cols x 1.
  nn::Array5<T> forward(const nn::Array5<T>& x, Cache* cache = nullptr) const;
  /// Parameter gradients of sum(grad_out * forward(x)).
  Gradients backward(const nn::Array5<T>& grad_out, const Cache& cache) const;
  Gradients zero_gradients() const;

  /// Fingerprint of ReLU signs and pooling argmaxes of a cached forward pass.
  static std::uint64_t activation_pattern(const Cache& cache);

  std::vector<nn::ParamBlock<T>> param_blocks(const Gradients& grads);
  std::vector<std::size_t> block_sizes() const;

  std::vector<nn::NamedTensor> to_tensors() const;
  /// Throws ValidationError if names or shapes disagree with this model.
  void load_tensors(std::span<const nn::NamedTensor> tensors);

  template <typename U>
  UNet3D<U> cast() const {
    UNet3D<U> other;
    other.config_ = config_;
    other.names_ = names_;
    for (const auto& c : convs_) {
      nn::Conv3d<U> d(c.shape);
      d.weights.assign(c.weights.begin(), c.weights.end());
      d.bias.assign(c.bias.begin(), c.bias.end());
      other.convs_.push_back(std::move(d));
    }
    return other;
  }

 private:
  template <typename>
  friend class UNet3D;

  std::size_t enc(std::size_t level, std::size_t k) const { return 2 * level + k; }
  std::size_t mid(std::size_t k) const { return 2 * (config_.levels - 1) + k; }
  std::size_t dec(std::size_t level, std::size_t k) const { return 2 * config_.levels + 2 * (config_.levels - 2 - level) + k; }
  std::size_t head(std::size_t k) const { return 4 * config_.levels - 2 + k; }

  nn::Array5<T> pad_input(const nn::Array5<T>& x) const;

  ModelConfig config_;
  std::vector<nn::Conv3d<T>> convs_;
  std::vector<std::string> names_;
};

/// Convenience for build_unet(config, seed).
template <typename T = float>
UNet3D<T> build_unet(const ModelConfig& config, std::uint64_t seed) {
  return UNet3D<T>(config, seed);
}

}  // namespace nowcast
