#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nowcast::nn {

/// One named parameter tensor in an RFP1 checkpoint.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// RFP1 layout (all integers little-endian):
//   "RFP1" | version u8 = 1 | tensor count u32
//   per tensor: name length u32 | name bytes | rank u32 | dims u32 x rank | f32 values
std::vector<std::uint8_t> encode_rfp1(std::span<const NamedTensor> tensors);
/// Throws FormatError with the failing byte offset.
std::vector<NamedTensor> decode_rfp1(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace nowcast::nn
