#pragma once

// Tensor container ("NSLT") used for feature maps and checkpoints.
//
// Layout, all integers little-endian:
//   "NSLT"  u16 version (= 1)  u16 slot count
//   per slot: u16 name length, name bytes, u64 absolute offset of its record
//   per record: u8 rank, rank x u32 dims, u8 dtype (0 = f32, 1 = f64),
//               elements in row-major order

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nsl/diffmath/tensor.hpp"

namespace nsl::features {

inline constexpr char kTensorMagic[4] = {'N', 'S', 'L', 'T'};
inline constexpr std::uint16_t kTensorFileVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct TensorSlot {
  std::string name;
  Tensor tensor;
  DType dtype = DType::kF64;
};

void write_tensor_file(const std::filesystem::path& path, const std::vector<TensorSlot>& slots);

// Throws FormatError on bad magic, unknown version or dtype, or truncation.
std::vector<TensorSlot> read_tensor_file(const std::filesystem::path& path);

// Slot lookup; throws FormatError when missing.
const TensorSlot& find_slot(const std::vector<TensorSlot>& slots, const std::string& name);

}  // namespace nsl::features
