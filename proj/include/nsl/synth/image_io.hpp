#pragma once

// Image and disparity file formats.
//
// Colour images are held as [3 x H x W] tensors with values in [0, 1].
// Single-channel maps are [H x W].

#include <filesystem>

#include "nsl/diffmath/tensor.hpp"

namespace nsl::synth {

// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded.
void write_rgb_png(const std::filesystem::path& path, const Tensor& chw);
// Reads 8-bit gray, RGB or RGBA PNGs into [3 x H x W]; FormatError otherwise.
Tensor read_rgb_png(const std::filesystem::path& path);

// 16-bit grayscale PNG storing round(value * scale), clamped to [0, 65535].
void write_u16_png(const std::filesystem::path& path, const Tensor& hw, double scale);
// Inverse of write_u16_png: stored / scale.
Tensor read_u16_png(const std::filesystem::path& path, double scale);

// 8-bit grayscale PNG with 255 where the map is non-zero, else 0.
void write_mask_png(const std::filesystem::path& path, const Tensor& hw);
Tensor read_mask_png(const std::filesystem::path& path);

// Single-channel PFM: "Pf" header, negative (little-endian) scale, rows
// stored bottom-up.
void write_pfm(const std::filesystem::path& path, const Tensor& hw);
Tensor read_pfm(const std::filesystem::path& path);

}  // namespace nsl::synth
