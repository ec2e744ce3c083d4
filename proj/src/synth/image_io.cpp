#include "nsl/synth/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "nsl/diffmath/errors.hpp"

namespace nsl::synth {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw FormatError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  (void)png;
  throw FormatError(std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

// rows: height x (width * channels * bytes_per_sample), samples big-endian.
void write_png(const std::filesystem::path& path, std::size_t width, std::size_t height, int color_type,
               int bit_depth, const std::vector<std::vector<png_byte>>& rows) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw FormatError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& row : rows) png_write_row(png, row.data());
  png_write_end(png, nullptr);
}

struct PngImage {
  std::size_t width = 0, height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::vector<png_byte>> rows;
};

PngImage read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw FormatError("png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  PngImage img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  img.rows.assign(img.height, std::vector<png_byte>(stride));
  for (auto& row : img.rows) png_read_row(png, row.data(), nullptr);
  png_read_end(png, nullptr);
  return img;
}

png_byte to_u8(double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void write_rgb_png(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("write_rgb_png expects [3 x H x W]");
  const std::size_t h = chw.dim(1), w = chw.dim(2);
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w * 3));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) rows[y][x * 3 + c] = to_u8(chw.at(c, y, x));
  write_png(path, w, h, PNG_COLOR_TYPE_RGB, 8, rows);
}

Tensor read_rgb_png(const std::filesystem::path& path) {
  const PngImage img = read_png(path);
  if (img.bit_depth != 8) throw FormatError("expected an 8-bit image: " + path.string());
  Tensor out({3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = img.channels >= 3 ? c : 0;
        out.at(c, y, x) = img.rows[y][x * static_cast<std::size_t>(img.channels) + src] / 255.0;
      }
  return out;
}

void write_u16_png(const std::filesystem::path& path, const Tensor& hw, double scale) {
  if (hw.rank() != 2) throw DimensionError("write_u16_png expects [H x W]");
  const std::size_t h = hw.dim(0), w = hw.dim(1);
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w * 2));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = std::isfinite(hw.at(y, x)) ? hw.at(y, x) * scale : 0.0;
      const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 65535.0)));
      rows[y][2 * x] = static_cast<png_byte>(q >> 8);
      rows[y][2 * x + 1] = static_cast<png_byte>(q & 0xff);
    }
  write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 16, rows);
}

Tensor read_u16_png(const std::filesystem::path& path, double scale) {
  const PngImage img = read_png(path);
  if (img.bit_depth != 16 || img.channels != 1) throw FormatError("expected a 16-bit grayscale PNG: " + path.string());
  Tensor out({img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const unsigned q = (static_cast<unsigned>(img.rows[y][2 * x]) << 8) | img.rows[y][2 * x + 1];
      out.at(y, x) = static_cast<double>(q) / scale;
    }
  return out;
}

void write_mask_png(const std::filesystem::path& path, const Tensor& hw) {
  if (hw.rank() != 2) throw DimensionError("write_mask_png expects [H x W]");
  const std::size_t h = hw.dim(0), w = hw.dim(1);
  std::vector<std::vector<png_byte>> rows(h, std::vector<png_byte>(w));
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) rows[y][x] = hw.at(y, x) != 0.0 ? 255 : 0;
  write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 8, rows);
}

Tensor read_mask_png(const std::filesystem::path& path) {
  const PngImage img = read_png(path);
  if (img.bit_depth != 8 || img.channels != 1) throw FormatError("expected an 8-bit grayscale PNG: " + path.string());
  Tensor out({img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) out.at(y, x) = img.rows[y][x] != 0 ? 1.0 : 0.0;
  return out;
}

void write_pfm(const std::filesystem::path& path, const Tensor& hw) {
  static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");
  if (hw.rank() != 2) throw DimensionError("write_pfm expects [H x W]");
  const std::size_t h = hw.dim(0), w = hw.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string());
  out << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  std::vector<float> row(w);
  for (std::size_t y = h; y-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) row[x] = static_cast<float>(hw.at(y, x));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

Tensor read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  in.get();
  if (magic != "Pf" || !in || w == 0 || h == 0) throw FormatError("not a single-channel PFM: " + path.string());
  if (scale >= 0) throw FormatError("big-endian PFM not supported: " + path.string());
  Tensor out({h, w});
  std::vector<float> row(w);
  for (std::size_t y = h; y-- > 0;) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w * sizeof(float)));
    if (!in) throw FormatError("truncated PFM: " + path.string());
    for (std::size_t x = 0; x < w; ++x) out.at(y, x) = row[x];
  }
  return out;
}

}  // namespace nsl::synth
