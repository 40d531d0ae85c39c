#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "dmffn/tensor.hpp"

namespace dmffn {

class ImageError : public Error {
 public:
  using Error::Error;
};

/// 8-bit image, interleaved row-major (y, x, channel).
struct ImageBuffer {
  std::size_t width = 0, height = 0, channels = 3;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, std::size_t c)
      : width(w), height(h), channels(c), pixels(w * h * c, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// 8-bit → [0,1] floats as a C×H×W tensor.
template <class T = float>
Tensor<T> to_tensor(const ImageBuffer& img) {
  const std::size_t C = img.channels, H = img.height, W = img.width;
  std::vector<T> v(C * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) v[(c * H + y) * W + x] = static_cast<T>(img.at(x, y, c)) / T(255);
  return Tensor<T>(Shape{C, H, W}, std::move(v));
}

/// Clamp to [0,1], scale by 255, round half away from zero.
inline std::uint8_t quantize_unit(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::round(v * 255.0));
}

/// C×H×W (or 1×C×H×W) floats → 8-bit image.
template <class T>
ImageBuffer from_tensor(const Tensor<T>& t) {
  Shape s = t.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || (s[0] != 1 && s[0] != 3))
    throw ImageError("from_tensor: expected 1 or 3 channel C×H×W tensor, got " + to_string(t.shape()));
  ImageBuffer img(s[2], s[1], s[0]);
  for (std::size_t c = 0; c < s[0]; ++c)
    for (std::size_t y = 0; y < s[1]; ++y)
      for (std::size_t x = 0; x < s[2]; ++x)
        img.at(x, y, c) = quantize_unit(static_cast<double>(t[(c * s[1] + y) * s[2] + x]));
  return img;
}

/// Round-trips a float image through 8-bit quantization.
template <class T>
Tensor<T> quantize_tensor(const Tensor<T>& t) {
  std::vector<T> v(t.data());
  for (auto& x : v) x = static_cast<T>(quantize_unit(static_cast<double>(x))) / T(255);
  return Tensor<T>(t.shape(), std::move(v));
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* out = static_cast<std::string*>(png_get_error_ptr(png));
  if (out) *out = msg;
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8-bit grayscale or RGB PNG.
inline ImageBuffer read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageError("read_png: cannot open '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw ImageError("read_png: '" + path + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw ImageError("read_png: libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  ImageBuffer img;
  std::string unsupported;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("read_png: '" + path + "': " + (err.empty() ? "decode error" : err));
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8) {
    unsupported = "unsupported bit depth " + std::to_string(depth) + " (only 8-bit)";
  } else if (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY) {
    unsupported = "unsupported color type " + std::to_string(color) + " (only grayscale or RGB)";
  }
  if (unsupported.empty()) {
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    img = ImageBuffer(png_get_image_width(png, info), png_get_image_height(png, info),
                      color == PNG_COLOR_TYPE_RGB ? 3 : 1);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!unsupported.empty()) throw ImageError("read_png: '" + path + "': " + unsupported);
  return img;
}

inline void write_png(const ImageBuffer& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) throw ImageError("write_png: only 1 or 3 channels are supported");
  if (img.width == 0 || img.height == 0) throw ImageError("write_png: empty image");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageError("write_png: cannot open '" + path + "' for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw ImageError("write_png: libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("write_png: '" + path + "': " + (err.empty() ? "encode error" : err));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dmffn
