#pragma once

#include <cmath>
#include <vector>

#include "dmffn/tensor.hpp"

namespace dmffn {

/// Keys cubic convolution kernel with a = -0.5.
inline double cubic_kernel(double x) {
  const double ax = std::abs(x), ax2 = ax * ax, ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

/// Per-output-pixel source indices and normalized weights along one axis.
struct ResampleTaps {
  std::size_t taps = 0;               // entries per output pixel
  std::vector<std::size_t> index;     // out_len × taps, already mirrored into range
  std::vector<double> weight;         // out_len × taps, each row sums to 1
};

/// Reference-style resampling weights. When shrinking with `antialias`, the
/// kernel is stretched by 1/scale; borders use symmetric (mirror) extension.
inline ResampleTaps bicubic_taps(std::size_t in_len, std::size_t out_len, bool antialias) {
  if (in_len == 0 || out_len == 0) throw ShapeError("bicubic: degenerate size");
  const double scale = static_cast<double>(out_len) / static_cast<double>(in_len);
  const bool widen = antialias && scale < 1.0;
  const double kernel_width = widen ? 4.0 / scale : 4.0;
  ResampleTaps r;
  r.taps = static_cast<std::size_t>(std::ceil(kernel_width)) + 2;
  r.index.resize(out_len * r.taps);
  r.weight.resize(out_len * r.taps);
  const auto n = static_cast<std::ptrdiff_t>(in_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    // 1-based coordinates, as in the reference implementation
    const double u = static_cast<double>(o + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const auto left = static_cast<std::ptrdiff_t>(std::floor(u - kernel_width / 2.0));
    double total = 0.0;
    for (std::size_t t = 0; t < r.taps; ++t) {
      const std::ptrdiff_t j = left + static_cast<std::ptrdiff_t>(t);  // 1-based
      const double d = u - static_cast<double>(j);
      const double w = widen ? scale * cubic_kernel(scale * d) : cubic_kernel(d);
      // mirror into [1, n]: sequence 1..n, n..1 repeating
      std::ptrdiff_t m = (j - 1) % (2 * n);
      if (m < 0) m += 2 * n;
      const std::ptrdiff_t src = m < n ? m : 2 * n - 1 - m;  // 0-based
      r.index[o * r.taps + t] = static_cast<std::size_t>(src);
      r.weight[o * r.taps + t] = w;
      total += w;
    }
    for (std::size_t t = 0; t < r.taps; ++t) r.weight[o * r.taps + t] /= total;
  }
  return r;
}

/// Bicubic resize of a C×H×W (or N×C×H×W) image to out_h × out_w; height first.
template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& img, std::size_t out_h, std::size_t out_w, bool antialias = true) {
  if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output size must be at least 1x1");
  const Shape& s = img.shape();
  if (s.size() < 2) throw ShapeError("bicubic_resize: expected at least 2-D input");
  const std::size_t H = s[s.size() - 2], W = s.back();
  const std::size_t planes = img.numel() / (H * W);
  auto ty = bicubic_taps(H, out_h, antialias);
  auto tx = bicubic_taps(W, out_w, antialias);
  std::vector<double> mid(out_h * W);
  std::vector<T> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = img.data().data() + p * H * W;
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < ty.taps; ++t)
          acc += ty.weight[oy * ty.taps + t] * static_cast<double>(src[ty.index[oy * ty.taps + t] * W + x]);
        mid[oy * W + x] = acc;
      }
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (std::size_t t = 0; t < tx.taps; ++t)
          acc += tx.weight[ox * tx.taps + t] * mid[oy * W + tx.index[ox * tx.taps + t]];
        dst[oy * out_w + ox] = static_cast<T>(acc);
      }
  }
  Shape os = s;
  os[os.size() - 2] = out_h;
  os.back() = out_w;
  return Tensor<T>(std::move(os), std::move(out));
}

/// Resize by a factor; output size is ceil(size·factor).
template <class T>
Tensor<T> bicubic_rescale(const Tensor<T>& img, double factor, bool antialias = true) {
  if (!(factor > 0)) throw ShapeError("bicubic_rescale: scale factor must be positive");
  const Shape& s = img.shape();
  auto scaled = [&](std::size_t n) {
    const double v = static_cast<double>(n) * factor;
    return static_cast<std::size_t>(std::ceil(v - 1e-9));
  };
  const std::size_t oh = scaled(s[s.size() - 2]), ow = scaled(s.back());
  if (oh < 1 || ow < 1) throw ShapeError("bicubic_rescale: output would be smaller than one pixel");
  return bicubic_resize(img, oh, ow, antialias);
}

}  // namespace dmffn
