#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dmffn/baselines_data.hpp"
#include "dmffn/dataset.hpp"
#include "dmffn/model.hpp"

namespace dmffn {

namespace detail {

/// Drops a leading batch axis of 1 so metrics take C×H×W or 1×C×H×W.
template <class T>
Tensor<T> as_chw(const Tensor<T>& t, const char* fn) {
  if (t.rank() == 4 && t.dim(0) == 1) return Tensor<T>(Shape{t.dim(1), t.dim(2), t.dim(3)}, t.data());
  if (t.rank() == 3) return t;
  if (t.rank() == 2) return Tensor<T>(Shape{1, t.dim(0), t.dim(1)}, t.data());
  throw ShapeError(std::string(fn) + ": expected an image tensor, got " + to_string(t.shape()));
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> metric_inputs(const Tensor<T>& a, const Tensor<T>& b, std::size_t crop, bool on_y,
                                               const char* fn) {
  auto x = as_chw(a, fn), y = as_chw(b, fn);
  if (x.shape() != y.shape())
    throw ShapeError(std::string(fn) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (on_y) {
    x = rgb_to_y(x);
    y = rgb_to_y(y);
  }
  const std::size_t H = x.dim(1), W = x.dim(2);
  if (2 * crop >= H || 2 * crop >= W)
    throw ShapeError(std::string(fn) + ": over-crop, border " + std::to_string(crop) + " on " + std::to_string(H) +
                     "x" + std::to_string(W));
  if (crop > 0) {
    x = crop_window(x, crop, crop, H - 2 * crop, W - 2 * crop);
    y = crop_window(y, crop, crop, H - 2 * crop, W - 2 * crop);
  }
  return {x, y};
}

}  // namespace detail

/// Peak signal-to-noise ratio (peak 1.0) in dB; +inf for identical inputs.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, std::size_t crop_border = 0, bool on_y = false) {
  auto [x, y] = detail::metric_inputs(a, b, crop_border, on_y, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> ssim_gaussian() {
  std::vector<double> g(kSsimWindow);
  const double c = (kSsimWindow - 1) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

namespace detail {

/// Valid-region separable Gaussian filtering of one plane.
inline std::vector<double> gauss_valid(const std::vector<double>& p, std::size_t H, std::size_t W,
                                       const std::vector<double>& g) {
  const std::size_t k = g.size(), OH = H - k + 1, OW = W - k + 1;
  std::vector<double> tmp(H * OW), out(OH * OW);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < OW; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * p[y * W + x + i];
      tmp[y * OW + x] = s;
    }
  for (std::size_t y = 0; y < OH; ++y)
    for (std::size_t x = 0; x < OW; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += g[i] * tmp[(y + i) * OW + x];
      out[y * OW + x] = s;
    }
  return out;
}

inline double ssim_plane(const double* a, const double* b, std::size_t H, std::size_t W) {
  const auto g = ssim_gaussian();
  const std::size_t n = H * W;
  std::vector<double> x(a, a + n), y(b, b + n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  auto mx = gauss_valid(x, H, W, g), my = gauss_valid(y, H, W, g);
  auto sxx = gauss_valid(xx, H, W, g), syy = gauss_valid(yy, H, W, g), sxy = gauss_valid(xy, H, W, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + kSsimC1) * (2 * cxy + kSsimC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kSsimC1) * (vx + vy + kSsimC2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace detail

/// Mean SSIM over the valid region. Multi-channel inputs (on_y = false)
/// average the per-channel scores.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, bool on_y = false, std::size_t crop_border = 0) {
  auto [x, y] = detail::metric_inputs(a, b, crop_border, on_y, "ssim");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H < kSsimWindow || W < kSsimWindow)
    throw ShapeError("ssim: image too small, " + std::to_string(H) + "x" + std::to_string(W) + " is below " +
                     std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow));
  std::vector<double> xa(x.data().begin(), x.data().end()), ya(y.data().begin(), y.data().end());
  double s = 0.0;
  for (std::size_t c = 0; c < C; ++c) s += detail::ssim_plane(xa.data() + c * H * W, ya.data() + c * H * W, H, W);
  return s / static_cast<double>(C);
}

struct BaselineRow {
  int scale = 0;
  std::string model, set, psnr, ssim;  // kept verbatim
};

inline std::vector<BaselineRow> baseline_table() {
  std::vector<BaselineRow> rows;
  std::istringstream in(data::kBaselinesCsv);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw Error("baselines: malformed row '" + line + "'");
    rows.push_back({std::stoi(f[0]), f[1], f[2], f[3], f[4]});
  }
  return rows;
}

struct EvalRow {
  std::string image;
  double psnr_db = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::size_t model_params = 0;
  std::size_t scale = 0;
  std::size_t crop_border = 0;

  void finalize() {
    double p = 0, s = 0;
    for (const auto& r : rows) {
      p += r.psnr_db;
      s += r.ssim;
    }
    const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
    mean_psnr = rows.empty() ? 0.0 : p / n;
    mean_ssim = rows.empty() ? 0.0 : s / n;
  }
};

inline std::string format_metric(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// CSV with a footer of summary lines and the bundled baselines for the scale.
inline void write_csv(const EvalReport& r, std::ostream& os) {
  os << "image,psnr_db,ssim\n";
  for (const auto& row : r.rows) os << row.image << ',' << format_metric(row.psnr_db, 4) << ',' << format_metric(row.ssim, 6) << '\n';
  os << "# mean," << format_metric(r.mean_psnr, 4) << ',' << format_metric(r.mean_ssim, 6) << '\n';
  os << "# params," << r.model_params << '\n';
  os << "# scale," << r.scale << '\n';
  os << "# crop_border," << r.crop_border << '\n';
  for (const auto& b : baseline_table())
    if (b.scale == static_cast<int>(r.scale))
      os << "# baseline," << b.scale << ',' << b.model << ',' << b.set << ',' << b.psnr << ',' << b.ssim << '\n';
}

/// Maps a 1×3×h×w LR batch in [0,1] to a 1×3×sh×sw SR batch.
template <class T>
using Upscaler = std::function<Tensor<T>(const Tensor<T>&)>;

/// Y-channel PSNR/SSIM (border = scale) of one HR image against the
/// upscaled, 8-bit quantized antialiased-bicubic LR.
template <class T>
EvalRow evaluate_image(const std::string& id, const Tensor<T>& hr_raw, std::size_t scale, const Upscaler<T>& up) {
  auto [hr, lr] = degrade(ensure_rgb(hr_raw), scale);
  lr = quantize_tensor(lr);
  Tensor<T> batch(Shape{1, 3, lr.dim(1), lr.dim(2)}, lr.data());
  auto sr = quantize_tensor(up(batch));
  EvalRow row;
  row.image = id;
  row.psnr_db = psnr(sr, hr, scale, true);
  row.ssim = ssim(sr, hr, true, scale);
  return row;
}

template <class T>
EvalReport evaluate(const Upscaler<T>& up, const std::string& hr_dir, std::size_t scale, std::size_t params = 0,
                    std::ostream& log = std::cerr) {
  EvalReport report;
  report.scale = scale;
  report.crop_border = scale;
  report.model_params = params;
  for (const auto& path : list_pngs(hr_dir)) {
    try {
      report.rows.push_back(evaluate_image<T>(path.filename().string(), to_tensor<T>(read_png(path.string())), scale, up));
    } catch (const Error& e) {
      log << "skip: " << path.filename().string() << ": " << e.what() << '\n';
    }
  }
  report.finalize();
  return report;
}

template <class T>
EvalReport evaluate(const Model<T>& model, const std::string& hr_dir, std::size_t scale, std::ostream& log = std::cerr) {
  if (model.config.scale != scale)
    throw ConfigError("evaluate: model scale " + std::to_string(model.config.scale) + " does not match requested scale " +
                      std::to_string(scale));
  Upscaler<T> up = [&model](const Tensor<T>& lr) { return model.infer(lr); };
  return evaluate(up, hr_dir, scale, param_count(model), log);
}

/// Antialiased-bicubic upsampling as a reference upscaler.
template <class T>
Upscaler<T> bicubic_upscaler(std::size_t scale) {
  return [scale](const Tensor<T>& lr) {
    auto out = bicubic_resize(lr, lr.dim(2) * scale, lr.dim(3) * scale, true);
    for (auto& v : out.mutable_data()) v = std::min(T(1), std::max(T(0), v));
    return out;
  };
}

}  // namespace dmffn
