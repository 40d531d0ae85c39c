#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dmffn/image.hpp"
#include "dmffn/resample.hpp"

namespace dmffn {

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// BT.601 luma on the studio range. Accepts C×H×W or N×C×H×W with C = 3;
/// returns the same rank with C = 1.
template <class T>
Tensor<T> rgb_to_y(const Tensor<T>& img) {
  const Shape& s = img.shape();
  if (s.size() < 3 || s[s.size() - 3] != 3)
    throw ShapeError("rgb_to_y: expected 3 channels, got shape " + to_string(s));
  const std::size_t plane = s[s.size() - 2] * s.back();
  const std::size_t n = img.numel() / (3 * plane);
  std::vector<T> y(n * plane);
  const T* p = img.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    const T* r = p + b * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i)
      y[b * plane + i] = static_cast<T>((65.481 * r[i] + 128.553 * r[plane + i] + 24.966 * r[2 * plane + i] + 16.0) / 255.0);
  }
  Shape out = s;
  out[out.size() - 3] = 1;
  return Tensor<T>(std::move(out), std::move(y));
}

/// One of the 8 symmetries of the square on the last two axes.
/// bit 0: horizontal flip, bit 1: vertical flip, bit 2: transpose (applied last).
template <class T>
Tensor<T> dihedral(const Tensor<T>& img, unsigned code) {
  const Shape& s = img.shape();
  if (s.size() < 2) throw ShapeError("dihedral: expected at least 2-D input");
  const std::size_t H = s[s.size() - 2], W = s.back(), planes = img.numel() / (H * W);
  const bool hf = code & 1u, vf = code & 2u, tr = code & 4u;
  const std::size_t OH = tr ? W : H, OW = tr ? H : W;
  std::vector<T> out(img.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = img.data().data() + p * H * W;
    T* dst = out.data() + p * H * W;
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t y = tr ? ox : oy, x = tr ? oy : ox;
        if (vf) y = H - 1 - y;
        if (hf) x = W - 1 - x;
        dst[oy * OW + ox] = src[y * W + x];
      }
  }
  Shape os = s;
  os[os.size() - 2] = OH;
  os.back() = OW;
  return Tensor<T>(std::move(os), std::move(out));
}

/// Crop the last two axes to the window [y0, y0+h) × [x0, x0+w).
template <class T>
Tensor<T> crop_window(const Tensor<T>& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const Shape& s = img.shape();
  const std::size_t H = s[s.size() - 2], W = s.back(), planes = img.numel() / (H * W);
  if (y0 + h > H || x0 + w > W) throw ShapeError("crop_window: window exceeds image " + to_string(s));
  std::vector<T> out(planes * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(img.data().data() + p * H * W + (y0 + y) * W + x0, w, out.data() + (p * h + y) * w);
  Shape os = s;
  os[os.size() - 2] = h;
  os.back() = w;
  return Tensor<T>(std::move(os), std::move(out));
}

/// Replicates a single-channel C×H×W image to 3 channels.
template <class T>
Tensor<T> ensure_rgb(const Tensor<T>& img) {
  if (img.dim(0) == 3) return img;
  if (img.dim(0) != 1) throw ShapeError("ensure_rgb: expected 1 or 3 channels, got " + to_string(img.shape()));
  std::vector<T> v;
  v.reserve(img.numel() * 3);
  for (int c = 0; c < 3; ++c) v.insert(v.end(), img.data().begin(), img.data().end());
  return Tensor<T>(Shape{3, img.dim(1), img.dim(2)}, std::move(v));
}

/// HR cropped to a multiple of `scale`, and its antialiased bicubic LR.
template <class T>
std::pair<Tensor<T>, Tensor<T>> degrade(const Tensor<T>& hr, std::size_t scale) {
  const std::size_t H = hr.dim(1) / scale * scale, W = hr.dim(2) / scale * scale;
  if (H == 0 || W == 0) throw ShapeError("degrade: image smaller than the scale factor");
  auto cropped = (H == hr.dim(1) && W == hr.dim(2)) ? hr : crop_window(hr, 0, 0, H, W);
  auto lr = bicubic_resize(cropped, H / scale, W / scale, true);
  return {cropped, lr};
}

template <class T>
struct SamplePair {
  Tensor<T> hr_patch;  // 3 × sP × sP
  Tensor<T> lr_patch;  // 3 × P × P
  std::size_t scale = 2;
  std::string source_id;
};

template <class T>
struct Batch {
  Tensor<T> lr;  // N × 3 × P × P
  Tensor<T> hr;  // N × 3 × sP × sP
};

/// Grid patches over a set of images, served in a seed-determined order.
/// The stream is random-access: sample k belongs to epoch k / size(), whose
/// permutation and per-sample augmentation depend only on (seed, epoch, k).
template <class T>
class PairDataset {
 public:
  PairDataset(std::vector<SamplePair<T>> pairs, bool augment, std::uint64_t seed)
      : pairs_(std::move(pairs)), augment_(augment), seed_(seed) {
    if (pairs_.empty()) throw DatasetError("dataset: no patches could be extracted");
  }

  std::size_t size() const { return pairs_.size(); }
  std::size_t scale() const { return pairs_.front().scale; }
  const std::vector<SamplePair<T>>& base_pairs() const { return pairs_; }

  /// The k-th sample of the infinite stream (0-based).
  SamplePair<T> sample(std::size_t k) const {
    const std::size_t n = pairs_.size(), epoch = k / n;
    if (epoch != cached_epoch_) {
      order_ = permutation(epoch);
      cached_epoch_ = epoch;
    }
    SamplePair<T> p = pairs_[order_[k % n]];
    if (augment_) {
      const unsigned code = static_cast<unsigned>(mix(seed_, 0xA5A5A5A5ull, k) & 7u);
      p.hr_patch = dihedral(p.hr_patch, code);
      p.lr_patch = dihedral(p.lr_patch, code);
    }
    return p;
  }

  /// Batch number `index` (0-based) of size B: samples index·B … index·B+B−1.
  Batch<T> batch(std::size_t index, std::size_t B) const {
    std::vector<T> lr, hr;
    Shape ls, hs;
    for (std::size_t i = 0; i < B; ++i) {
      auto p = sample(index * B + i);
      lr.insert(lr.end(), p.lr_patch.data().begin(), p.lr_patch.data().end());
      hr.insert(hr.end(), p.hr_patch.data().begin(), p.hr_patch.data().end());
      ls = p.lr_patch.shape();
      hs = p.hr_patch.shape();
    }
    ls.insert(ls.begin(), B);
    hs.insert(hs.begin(), B);
    return {Tensor<T>(ls, std::move(lr)), Tensor<T>(hs, std::move(hr))};
  }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c),
                      static_cast<std::uint32_t>(c >> 32)};
    std::mt19937_64 rng(seq);
    return rng();
  }

  std::vector<std::size_t> permutation(std::size_t epoch) const {
    std::vector<std::size_t> idx(pairs_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    return idx;
  }

  std::vector<SamplePair<T>> pairs_;
  bool augment_;
  std::uint64_t seed_;
  mutable std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  mutable std::vector<std::size_t> order_;
};

/// Grid patches from in-memory HR images (C×H×W in [0,1], 1 or 3 channels).
template <class T>
PairDataset<T> make_pairs(const std::vector<std::pair<std::string, Tensor<T>>>& images, std::size_t scale,
                          std::size_t patch, std::size_t stride, bool augment, std::uint64_t seed,
                          std::ostream& log = std::cerr) {
  if (scale < 1) throw DatasetError("make_pairs: scale must be >= 1");
  if (patch < 1) throw DatasetError("make_pairs: patch must be >= 1");
  if (stride == 0) stride = patch;
  if (images.empty()) throw DatasetError("make_pairs: no input images");
  std::vector<SamplePair<T>> pairs;
  for (const auto& [id, raw] : images) {
    auto img = ensure_rgb(raw);
    if (img.dim(1) < scale * patch || img.dim(2) < scale * patch) {
      log << "warning: skipping '" << id << "' (" << img.dim(2) << "x" << img.dim(1) << " is smaller than "
          << scale * patch << "x" << scale * patch << ")\n";
      continue;
    }
    auto [hr, lr] = degrade(img, scale);
    for (std::size_t y = 0; y + patch <= lr.dim(1); y += stride)
      for (std::size_t x = 0; x + patch <= lr.dim(2); x += stride) {
        SamplePair<T> p;
        p.lr_patch = crop_window(lr, y, x, patch, patch);
        p.hr_patch = crop_window(hr, y * scale, x * scale, patch * scale, patch * scale);
        p.scale = scale;
        p.source_id = id + "@" + std::to_string(y) + "," + std::to_string(x);
        pairs.push_back(std::move(p));
      }
  }
  if (pairs.empty()) throw DatasetError("make_pairs: every image was smaller than one patch");
  return PairDataset<T>(std::move(pairs), augment, seed);
}

/// Sorted list of *.png files in a directory.
inline std::vector<std::filesystem::path> list_pngs(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError("'" + dir + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DatasetError("empty directory: no PNG files in '" + dir + "'");
  return out;
}

template <class T>
PairDataset<T> make_pairs(const std::string& hr_dir, std::size_t scale, std::size_t patch, std::size_t stride,
                          bool augment, std::uint64_t seed, std::ostream& log = std::cerr) {
  std::vector<std::pair<std::string, Tensor<T>>> images;
  for (const auto& p : list_pngs(hr_dir)) images.emplace_back(p.filename().string(), to_tensor<T>(read_png(p.string())));
  return make_pairs<T>(images, scale, patch, stride, augment, seed, log);
}

}  // namespace dmffn
