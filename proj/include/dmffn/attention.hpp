#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dmffn/init.hpp"
#include "dmffn/layers.hpp"

namespace dmffn {

enum class WindowKind { square, axial_row, axial_col };

/// Square windows of side `size`, or stripes `size` rows (axial_row) or
/// columns (axial_col) thick spanning the full opposite axis.
struct WindowSpec {
  WindowKind kind = WindowKind::square;
  std::size_t size = 8;
};

/// Token grid of one window: rows × cols, tokens in row-major order.
struct WindowDims {
  std::size_t rows = 1, cols = 1;
  std::size_t tokens() const { return rows * cols; }
};

inline WindowDims window_dims(const WindowSpec& spec, std::size_t H, std::size_t W) {
  switch (spec.kind) {
    case WindowKind::square: return {spec.size, spec.size};
    case WindowKind::axial_row: return {spec.size, W};
    case WindowKind::axial_col: return {H, spec.size};
  }
  return {};
}

namespace detail {

inline void check_window_divisible(const WindowSpec& spec, std::size_t H, std::size_t W) {
  if (spec.size == 0) throw ShapeError("window: size must be positive");
  const bool rows = spec.kind != WindowKind::axial_col;
  const bool cols = spec.kind != WindowKind::axial_row;
  if (rows && H % spec.size != 0)
    throw ShapeError("window: height " + std::to_string(H) + " not divisible by window size " +
                     std::to_string(spec.size));
  if (cols && W % spec.size != 0)
    throw ShapeError("window: width " + std::to_string(W) + " not divisible by window size " +
                     std::to_string(spec.size));
}

}  // namespace detail

/// N×C×H×W → M×L×C token windows.
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowSpec& spec) {
  if (x.rank() != 4) throw ShapeError("window_partition: expected N×C×H×W, got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), s = spec.size;
  detail::check_window_divisible(spec, H, W);
  switch (spec.kind) {
    case WindowKind::square: {
      auto t = permute(reshape(x, Shape{N, C, H / s, s, W / s, s}), {0, 2, 4, 3, 5, 1});
      return reshape(t, Shape{N * (H / s) * (W / s), s * s, C});
    }
    case WindowKind::axial_row: {
      auto t = permute(reshape(x, Shape{N, C, H / s, s, W}), {0, 2, 3, 4, 1});
      return reshape(t, Shape{N * (H / s), s * W, C});
    }
    case WindowKind::axial_col: {
      auto t = permute(reshape(x, Shape{N, C, H, W / s, s}), {0, 3, 2, 4, 1});
      return reshape(t, Shape{N * (W / s), H * s, C});
    }
  }
  throw Error("window_partition: unknown window kind");
}

/// Inverse of window_partition back to N×C×H×W.
template <class T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowSpec& spec, std::size_t N, std::size_t H,
                         std::size_t W) {
  detail::check_window_divisible(spec, H, W);
  if (windows.rank() != 3) throw ShapeError("window_reverse: expected M×L×C");
  const std::size_t C = windows.dim(2), s = spec.size;
  if (windows.numel() != N * C * H * W)
    throw ShapeError("window_reverse: " + to_string(windows.shape()) + " does not tile " + std::to_string(N) + "×" +
                     std::to_string(C) + "×" + std::to_string(H) + "×" + std::to_string(W));
  switch (spec.kind) {
    case WindowKind::square: {
      auto t = reshape(windows, Shape{N, H / s, W / s, s, s, C});
      return reshape(permute(t, {0, 5, 1, 3, 2, 4}), Shape{N, C, H, W});
    }
    case WindowKind::axial_row: {
      auto t = reshape(windows, Shape{N, H / s, s, W, C});
      return reshape(permute(t, {0, 4, 1, 2, 3}), Shape{N, C, H, W});
    }
    case WindowKind::axial_col: {
      auto t = reshape(windows, Shape{N, W / s, H, s, C});
      return reshape(permute(t, {0, 4, 2, 1, 3}), Shape{N, C, H, W});
    }
  }
  throw Error("window_reverse: unknown window kind");
}

/// Learned relative position bias with table extent `extent_rows × extent_cols`;
/// offsets beyond the extent are clipped to the border entry.
template <class T>
struct RelativeBias {
  Tensor<T> table;  // (2·extent_rows-1)(2·extent_cols-1) × heads
  std::size_t extent_rows = 1, extent_cols = 1;

  std::size_t heads() const { return table.dim(1); }

  /// table row for every (query, key) pair of a window with the given dims.
  std::vector<std::size_t> index(const WindowDims& d) const {
    const auto er = static_cast<std::ptrdiff_t>(extent_rows), ec = static_cast<std::ptrdiff_t>(extent_cols);
    const std::size_t L = d.tokens();
    std::vector<std::size_t> idx(L * L);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j) {
        auto dy = static_cast<std::ptrdiff_t>(i / d.cols) - static_cast<std::ptrdiff_t>(j / d.cols);
        auto dx = static_cast<std::ptrdiff_t>(i % d.cols) - static_cast<std::ptrdiff_t>(j % d.cols);
        dy = std::clamp(dy, -(er - 1), er - 1);
        dx = std::clamp(dx, -(ec - 1), ec - 1);
        idx[i * L + j] = static_cast<std::size_t>((dy + er - 1) * (2 * ec - 1) + (dx + ec - 1));
      }
    return idx;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    f(prefix, table);
  }

  static RelativeBias make(Initializer& init, std::size_t extent_rows, std::size_t extent_cols, std::size_t heads) {
    return {init.zeros<T>(Shape{(2 * extent_rows - 1) * (2 * extent_cols - 1), heads}), extent_rows, extent_cols};
  }
};

/// Expands a bias table into a 1×heads×L×L tensor.
template <class T>
Tensor<T> gather_bias(const RelativeBias<T>& bias, const WindowDims& d) {
  const std::size_t heads = bias.heads(), L = d.tokens();
  auto idx = bias.index(d);
  std::vector<T> out(heads * L * L);
  const auto& tab = bias.table.data();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t k = 0; k < L * L; ++k) out[h * L * L + k] = tab[idx[k] * heads + h];
  return make_result<T>("gather_bias", Shape{1, heads, L, L}, std::move(out), {bias.table}, [&] {
    return [ti = bias.table.impl(), idx = std::move(idx), heads, L](const TensorImpl<T>& o) {
      auto& g = ti->grad_buffer();
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t k = 0; k < L * L; ++k) g[idx[k] * heads + h] += o.grad[h * L * L + k];
    };
  });
}

/// Scaled dot-product attention of M windows with `heads` heads.
/// q, k, v: M×L×D; bias: 1×heads×L×L or undefined. Returns M×L×D.
template <class T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                 const Tensor<T>& bias, Tensor<T>* attn_out = nullptr) {
  const std::size_t M = q.dim(0), L = q.dim(1), D = q.dim(2);
  if (heads == 0 || D % heads != 0)
    throw ShapeError("attend: width " + std::to_string(D) + " not divisible by heads " + std::to_string(heads));
  const std::size_t d = D / heads;
  auto split_heads = [&](const Tensor<T>& t) { return permute(reshape(t, Shape{M, L, heads, d}), {0, 2, 1, 3}); };
  auto qh = mul_scalar(split_heads(q), T(1) / std::sqrt(static_cast<T>(d)));
  auto kh = split_heads(k);
  auto vh = split_heads(v);
  auto scores = matmul(qh, transpose_last2(kh));
  if (bias.defined()) scores = add(scores, bias);
  auto attn = softmax(scores, 3);
  if (attn_out) *attn_out = attn;
  auto out = matmul(attn, vh);  // M×h×L×d
  return reshape(permute(out, {0, 2, 1, 3}), Shape{M, L, D});
}

template <class T>
struct AttentionParams {
  LinearParams<T> qkv;   // 3C × C
  LinearParams<T> proj;  // C × C
  std::size_t heads = 1;
  RelativeBias<T> rel_bias;

  std::size_t channels() const { return proj.weight.dim(0); }

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    qkv.visit(f, prefix + ".qkv");
    proj.visit(f, prefix + ".proj");
    rel_bias.visit(f, prefix + ".rel_bias");
  }

  static AttentionParams make(Initializer& init, std::size_t C, std::size_t heads, std::size_t window) {
    if (heads == 0 || C % heads != 0)
      throw ShapeError("attention: channels " + std::to_string(C) + " not divisible by heads " + std::to_string(heads));
    return {init.linear<T>(C, 3 * C), init.linear<T>(C, C), heads,
            RelativeBias<T>::make(init, window, window, heads)};
  }
};

/// Multi-head self-attention inside each window. `dims` describes the token
/// grid of a window (defaults to a square of side sqrt(L)).
template <class T>
Tensor<T> mhsa(const Tensor<T>& windows, const AttentionParams<T>& p, WindowDims dims = {0, 0},
               Tensor<T>* attn_out = nullptr) {
  if (windows.rank() != 3 || windows.dim(2) != p.channels())
    throw ShapeError("mhsa: windows " + to_string(windows.shape()) + " do not match channels " +
                     std::to_string(p.channels()));
  const std::size_t L = windows.dim(1);
  if (dims.tokens() == 0) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(L))));
    dims = side * side == L ? WindowDims{side, side} : WindowDims{1, L};
  }
  if (dims.tokens() != L) throw ShapeError("mhsa: window dims do not match token count");
  auto qkv = linear(windows, p.qkv);
  auto parts = split(qkv, 2, 3);
  auto bias = gather_bias(p.rel_bias, dims);
  auto o = attend(parts[0], parts[1], parts[2], p.heads, bias, attn_out);
  return linear(o, p.proj);
}

// ---------------------------------------------------------------------------
// Blocks

namespace detail {

template <class T>
Tensor<T> to_tokens(const Tensor<T>& x) {  // N×C×H×W → N×H×W×C
  return permute(x, {0, 2, 3, 1});
}

template <class T>
Tensor<T> from_tokens(const Tensor<T>& t) {  // N×H×W×C → N×C×H×W
  return permute(t, {0, 3, 1, 2});
}

inline std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace detail

/// Two-layer perceptron with GELU applied per pixel.
template <class T>
struct MlpParams {
  LinearParams<T> fc1, fc2;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    fc1.visit(f, prefix + ".fc1");
    fc2.visit(f, prefix + ".fc2");
  }

  static MlpParams make(Initializer& init, std::size_t C, std::size_t ratio) {
    return {init.linear<T>(C, C * ratio), init.linear<T>(C * ratio, C)};
  }

  Tensor<T> forward_tokens(const Tensor<T>& t) const { return linear(gelu(linear(t, fc1)), fc2); }
  Tensor<T> forward(const Tensor<T>& x) const { return detail::from_tokens(forward_tokens(detail::to_tokens(x))); }
};

/// Conv3×3 → ELU → Conv3×3; the caller adds the residual.
template <class T>
struct ResidualConvParams {
  ConvParams<T> conv1, conv2;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    conv1.visit(f, prefix + ".conv1");
    conv2.visit(f, prefix + ".conv2");
  }

  static ResidualConvParams make(Initializer& init, std::size_t C) {
    return {init.conv<T>(C, C, 3), init.conv<T>(C, C, 3)};
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(elu(conv2d(x, conv1)), conv2); }
};

struct BlockConfig {
  std::size_t channels = 48;
  std::size_t heads = 4;
  std::size_t square_window = 8;
  std::size_t axial_stripe = 1;
  std::size_t mlp_ratio = 2;
  // clipping extent of relative offsets along a stripe's long axis
  std::size_t axial_extent = 8;
};

/// Axial-window block: half of the heads attend within horizontal stripes,
/// the other half within vertical stripes, plus a parallel residual conv path.
template <class T>
struct AwbParams {
  LayerNormParams<T> norm1, norm2;
  LinearParams<T> qkv, proj;
  RelativeBias<T> row_bias, col_bias;
  std::size_t heads = 2;
  std::size_t stripe = 1;
  ResidualConvParams<T> rb;
  MlpParams<T> mlp;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    norm1.visit(f, prefix + ".norm1");
    qkv.visit(f, prefix + ".qkv");
    proj.visit(f, prefix + ".proj");
    row_bias.visit(f, prefix + ".row_bias");
    col_bias.visit(f, prefix + ".col_bias");
    rb.visit(f, prefix + ".rb");
    norm2.visit(f, prefix + ".norm2");
    mlp.visit(f, prefix + ".mlp");
  }

  static AwbParams make(Initializer& init, const BlockConfig& c) {
    if (c.heads < 2 || c.heads % 2 != 0)
      throw ShapeError("awb: heads must be even to split between row and column stripes, got " +
                       std::to_string(c.heads));
    if (c.channels % c.heads != 0)
      throw ShapeError("awb: channels " + std::to_string(c.channels) + " not divisible by heads " +
                       std::to_string(c.heads));
    AwbParams p;
    p.norm1 = init.norm<T>(c.channels);
    p.qkv = init.linear<T>(c.channels, 3 * c.channels);
    p.proj = init.linear<T>(c.channels, c.channels);
    p.row_bias = RelativeBias<T>::make(init, c.axial_stripe, c.axial_extent, c.heads / 2);
    p.col_bias = RelativeBias<T>::make(init, c.axial_extent, c.axial_stripe, c.heads / 2);
    p.heads = c.heads;
    p.stripe = c.axial_stripe;
    p.rb = ResidualConvParams<T>::make(init, c.channels);
    p.norm2 = init.norm<T>(c.channels);
    p.mlp = MlpParams<T>::make(init, c.channels, c.mlp_ratio);
    return p;
  }

  /// Split-head axial attention over a normalized N×C×H×W feature.
  Tensor<T> axial_attention(const Tensor<T>& y) const {
    const std::size_t N = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
    const std::size_t Hp = detail::round_up(H, stripe), Wp = detail::round_up(W, stripe);
    auto qkv_map = detail::from_tokens(linear(detail::to_tokens(y), qkv));  // N×3C×H×W
    qkv_map = reflect_pad2d(qkv_map, Hp - H, Wp - W);
    const std::size_t half = C / 2;
    auto run = [&](WindowKind kind, std::size_t offset, const RelativeBias<T>& bias) {
      WindowSpec spec{kind, stripe};
      auto part = [&](std::size_t which) {
        return window_partition(slice(qkv_map, 1, which * C + offset, half), spec);
      };
      auto dims = window_dims(spec, Hp, Wp);
      auto o = attend(part(0), part(1), part(2), heads / 2, gather_bias(bias, dims));
      return window_reverse(o, spec, N, Hp, Wp);
    };
    auto rows = run(WindowKind::axial_row, 0, row_bias);
    auto cols = run(WindowKind::axial_col, half, col_bias);
    auto merged = crop2d(concat<T>({rows, cols}, 1), H, W);
    return detail::from_tokens(linear(detail::to_tokens(merged), proj));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = layer_norm(x, norm1, 1);
    auto f1 = add(add(x, rb.forward(y)), axial_attention(y));
    return add(f1, mlp.forward(layer_norm(f1, norm2, 1)));
  }
};

/// Square-window block without shifting.
template <class T>
struct SwbParams {
  LayerNormParams<T> norm1, norm2;
  AttentionParams<T> attn;
  std::size_t window = 8;
  MlpParams<T> mlp;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    norm1.visit(f, prefix + ".norm1");
    attn.visit(f, prefix + ".attn");
    norm2.visit(f, prefix + ".norm2");
    mlp.visit(f, prefix + ".mlp");
  }

  static SwbParams make(Initializer& init, const BlockConfig& c) {
    SwbParams p;
    p.norm1 = init.norm<T>(c.channels);
    p.attn = AttentionParams<T>::make(init, c.channels, c.heads, c.square_window);
    p.window = c.square_window;
    p.norm2 = init.norm<T>(c.channels);
    p.mlp = MlpParams<T>::make(init, c.channels, c.mlp_ratio);
    return p;
  }

  /// Features smaller than the window shrink it to fit; the rest is
  /// reflect-padded to a multiple of the window and cropped afterwards.
  Tensor<T> window_attention(const Tensor<T>& y) const {
    const std::size_t N = y.dim(0), H = y.dim(2), W = y.dim(3);
    const std::size_t w = std::min({window, H, W});
    const std::size_t Hp = detail::round_up(H, w), Wp = detail::round_up(W, w);
    WindowSpec spec{WindowKind::square, w};
    auto windows = window_partition(reflect_pad2d(y, Hp - H, Wp - W), spec);
    auto o = mhsa(windows, attn, WindowDims{w, w});
    return crop2d(window_reverse(o, spec, N, Hp, Wp), H, W);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto f1 = add(x, window_attention(layer_norm(x, norm1, 1)));
    return add(f1, mlp.forward(layer_norm(f1, norm2, 1)));
  }
};

/// Alternating AWB → SWB pairs closed by a 3×3 conv and an outer residual.
template <class T>
struct AtbParams {
  std::vector<AwbParams<T>> awb;
  std::vector<SwbParams<T>> swb;
  ConvParams<T> conv;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    for (std::size_t i = 0; i < awb.size(); ++i) {
      awb[i].visit(f, prefix + ".awb." + std::to_string(i));
      swb[i].visit(f, prefix + ".swb." + std::to_string(i));
    }
    conv.visit(f, prefix + ".conv");
  }

  static AtbParams make(Initializer& init, const BlockConfig& c, std::size_t depth) {
    AtbParams p;
    for (std::size_t i = 0; i < depth; ++i) {
      p.awb.push_back(AwbParams<T>::make(init, c));
      p.swb.push_back(SwbParams<T>::make(init, c));
    }
    p.conv = init.conv<T>(c.channels, c.channels, 3);
    return p;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < awb.size(); ++i) h = swb[i].forward(awb[i].forward(h));
    return add(x, conv2d(h, conv));
  }
};

}  // namespace dmffn
