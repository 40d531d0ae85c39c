#pragma once

#include <string>
#include <vector>

#include "dmffn/init.hpp"
#include "dmffn/layers.hpp"

namespace dmffn {

/// Squeeze-and-excitation channel gate.
template <class T>
struct CaParams {
  ConvParams<T> reduce;  // 1×1, C → C/r
  ConvParams<T> expand;  // 1×1, C/r → C
  std::size_t ratio = 4;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    reduce.visit(f, prefix + ".reduce");
    expand.visit(f, prefix + ".expand");
  }

  static CaParams make(Initializer& init, std::size_t C, std::size_t ratio) {
    if (ratio == 0 || C % ratio != 0)
      throw ShapeError("channel_attention: channels " + std::to_string(C) + " not divisible by ratio " +
                       std::to_string(ratio));
    return {init.conv<T>(C, C / ratio, 1), init.conv<T>(C / ratio, C, 1), ratio};
  }
};

template <class T>
Tensor<T> channel_attention(const Tensor<T>& x, const CaParams<T>& p) {
  if (x.rank() != 4 || x.dim(1) != p.reduce.in_channels())
    throw ShapeError("channel_attention: input " + to_string(x.shape()) + " does not have " +
                     std::to_string(p.reduce.in_channels()) + " channels");
  auto w = sigmoid(conv2d(relu(conv2d(global_avg_pool(x), p.reduce)), p.expand));
  return mul(x, w);
}

/// Enhanced spatial attention: a strided, pooled low-resolution branch
/// produces a sigmoid mask over the full feature.
template <class T>
struct EsaParams {
  ConvParams<T> reduce;       // 1×1, C → C_e
  ConvParams<T> stride_conv;  // 3×3, stride 2, no padding
  ConvParams<T> body_conv;    // 3×3, padding 1
  ConvParams<T> expand;       // 1×1, C_e → C
  std::size_t pool_size = 7;
  std::size_t pool_stride = 3;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    reduce.visit(f, prefix + ".reduce");
    stride_conv.visit(f, prefix + ".stride_conv");
    body_conv.visit(f, prefix + ".body_conv");
    expand.visit(f, prefix + ".expand");
  }

  static EsaParams make(Initializer& init, std::size_t C) {
    const std::size_t ce = std::max<std::size_t>(C / 4, 1);
    EsaParams p;
    p.reduce = init.conv<T>(C, ce, 1);
    p.stride_conv = init.conv<T>(ce, ce, 3, 1, true, 2, 0);
    p.body_conv = init.conv<T>(ce, ce, 3);
    p.expand = init.conv<T>(ce, C, 1);
    return p;
  }
};

/// Smallest spatial extent the ESA strided branch accepts.
inline constexpr std::size_t kEsaMinSize = 3;

template <class T>
Tensor<T> esa(const Tensor<T>& x, const EsaParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("esa: expected N×C×H×W input");
  const std::size_t H = x.dim(2), W = x.dim(3);
  if (H < kEsaMinSize || W < kEsaMinSize)
    throw ShapeError("esa: spatial underflow, " + std::to_string(H) + "x" + std::to_string(W) + " is below " +
                     std::to_string(kEsaMinSize) + "x" + std::to_string(kEsaMinSize));
  auto m = conv2d(x, p.reduce);
  auto low = conv2d(m, p.stride_conv);
  if (low.dim(2) >= p.pool_size && low.dim(3) >= p.pool_size) low = max_pool2d(low, p.pool_size, p.pool_stride);
  auto branch = resize_bilinear(conv2d(low, p.body_conv), H, W);
  auto mask = sigmoid(conv2d(add(branch, m), p.expand));
  return mul(x, mask);
}

/// One SERB stage: grouped 1×1 → depthwise 3×3 → grouped 1×1, plus a dense
/// 3×3 skip conv.
template <class T>
struct SerbStage {
  ConvParams<T> gconv_in, dwconv, gconv_out, skip_conv;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    gconv_in.visit(f, prefix + ".gconv_in");
    dwconv.visit(f, prefix + ".dwconv");
    gconv_out.visit(f, prefix + ".gconv_out");
    skip_conv.visit(f, prefix + ".skip_conv");
  }

  static SerbStage make(Initializer& init, std::size_t C, std::size_t groups) {
    return {init.conv<T>(C, C, 1, groups), init.conv<T>(C, C, 3, C), init.conv<T>(C, C, 1, groups),
            init.conv<T>(C, C, 3)};
  }

  Tensor<T> separable(const Tensor<T>& x) const {
    return elu(conv2d(conv2d(conv2d(x, gconv_in), dwconv), gconv_out));
  }
  /// x + skip_conv(x) + separable(x), before the stage's output activation.
  Tensor<T> merge(const Tensor<T>& x) const { return add(add(x, conv2d(x, skip_conv)), separable(x)); }
};

template <class T>
struct SerbParams {
  SerbStage<T> stage1, stage2;
  CaParams<T> ca;
  EsaParams<T> esa;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    stage1.visit(f, prefix + ".stage1");
    stage2.visit(f, prefix + ".stage2");
    ca.visit(f, prefix + ".ca");
    esa.visit(f, prefix + ".esa");
  }

  static SerbParams make(Initializer& init, std::size_t C, std::size_t groups, std::size_t ca_ratio) {
    SerbParams p;
    p.stage1 = SerbStage<T>::make(init, C, groups);
    p.stage2 = SerbStage<T>::make(init, C, groups);
    p.ca = CaParams<T>::make(init, C, ca_ratio);
    p.esa = EsaParams<T>::make(init, C);
    return p;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto f1 = elu(stage1.merge(x));
    return dmffn::esa(channel_attention(stage2.merge(f1), ca), esa);
  }
};

template <class T>
Tensor<T> serb_forward(const Tensor<T>& x, const SerbParams<T>& p) {
  if (x.rank() != 4 || x.dim(1) != p.stage1.skip_conv.in_channels())
    throw ShapeError("serb: input " + to_string(x.shape()) + " does not match channels " +
                     std::to_string(p.stage1.skip_conv.in_channels()));
  return p.forward(x);
}

/// Stack of SERBs with an outer residual.
template <class T>
struct SesabParams {
  std::vector<SerbParams<T>> blocks;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(f, prefix + ".serb." + std::to_string(i));
  }

  static SesabParams make(Initializer& init, std::size_t C, std::size_t depth, std::size_t groups,
                          std::size_t ca_ratio) {
    SesabParams p;
    for (std::size_t i = 0; i < depth; ++i) p.blocks.push_back(SerbParams<T>::make(init, C, groups, ca_ratio));
    return p;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (blocks.empty()) return x;
    Tensor<T> h = x;
    for (const auto& b : blocks) h = serb_forward(h, b);
    return add(x, h);
  }
};

}  // namespace dmffn
