#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "dmffn/config.hpp"
#include "dmffn/fusion.hpp"

namespace dmffn {

/// Smallest LR height/width the network accepts (bounded by the ESA strided branch).
inline constexpr std::size_t kMinInputSize = kEsaMinSize;

/// Dual-path super-resolution network: shallow conv, a chain of dual-way
/// fusion stages, feature reuse over the summed stage outputs, and a
/// sub-pixel reconstruction head.
template <class T>
struct Model {
  ModelConfig config;
  ConvParams<T> sfb;
  std::vector<DffbParams<T>> stages;
  DfbParams<T> frb;
  ConvParams<T> up_conv;   // C → C·s²
  ConvParams<T> out_conv;  // C → 3

  template <class F>
  void visit(F&& f) const {
    sfb.visit(f, "sfb");
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].visit(f, "stage." + std::to_string(i));
    frb.visit(f, "frb");
    up_conv.visit(f, "recon.up_conv");
    out_conv.visit(f, "recon.out_conv");
  }

  /// Parameters in canonical (checkpoint) order.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit([&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, t); });
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
    return out;
  }

  void zero_grad() const {
    for (auto t : parameters()) t.zero_grad();
  }

  /// Raw network output (unclamped), N×3×sH×sW.
  Tensor<T> forward(const Tensor<T>& lr) const {
    if (lr.rank() != 4 || lr.dim(1) != 3)
      throw ShapeError("forward: expected N×3×H×W input, got " + to_string(lr.shape()));
    if (lr.dim(2) < kMinInputSize || lr.dim(3) < kMinInputSize)
      throw ShapeError("forward: spatial underflow, input " + std::to_string(lr.dim(2)) + "x" +
                       std::to_string(lr.dim(3)) + " is below the minimum " + std::to_string(kMinInputSize) + "x" +
                       std::to_string(kMinInputSize));
    auto f0 = elu(conv2d(lr, sfb));
    Tensor<T> f = f0, total = f0;
    for (const auto& stage : stages) {
      f = stage.forward(f);
      total = add(total, f);
    }
    auto fused = frb_forward(total, frb);
    auto up = pixel_shuffle(conv2d(add(f0, fused), up_conv), config.scale);
    return conv2d(up, out_conv);
  }

  /// Inference path: no graph, output clamped to [0, 1].
  Tensor<T> infer(const Tensor<T>& lr) const {
    NoGradGuard guard;
    auto out = forward(lr);
    for (auto& v : out.mutable_data()) v = std::clamp(v, T(0), T(1));
    return out;
  }
};

template <class T>
Model<T> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Initializer init(cfg.seed);
  const std::size_t C = cfg.channels;
  BlockConfig bc;
  bc.channels = C;
  bc.heads = cfg.heads;
  bc.square_window = cfg.square_window;
  bc.axial_stripe = cfg.axial_stripe;
  bc.mlp_ratio = cfg.mlp_ratio;
  bc.axial_extent = cfg.square_window;
  const std::size_t ca = cfg.effective_ca_ratio();

  Model<T> m;
  m.config = cfg;
  m.sfb = init.conv<T>(3, C, 3);
  for (std::size_t i = 0; i < cfg.num_stages; ++i) {
    DffbParams<T> s;
    s.atb = AtbParams<T>::make(init, bc, cfg.atb_depth);
    s.sesab = SesabParams<T>::make(init, C, cfg.serb_per_sesab, cfg.gconv_groups, ca);
    s.dfb = DfbParams<T>::make(init, C, 2, cfg.dfb_branches, ca);
    m.stages.push_back(std::move(s));
  }
  m.frb = DfbParams<T>::make(init, C, 1, cfg.dfb_branches, ca);
  m.up_conv = init.conv<T>(C, C * cfg.scale * cfg.scale, 3);
  m.out_conv = init.conv<T>(C, 3, 3);
  return m;
}

/// Number of trainable scalars.
template <class T>
std::size_t param_count(const Model<T>& model) {
  std::size_t n = 0;
  model.visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

/// Copies parameter values between precisions (same config required).
template <class To, class From>
Model<To> convert_model(const Model<From>& src) {
  Model<To> dst = build_model<To>(src.config);
  auto s = src.parameters();
  auto d = dst.parameters();
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& out = d[i].mutable_data();
    const auto& in = s[i].data();
    for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<To>(in[k]);
  }
  return dst;
}

}  // namespace dmffn
