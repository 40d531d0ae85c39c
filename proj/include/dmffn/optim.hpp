#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dmffn/tensor.hpp"

namespace dmffn {

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers per parameter plus the step count.
template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;

  static AdamState zeros_like(const std::vector<Tensor<T>>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), T(0));
      s.v.emplace_back(p.numel(), T(0));
    }
    return s;
  }

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update; arithmetic in double, storage in T.
/// Parameters without a gradient buffer are treated as having zero gradient.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamHyper& h) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) + " buffers for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel())
      throw ShapeError("adam_step: moment buffer " + std::to_string(i) + " does not match parameter shape " +
                       to_string(params[i].shape()));
  const std::uint64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].mutable_data();
    const auto& g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g.empty() ? 0.0 : static_cast<double>(g[k]);
      const double mk = h.beta1 * static_cast<double>(m[k]) + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * static_cast<double>(v[k]) + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = h.lr * (mk / bc1) / (std::sqrt(vk / bc2) + h.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
    }
  }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * f);
  }
  return norm;
}

}  // namespace dmffn
