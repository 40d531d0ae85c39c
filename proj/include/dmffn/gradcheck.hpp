#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dmffn/ops.hpp"

namespace dmffn {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  bool passed = false;
  double tolerance = 1e-4;
};

/// Central differences: g[i] = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// `x` is perturbed in place and restored bit-exactly before returning.
template <class T>
std::vector<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x, T eps) {
  if (!(eps > T(0))) throw Error("finite_diff_grad: eps must be positive");
  NoGradGuard guard;
  auto& d = x.mutable_data();
  std::vector<T> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const T orig = d[i];
    d[i] = orig + eps;
    const T fp = f(x);
    d[i] = orig - eps;
    const T fm = f(x);
    d[i] = orig;
    g[i] = (fp - fm) / (T(2) * eps);
  }
  return g;
}

/// Elementwise relative error |a-n| / max(|a|, |n|, floor), maximised.
///
/// `floor` keeps components that are zero up to round-off from dominating;
/// it is set relative to the largest numerical component.
template <class T>
double max_relative_error(const std::vector<T>& analytic, const std::vector<T>& numeric, double floor_ratio = 1e-3) {
  double scale = 0.0;
  for (T v : numeric) scale = std::max(scale, std::abs(static_cast<double>(v)));
  const double floor = std::max(floor_ratio * scale, 1e-10);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

/// Gradient check of a scalar-valued function of several tracked tensors.
///
/// `loss` must build a fresh graph from the given tensors every call. The
/// analytic gradient from one backward() is compared against central
/// differences for every element of every tensor in `wrt`.
template <class T>
GradReport check_gradients(const std::string& name, const std::function<Tensor<T>()>& loss,
                           std::vector<Tensor<T>> wrt, T eps = T(1e-4), double tolerance = 1e-4) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor<T> l = loss();
    backward(l);
  }
  GradReport rep{name, 0.0, false, tolerance};
  std::vector<T> analytic, numeric;
  for (auto& t : wrt) {
    std::vector<T> a = t.has_grad() ? t.grad() : std::vector<T>(t.numel(), T(0));
    std::function<T(const Tensor<T>&)> f = [&](const Tensor<T>&) { return loss().item(); };
    std::vector<T> n = finite_diff_grad<T>(f, t, eps);
    analytic.insert(analytic.end(), a.begin(), a.end());
    numeric.insert(numeric.end(), n.begin(), n.end());
  }
  rep.max_rel_error = max_relative_error(analytic, numeric);
  rep.passed = rep.max_rel_error <= tolerance;
  return rep;
}

/// Uniform [-1, 1] tensor from a seeded generator.
template <class T>
Tensor<T> random_uniform(Shape shape, std::mt19937_64& rng, T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

/// Scalar probe sum(out ⊙ weights) used to turn a tensor-valued map into a loss
/// with non-uniform upstream gradient.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& out, const Tensor<T>& weights) {
  return sum(mul(out, weights));
}

}  // namespace dmffn
