#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dmffn/layers.hpp"

namespace dmffn {

/// Seeded parameter factory. Every draw advances one generator, so a model
/// built with the same seed and the same construction order is bitwise
/// reproducible.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  Tensor<T> zeros(Shape shape) {
    return Tensor<T>(std::move(shape), T(0), true);
  }

  template <class T>
  Tensor<T> ones(Shape shape) {
    return Tensor<T>(std::move(shape), T(1), true);
  }

  /// He-uniform with leaky slope `a`: U(-b, b), b = sqrt(6 / ((1 + a²) fan_in)).
  /// The default a = √5 gives b = 1/sqrt(fan_in).
  template <class T>
  Tensor<T> he_uniform(Shape shape, std::size_t fan_in, double a = std::sqrt(5.0)) {
    const double bound = std::sqrt(6.0 / ((1.0 + a * a) * static_cast<double>(fan_in)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  /// Normal(0, std) truncated to ±2 std by rejection.
  template <class T>
  Tensor<T> trunc_normal(Shape shape, double stddev = 0.02) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(numel(shape));
    for (auto& x : v) {
      double s;
      do s = dist(rng_);
      while (std::abs(s) > 2.0 * stddev);
      x = static_cast<T>(s);
    }
    return Tensor<T>(std::move(shape), std::move(v), true);
  }

  template <class T>
  ConvParams<T> conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups = 1, bool bias = true,
                     std::size_t stride = 1, std::size_t padding = static_cast<std::size_t>(-1)) {
    if (groups == 0 || cin % groups != 0 || cout % groups != 0)
      throw ShapeError("conv: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                       " not divisible by groups " + std::to_string(groups));
    ConvParams<T> p;
    p.weight = he_uniform<T>(Shape{cout, cin / groups, k, k}, cin / groups * k * k);
    if (bias) p.bias = zeros<T>(Shape{cout});
    p.stride = stride;
    p.padding = padding == static_cast<std::size_t>(-1) ? k / 2 : padding;
    p.groups = groups;
    return p;
  }

  template <class T>
  LinearParams<T> linear(std::size_t din, std::size_t dout) {
    return {trunc_normal<T>(Shape{dout, din}), zeros<T>(Shape{dout})};
  }

  template <class T>
  LayerNormParams<T> norm(std::size_t c) {
    return {ones<T>(Shape{c}), zeros<T>(Shape{c}), T(1e-5)};
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace dmffn
