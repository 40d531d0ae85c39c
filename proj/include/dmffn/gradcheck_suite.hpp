#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dmffn/gradcheck.hpp"
#include "dmffn/model.hpp"
#include "dmffn/trainer.hpp"

namespace dmffn {

template <class T>
struct GradcheckSettings {
  T eps;
  double tolerance;
};

/// Step and pass threshold per precision.
template <class T>
GradcheckSettings<T> default_gradcheck_settings() {
  if constexpr (sizeof(T) >= 8) return {T(1e-6), 1e-4};
  else return {T(1e-2), 5e-2};
}

namespace detail {

template <class T, class P>
std::vector<Tensor<T>> collect_params(const P& p) {
  std::vector<Tensor<T>> out;
  p.visit([&](const std::string&, const Tensor<T>& t) { out.push_back(t); }, "p");
  return out;
}

/// Overwrites parameters with U(-a, a) so that zero-initialized tables and
/// biases take part in the check.
template <class T>
void randomize(std::vector<Tensor<T>>& params, std::mt19937_64& rng, double a = 0.5) {
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v = static_cast<T>(dist(rng));
}

}  // namespace detail

/// Finite-difference checks over every differentiable operation and block,
/// each with a random input and a random probe weighting of the output.
template <class T>
class GradcheckSuite {
 public:
  explicit GradcheckSuite(std::uint64_t seed = 7) : rng_(seed), init_(seed + 1) {}

  std::vector<GradReport> run() {
    add_conv("conv2d_dense_3x3", 4, 6, 3, 1, 1, 1, PadMode::zero, 5, 5);
    add_conv("conv2d_grouped", 4, 6, 3, 2, 1, 1, PadMode::zero, 5, 5);
    add_conv("conv2d_depthwise", 4, 4, 3, 4, 1, 1, PadMode::zero, 5, 5);
    add_conv("conv2d_pointwise_1x1", 4, 6, 1, 1, 1, 0, PadMode::zero, 5, 5);
    add_conv("conv2d_grouped_1x1", 4, 4, 1, 2, 1, 0, PadMode::zero, 5, 5);
    add_conv("conv2d_strided", 3, 2, 3, 1, 2, 0, PadMode::zero, 7, 6);
    add_conv("conv2d_reflect_pad", 3, 2, 3, 1, 1, 1, PadMode::reflect, 5, 4);

    {
      auto p = init_.linear<T>(5, 3);
      auto x = input({2, 4, 5});
      unary_check("linear", x, [p](const Tensor<T>& v) { return linear(v, p); }, collect(p));
    }
    {
      auto p = init_.norm<T>(4);
      auto x = input({2, 4, 3, 3});
      unary_check("layer_norm_channels", x, [p](const Tensor<T>& v) { return layer_norm(v, p, 1); }, collect(p));
      auto q = init_.norm<T>(5);
      auto y = input({3, 5});
      unary_check("layer_norm_last", y, [q](const Tensor<T>& v) { return layer_norm(v, q, 1); }, collect(q));
    }
    for (auto kind : {Activation::elu, Activation::gelu, Activation::relu, Activation::sigmoid}) {
      const char* names[] = {"elu", "gelu", "relu", "sigmoid"};
      auto x = input({3, 7}, 2.0);
      unary_check(names[static_cast<int>(kind)], x, [kind](const Tensor<T>& v) { return activation(kind, v); }, {});
    }
    unary_check("softmax", input({2, 3, 5}, 2.0), [](const Tensor<T>& v) { return softmax(v, 2); }, {});
    unary_check("softmax_axis1", input({2, 3, 5}, 2.0), [](const Tensor<T>& v) { return softmax(v, 1); }, {});
    unary_check("pixel_shuffle", input({1, 8, 2, 3}), [](const Tensor<T>& v) { return pixel_shuffle(v, 2); }, {});
    unary_check("pixel_unshuffle", input({1, 2, 4, 6}), [](const Tensor<T>& v) { return pixel_unshuffle(v, 2); }, {});
    unary_check("global_avg_pool", input({2, 3, 3, 4}), [](const Tensor<T>& v) { return global_avg_pool(v); }, {});
    unary_check("max_pool2d", input({1, 2, 7, 7}), [](const Tensor<T>& v) { return max_pool2d(v, 3, 2); }, {});
    unary_check("resize_bilinear", input({1, 2, 3, 4}), [](const Tensor<T>& v) { return resize_bilinear(v, 7, 5); }, {});
    unary_check("reflect_pad2d", input({1, 2, 3, 4}), [](const Tensor<T>& v) { return reflect_pad2d(v, 2, 1); }, {});
    {
      auto b = input({2, 4, 3});
      unary_check("matmul", input({2, 3, 4}), [b](const Tensor<T>& v) { return matmul(v, b); }, {b});
    }
    {
      auto b = input({2, 1, 4});
      unary_check("mul_broadcast", input({2, 3, 4}), [b](const Tensor<T>& v) { return mul(v, b); }, {b});
    }

    {
      BlockConfig bc = block_config();
      auto p = AttentionParams<T>::make(init_, bc.channels, bc.heads, bc.square_window);
      auto params = collect(p);
      detail::randomize(params, rng_);
      WindowDims d{4, 4};
      unary_check("mhsa", input({3, 16, 4}), [p, d](const Tensor<T>& v) { return mhsa(v, p, d); }, params);
    }
    {
      auto p = AwbParams<T>::make(init_, block_config());
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("awb", input({1, 4, 5, 6}), [p](const Tensor<T>& v) { return p.forward(v); }, params);
    }
    {
      auto p = SwbParams<T>::make(init_, block_config());
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("swb", input({1, 4, 5, 6}), [p](const Tensor<T>& v) { return p.forward(v); }, params);
    }
    {
      auto p = AtbParams<T>::make(init_, block_config(), 1);
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("atb", input({1, 4, 5, 5}), [p](const Tensor<T>& v) { return p.forward(v); }, params);
    }
    {
      auto p = CaParams<T>::make(init_, 8, 4);
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("channel_attention", input({2, 8, 3, 3}), [p](const Tensor<T>& v) { return channel_attention(v, p); },
                  params);
    }
    {
      auto p = EsaParams<T>::make(init_, 4);
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("esa", input({1, 4, 6, 7}), [p](const Tensor<T>& v) { return esa(v, p); }, params);
      unary_check("esa_pooled", input({1, 4, 15, 16}), [p](const Tensor<T>& v) { return esa(v, p); }, params);
    }
    {
      auto p = SerbParams<T>::make(init_, 4, 2, 4);
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("serb", input({1, 4, 6, 6}), [p](const Tensor<T>& v) { return serb_forward(v, p); }, params);
    }
    {
      auto p = DfbParams<T>::make(init_, 4, 2, 2, 4);
      auto params = collect(p);
      detail::randomize(params, rng_);
      auto b = input({1, 4, 4, 5});
      params.push_back(b);
      unary_check("dfb", input({1, 4, 4, 5}), [p, b](const Tensor<T>& v) { return dfb_forward(v, b, p); }, params);
    }
    {
      auto p = DfbParams<T>::make(init_, 4, 1, 4, 4);
      auto params = collect(p);
      detail::randomize(params, rng_);
      unary_check("frb", input({1, 4, 4, 5}), [p](const Tensor<T>& v) { return frb_forward(v, p); }, params);
    }
    {
      auto b = input({1, 3, 4, 5});
      unary_check("l1_loss", input({1, 3, 4, 5}), [b](const Tensor<T>& v) { return l1_loss(v, b); }, {b});
    }
    add_model();
    return reports_;
  }

 private:
  BlockConfig block_config() const {
    BlockConfig bc;
    bc.channels = 4;
    bc.heads = 2;
    bc.square_window = 4;
    bc.axial_stripe = 2;
    bc.mlp_ratio = 2;
    bc.axial_extent = 4;
    return bc;
  }

  template <class P>
  std::vector<Tensor<T>> collect(const P& p) {
    return detail::collect_params<T>(p);
  }

  Tensor<T> input(Shape s, double a = 1.0) { return random_uniform<T>(std::move(s), rng_, T(-a), T(a)); }

  void unary_check(const std::string& name, Tensor<T> x, std::function<Tensor<T>(const Tensor<T>&)> f,
                   std::vector<Tensor<T>> extra) {
    Tensor<T> probe;
    {
      NoGradGuard g;
      probe = random_uniform<T>(f(x).shape(), rng_);
    }
    std::vector<Tensor<T>> wrt{x};
    wrt.insert(wrt.end(), extra.begin(), extra.end());
    const auto s = default_gradcheck_settings<T>();
    reports_.push_back(check_gradients<T>(name, [x, f, probe] { return weighted_sum(f(x), probe); }, wrt, s.eps,
                                          s.tolerance));
  }

  void add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups,
                std::size_t stride, std::size_t pad, PadMode mode, std::size_t H, std::size_t W) {
    auto p = init_.conv<T>(cin, cout, k, groups, true, stride, pad);
    p.pad_mode = mode;
    auto params = collect(p);
    detail::randomize(params, rng_);
    unary_check(name, input({2, cin, H, W}), [p](const Tensor<T>& v) { return conv2d(v, p); }, params);
  }

  void add_model() {
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.num_stages = 1;
    cfg.heads = 2;
    cfg.square_window = 4;
    cfg.axial_stripe = 1;
    cfg.gconv_groups = 2;
    cfg.ca_ratio = 2;
    cfg.dfb_branches = 2;
    cfg.scale = 2;
    cfg.seed = 3;
    auto m = build_model<T>(cfg);
    auto params = m.parameters();
    detail::randomize(params, rng_, 0.3);
    unary_check("model_c4_stages1", input({1, 3, 6, 6}), [m](const Tensor<T>& v) { return m.forward(v); }, params);
  }

  std::mt19937_64 rng_;
  Initializer init_;
  std::vector<GradReport> reports_;
};

template <class T>
std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed = 7) {
  return GradcheckSuite<T>(seed).run();
}

}  // namespace dmffn
