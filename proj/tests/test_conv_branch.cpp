#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dmffn/conv_branch.hpp"
#include "dmffn/gradcheck.hpp"
#include "dmffn/gradcheck_suite.hpp"

using namespace dmffn;

namespace {

std::mt19937_64 rng(2024);

Tensor<double> rnd(Shape s) { return random_uniform<double>(std::move(s), rng); }

template <class P>
void fill_all(const P& p, double value) {
  p.visit([value](const std::string&, const Tensor<double>& t) {
    auto c = t;
    for (auto& v : c.mutable_data()) v = value;
  }, "p");
}

template <class P>
void randomize_all(const P& p) {
  auto params = detail::collect_params<double>(p);
  detail::randomize(params, rng);
}

}  // namespace

TEST(ChannelAttention, MatchesScalarOracle) {
  Initializer init(0);
  auto p = CaParams<double>::make(init, 8, 4);
  randomize_all(p);
  auto x = rnd({2, 8, 3, 4});
  auto y = channel_attention(x, p);
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> pooled(8), hidden(2);
    for (std::size_t c = 0; c < 8; ++c) {
      for (std::size_t i = 0; i < 12; ++i) pooled[c] += x[(n * 8 + c) * 12 + i];
      pooled[c] /= 12;
    }
    for (std::size_t r = 0; r < 2; ++r) {
      double s = p.reduce.bias[r];
      for (std::size_t c = 0; c < 8; ++c) s += p.reduce.weight[r * 8 + c] * pooled[c];
      hidden[r] = std::max(s, 0.0);
    }
    for (std::size_t c = 0; c < 8; ++c) {
      double s = p.expand.bias[c];
      for (std::size_t r = 0; r < 2; ++r) s += p.expand.weight[c * 2 + r] * hidden[r];
      const double gate = 1 / (1 + std::exp(-s));
      for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(y[(n * 8 + c) * 12 + i], x[(n * 8 + c) * 12 + i] * gate, 1e-12);
    }
  }
}

TEST(ChannelAttention, ZeroWeightsGateByHalf) {
  Initializer init(0);
  auto p = CaParams<double>::make(init, 4, 2);
  fill_all(p, 0.0);
  auto x = rnd({1, 4, 2, 2});
  auto y = channel_attention(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i] * 0.5);
  EXPECT_THROW(CaParams<double>::make(init, 6, 4), ShapeError);
}

TEST(Esa, ZeroWeightsGateByHalfAndShapes) {
  Initializer init(1);
  auto p = EsaParams<double>::make(init, 8);
  fill_all(p, 0.0);
  auto x = rnd({1, 8, 5, 6});
  auto y = esa(x, p);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i] * 0.5);
  randomize_all(p);
  for (std::size_t s : {3u, 8u, 15u, 20u}) EXPECT_EQ(esa(rnd({1, 8, s, s + 1}), p).shape(), (Shape{1, 8, s, s + 1}));
  EXPECT_THROW(esa(rnd({1, 8, 2, 5}), p), ShapeError);
}

TEST(Esa, MaskMatchesComposition) {
  Initializer init(2);
  auto p = EsaParams<double>::make(init, 4);
  randomize_all(p);
  auto x = rnd({1, 4, 16, 16});  // strided branch is 7×7, so the pool is active
  auto m = conv2d(x, p.reduce);
  auto low = max_pool2d(conv2d(m, p.stride_conv), 7, 3);
  ASSERT_EQ(low.dim(2), 1u);
  auto up = resize_bilinear(conv2d(low, p.body_conv), 16, 16);
  auto mask = sigmoid(conv2d(add(up, m), p.expand));
  auto ref = mul(x, mask);
  EXPECT_EQ(esa(x, p).data(), ref.data());
}

TEST(Serb, MatchesComposition) {
  Initializer init(3);
  auto p = SerbParams<double>::make(init, 8, 4, 4);
  randomize_all(p);
  auto x = rnd({1, 8, 6, 5});
  auto stage = [](const SerbStage<double>& s, const Tensor<double>& v) {
    auto sep = elu(conv2d(conv2d(conv2d(v, s.gconv_in), s.dwconv), s.gconv_out));
    return add(add(v, conv2d(v, s.skip_conv)), sep);
  };
  auto ref = esa(channel_attention(stage(p.stage2, elu(stage(p.stage1, x))), p.ca), p.esa);
  EXPECT_EQ(serb_forward(x, p).data(), ref.data());
  EXPECT_EQ(p.stage1.gconv_in.groups, 4u);
  EXPECT_EQ(p.stage1.dwconv.groups, 8u);
  EXPECT_THROW(serb_forward(rnd({1, 4, 6, 5}), p), ShapeError);
}

TEST(Sesab, EmptyStackIsIdentityAndResidualOtherwise) {
  Initializer init(4);
  auto empty = SesabParams<double>::make(init, 4, 0, 2, 2);
  auto x = rnd({1, 4, 5, 5});
  EXPECT_EQ(empty.forward(x).data(), x.data());
  auto two = SesabParams<double>::make(init, 4, 2, 2, 2);
  auto ref = add(x, serb_forward(serb_forward(x, two.blocks[0]), two.blocks[1]));
  EXPECT_EQ(two.forward(x).data(), ref.data());
}

TEST(ConvBranch, Gradchecks) {
  Initializer init(5);
  auto p = SerbParams<double>::make(init, 4, 2, 2);
  randomize_all(p);
  auto x = rnd({1, 4, 5, 6});
  auto w = rnd({1, 4, 5, 6});
  auto params = detail::collect_params<double>(p);
  params.push_back(x);
  auto r = check_gradients<double>("serb", [&] { return weighted_sum(serb_forward(x, p), w); }, params, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
