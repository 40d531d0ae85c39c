#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dmffn/attention.hpp"
#include "dmffn/gradcheck.hpp"
#include "dmffn/gradcheck_suite.hpp"

using namespace dmffn;

namespace {

std::mt19937_64 rng(99);

Tensor<double> rnd(Shape s, double a = 1.0) { return random_uniform<double>(std::move(s), rng, -a, a); }

BlockConfig small_block(std::size_t stripe = 1) {
  BlockConfig bc;
  bc.channels = 8;
  bc.heads = 2;
  bc.square_window = 4;
  bc.axial_stripe = stripe;
  bc.mlp_ratio = 2;
  bc.axial_extent = 4;
  return bc;
}

template <class P>
void randomize_all(const P& p, double a = 0.5) {
  p.visit([a](const std::string&, const Tensor<double>& t) {
    auto c = t;
    std::uniform_real_distribution<double> d(-a, a);
    for (auto& v : c.mutable_data()) v = d(rng);
  }, "p");
}

// Per-pixel feature vectors of an N=1 C×H×W map: f(c, y, x).
struct Map {
  std::size_t C, H, W;
  std::vector<double> v;
  double at(std::size_t c, std::size_t y, std::size_t x) const { return v[(c * H + y) * W + x]; }
};

Map map_of(const Tensor<double>& t) { return {t.dim(1), t.dim(2), t.dim(3), t.data()}; }

Map apply_linear(const Map& m, const LinearParams<double>& p) {
  const std::size_t D = p.weight.dim(0);
  Map out{D, m.H, m.W, std::vector<double>(D * m.H * m.W)};
  for (std::size_t y = 0; y < m.H; ++y)
    for (std::size_t x = 0; x < m.W; ++x)
      for (std::size_t o = 0; o < D; ++o) {
        double s = p.bias[o];
        for (std::size_t c = 0; c < m.C; ++c) s += p.weight[o * m.C + c] * m.at(c, y, x);
        out.v[(o * m.H + y) * m.W + x] = s;
      }
  return out;
}

struct Pos {
  std::size_t y, x;
};

// Multi-head attention inside explicit windows. q/k/v channels start at
// q0/k0/v0 and span `width`; each window lists its tokens row-major over a
// rows × cols grid. Bias table rows: (dy + er - 1)(2ec - 1) + dx + ec - 1,
// offsets clipped at the extent.
void window_attention_oracle(const Map& qkv, std::size_t q0, std::size_t k0, std::size_t v0, std::size_t width,
                             std::size_t heads, const std::vector<std::vector<Pos>>& windows, std::size_t cols,
                             const RelativeBias<double>& bias, Map& out, std::size_t out0) {
  const std::size_t d = width / heads;
  const auto er = static_cast<long>(bias.extent_rows), ec = static_cast<long>(bias.extent_cols);
  for (const auto& win : windows) {
    const std::size_t L = win.size();
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(L);
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          double dot = 0;
          for (std::size_t c = 0; c < d; ++c)
            dot += qkv.at(q0 + h * d + c, win[i].y, win[i].x) * qkv.at(k0 + h * d + c, win[j].y, win[j].x);
          long dy = static_cast<long>(i / cols) - static_cast<long>(j / cols);
          long dx = static_cast<long>(i % cols) - static_cast<long>(j % cols);
          dy = std::clamp(dy, -(er - 1), er - 1);
          dx = std::clamp(dx, -(ec - 1), ec - 1);
          const auto row = static_cast<std::size_t>((dy + er - 1) * (2 * ec - 1) + dx + ec - 1);
          s[j] = dot / std::sqrt(static_cast<double>(d)) + bias.table[row * bias.heads() + h];
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < d; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < L; ++j) acc += s[j] / z * qkv.at(v0 + h * d + c, win[j].y, win[j].x);
          out.v[((out0 + h * d + c) * out.H + win[i].y) * out.W + win[i].x] = acc;
        }
      }
  }
}

}  // namespace

TEST(Windows, SquarePartitionIndexOracle) {
  auto x = rnd({2, 3, 4, 6});
  WindowSpec spec{WindowKind::square, 2};
  auto w = window_partition(x, spec);
  ASSERT_EQ(w.shape(), (Shape{12, 4, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t xx = 0; xx < 6; ++xx) {
          const std::size_t win = (n * 2 + y / 2) * 3 + xx / 2, tok = (y % 2) * 2 + xx % 2;
          EXPECT_EQ(w[(win * 4 + tok) * 3 + c], x[((n * 3 + c) * 4 + y) * 6 + xx]);
        }
  EXPECT_EQ(window_reverse(w, spec, 2, 4, 6).data(), x.data());
}

TEST(Windows, AxialStripesIndexOracle) {
  auto x = rnd({1, 2, 4, 6});
  WindowSpec rows{WindowKind::axial_row, 2}, cols{WindowKind::axial_col, 3};
  auto r = window_partition(x, rows);
  ASSERT_EQ(r.shape(), (Shape{2, 12, 2}));
  auto c = window_partition(x, cols);
  ASSERT_EQ(c.shape(), (Shape{2, 12, 2}));
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t xx = 0; xx < 6; ++xx) {
        const double v = x[(ch * 4 + y) * 6 + xx];
        EXPECT_EQ(r[((y / 2) * 12 + (y % 2) * 6 + xx) * 2 + ch], v);
        EXPECT_EQ(c[((xx / 3) * 12 + y * 3 + xx % 3) * 2 + ch], v);
      }
  EXPECT_EQ(window_reverse(r, rows, 1, 4, 6).data(), x.data());
  EXPECT_EQ(window_reverse(c, cols, 1, 4, 6).data(), x.data());
  EXPECT_EQ(window_dims(rows, 4, 6).cols, 6u);
  EXPECT_EQ(window_dims(cols, 4, 6).rows, 4u);
}

TEST(Windows, DivisibilityErrorNamesAxis) {
  try {
    window_partition(rnd({1, 1, 5, 4}), WindowSpec{WindowKind::square, 2});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
  }
}

TEST(RelativeBias, IndexClipsAtExtent) {
  Initializer init(0);
  auto b = RelativeBias<double>::make(init, 1, 2, 1);  // offsets dx ∈ {-1, 0, 1}
  auto idx = b.index(WindowDims{1, 4});
  // token 0 vs token 3: dx = -3 clipped to -1 → column 0
  EXPECT_EQ(idx[0 * 4 + 3], 0u);
  EXPECT_EQ(idx[3 * 4 + 0], 2u);
  EXPECT_EQ(idx[1 * 4 + 1], 1u);
  EXPECT_EQ(b.table.shape(), (Shape{3, 1}));
}

TEST(Mhsa, MatchesScalarOracle) {
  Initializer init(5);
  auto p = AttentionParams<double>::make(init, 4, 2, 2);
  randomize_all(p);
  auto x = rnd({1, 4, 4, 4});
  WindowSpec spec{WindowKind::square, 2};
  auto out = window_reverse(mhsa(window_partition(x, spec), p, WindowDims{2, 2}), spec, 1, 4, 4);

  auto qkv = apply_linear(map_of(x), p.qkv);
  std::vector<std::vector<Pos>> wins;
  for (std::size_t wy = 0; wy < 2; ++wy)
    for (std::size_t wx = 0; wx < 2; ++wx) {
      std::vector<Pos> w;
      for (std::size_t i = 0; i < 4; ++i) w.push_back({wy * 2 + i / 2, wx * 2 + i % 2});
      wins.push_back(w);
    }
  Map att{4, 4, 4, std::vector<double>(64)};
  window_attention_oracle(qkv, 0, 4, 8, 4, 2, wins, 2, p.rel_bias, att, 0);
  auto ref = apply_linear(att, p.proj);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out[i], ref.v[i], 1e-12);
}

TEST(Awb, AxialAttentionMatchesScalarOracle) {
  for (std::size_t stripe : {1u, 2u}) {
    Initializer init(6);
    auto p = AwbParams<double>::make(init, small_block(stripe));
    randomize_all(p);
    auto y = rnd({1, 8, 4, 6});
    auto out = p.axial_attention(y);
    auto qkv = apply_linear(map_of(y), p.qkv);
    std::vector<std::vector<Pos>> row_wins, col_wins;
    for (std::size_t s = 0; s < 4 / stripe; ++s) {
      std::vector<Pos> w;
      for (std::size_t r = 0; r < stripe; ++r)
        for (std::size_t x = 0; x < 6; ++x) w.push_back({s * stripe + r, x});
      row_wins.push_back(w);
    }
    for (std::size_t s = 0; s < 6 / stripe; ++s) {
      std::vector<Pos> w;
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < stripe; ++c) w.push_back({r, s * stripe + c});
      col_wins.push_back(w);
    }
    Map att{8, 4, 6, std::vector<double>(8 * 24)};
    window_attention_oracle(qkv, 0, 8, 16, 4, 1, row_wins, 6, p.row_bias, att, 0);
    window_attention_oracle(qkv, 4, 12, 20, 4, 1, col_wins, stripe, p.col_bias, att, 4);
    auto ref = apply_linear(att, p.proj);
    for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_NEAR(out[i], ref.v[i], 1e-12) << "stripe " << stripe;
  }
}

TEST(Awb, OddHeadsRejected) {
  Initializer init(0);
  auto bc = small_block();
  bc.heads = 1;
  EXPECT_THROW(AwbParams<double>::make(init, bc), ShapeError);
}

TEST(Swb, WindowShrinksAndPadsForAwkwardSizes) {
  Initializer init(1);
  auto p = SwbParams<double>::make(init, small_block());
  randomize_all(p);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 3}, {5, 7}, {9, 4}}) {
    auto y = p.forward(rnd({1, 8, h, w}));
    EXPECT_EQ(y.shape(), (Shape{1, 8, h, w}));
  }
}

TEST(IdentityAtZero, AwbSwbAtbAreExactIdentities) {
  Initializer init(2);
  auto bc = small_block(2);
  auto awb = AwbParams<double>::make(init, bc);
  auto swb = SwbParams<double>::make(init, bc);
  auto atb = AtbParams<double>::make(init, bc, 2);
  auto zero_weights = [](auto& p) {
    p.visit([](const std::string& name, const Tensor<double>& t) {
      if (name.find("gamma") != std::string::npos) return;  // norms stay at identity
      auto c = t;
      for (auto& v : c.mutable_data()) v = 0.0;
    }, "p");
  };
  zero_weights(awb);
  zero_weights(swb);
  zero_weights(atb);
  auto x = rnd({1, 8, 5, 7});
  EXPECT_EQ(awb.forward(x).data(), x.data());
  EXPECT_EQ(swb.forward(x).data(), x.data());
  EXPECT_EQ(atb.forward(x).data(), x.data());
}

TEST(Blocks, GradcheckAwbSwb) {
  Initializer init(3);
  BlockConfig bc = small_block(2);
  bc.channels = 4;
  auto awb = AwbParams<double>::make(init, bc);
  randomize_all(awb);
  auto x = rnd({1, 4, 3, 5});
  auto w = rnd({1, 4, 3, 5});
  auto params = detail::collect_params<double>(awb);
  params.insert(params.begin(), x);
  auto r = check_gradients<double>("awb", [&] { return weighted_sum(awb.forward(x), w); }, params, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
