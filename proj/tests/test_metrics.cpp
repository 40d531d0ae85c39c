#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "dmffn/gradcheck.hpp"
#include "dmffn/metrics.hpp"

using namespace dmffn;
namespace fs = std::filesystem;

namespace {

std::mt19937_64 rng(31);

Tensor<double> img(std::size_t c, std::size_t h, std::size_t w) {
  return random_uniform<double>(Shape{c, h, w}, rng, 0.0, 1.0);
}

double mse_psnr(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return 10 * std::log10(1.0 / (s / static_cast<double>(a.numel())));
}

// Every 11×11 window evaluated independently with its own Gaussian weights.
double brute_ssim(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t H = a.dim(1), W = a.dim(2);
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  double total = 0;
  for (std::size_t c = 0; c < a.dim(0); ++c) {
    double acc = 0;
    for (std::size_t y = 0; y + 11 <= H; ++y)
      for (std::size_t x = 0; x + 11 <= W; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double w = g[i][j] / gs;
            const double va = a[(c * H + y + i) * W + x + j], vb = b[(c * H + y + i) * W + x + j];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cv = sab - ma * mb;
        acc += ((2 * ma * mb + 1e-4) * (2 * cv + 9e-4)) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
      }
    total += acc / static_cast<double>((H - 10) * (W - 10));
  }
  return total / static_cast<double>(a.dim(0));
}

}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
  auto a = img(3, 8, 8);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0);
}

TEST(Psnr, UniformOneLevelOffset) {
  Tensor<double> a(Shape{3, 6, 6}, 0.5), b(Shape{3, 6, 6}, 0.5 + 1.0 / 255.0);
  EXPECT_NEAR(psnr(a, b), 20 * std::log10(255.0), 1e-9);
  EXPECT_NEAR(psnr(a, b), 48.1308, 1e-4);
}

TEST(Psnr, MatchesMseOracleAndIsSymmetric) {
  for (int t = 0; t < 5; ++t) {
    auto a = img(3, 9, 7), b = img(3, 9, 7);
    EXPECT_NEAR(psnr(a, b), mse_psnr(a, b), 1e-10);
    EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  }
}

TEST(Psnr, CropAndYChannel) {
  auto a = img(3, 10, 10), b = img(3, 10, 10);
  auto ya = rgb_to_y(a), yb = rgb_to_y(b);
  EXPECT_NEAR(psnr(a, b, 0, true), mse_psnr(ya, yb), 1e-10);
  auto inner = [](const Tensor<double>& t) { return crop_window(t, 2, 2, 6, 6); };
  EXPECT_NEAR(psnr(a, b, 2), mse_psnr(inner(a), inner(b)), 1e-10);
  EXPECT_THROW(psnr(a, b, 5), ShapeError);
  EXPECT_THROW(psnr(a, img(3, 10, 9)), ShapeError);
}

TEST(Psnr, DecreasesWithNoise) {
  auto a = img(1, 16, 16);
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.03, 0.1, 0.3}) {
    auto b = a.detach();
    std::normal_distribution<double> n(0, sigma);
    std::mt19937_64 r(3);
    for (auto& v : b.mutable_data()) v += n(r);
    const double p = psnr(a, b);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, IdenticalIsOne) {
  auto a = img(3, 16, 14);
  EXPECT_DOUBLE_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, ConstantImages) {
  Tensor<double> a(Shape{1, 11, 11}, 0.25), b(Shape{1, 11, 11}, 0.75);
  EXPECT_NEAR(ssim(a, b), (0.375 + 1e-4) / (0.625 + 1e-4), 1e-9);
}

TEST(Ssim, MatchesBruteForceWindows) {
  for (int t = 0; t < 3; ++t) {
    auto a = img(3, 14, 17), b = a.detach();
    std::normal_distribution<double> n(0, 0.1);
    for (auto& v : b.mutable_data()) v += n(rng);
    EXPECT_NEAR(ssim(a, b), brute_ssim(a, b), 1e-6);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  auto a = img(1, 20, 20), b = img(1, 20, 20);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LE(ssim(a, b), 1.0);
  EXPECT_GE(ssim(a, b), -1.0);
  EXPECT_THROW(ssim(img(1, 10, 20), img(1, 10, 20)), ShapeError);
}

TEST(Baselines, KnownRowsPresent) {
  auto rows = baseline_table();
  auto find = [&](int s, const std::string& m, const std::string& set) -> const BaselineRow* {
    for (const auto& r : rows)
      if (r.scale == s && r.model == m && r.set == set) return &r;
    return nullptr;
  };
  auto swin = find(2, "SwinIR", "Set5");
  ASSERT_NE(swin, nullptr);
  EXPECT_EQ(swin->psnr, "38.14");
  EXPECT_EQ(swin->ssim, "0.9611");
  auto ours = find(2, "DMFFN", "Set5");
  ASSERT_NE(ours, nullptr);
  EXPECT_EQ(ours->psnr, "38.2");
  EXPECT_EQ(ours->ssim, "0.9613");
}

TEST(Report, CsvLayoutAndMeans) {
  EvalReport r;
  r.rows = {{"a.png", 30.0, 0.9}, {"b.png", 32.5, 0.8}, {"c.png", std::numeric_limits<double>::infinity(), 1.0}};
  r.scale = 3;
  r.crop_border = 3;
  r.model_params = 1234;
  r.finalize();
  std::ostringstream os;
  write_csv(r, os);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "image,psnr_db,ssim");
  std::getline(in, line);
  EXPECT_EQ(line, "a.png,30.0000,0.900000");
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line, "c.png,inf,1.000000");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 7), "# mean,");
  EXPECT_NEAR(r.mean_ssim, 0.9, 1e-12);
  std::getline(in, line);
  EXPECT_EQ(line, "# params,1234");
  int baselines = 0;
  while (std::getline(in, line))
    if (line.rfind("# baseline,3,", 0) == 0) ++baselines;
    else if (line.rfind("# baseline,", 0) == 0) ADD_FAILURE() << line;
  EXPECT_GT(baselines, 0);
}

TEST(Report, EvaluateBicubicMatchesDirectComputation) {
  auto dir = fs::temp_directory_path() / "dmffn_metrics_eval";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto hr0 = img(3, 26, 30);
  write_png(from_tensor(hr0), (dir / "x.png").string());
  write_png(from_tensor(img(3, 4, 4)), (dir / "y_tiny.png").string());
  std::ostringstream log;
  auto rep = evaluate<double>(bicubic_upscaler<double>(2), dir.string(), 2, 0, log);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_NE(log.str().find("y_tiny.png"), std::string::npos);

  auto hr = to_tensor<double>(read_png((dir / "x.png").string()));
  auto lr = quantize_tensor(bicubic_resize(hr, 13, 15, true));
  auto sr = quantize_tensor(bicubic_resize(lr, 26, 30, true));
  EXPECT_NEAR(rep.rows[0].psnr_db, psnr(sr, hr, 2, true), 1e-9);
  EXPECT_NEAR(rep.rows[0].ssim, ssim(sr, hr, true, 2), 1e-9);
  EXPECT_DOUBLE_EQ(rep.mean_psnr, rep.rows[0].psnr_db);
}
