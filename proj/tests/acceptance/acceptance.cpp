// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any gate fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>

#include "dmffn/dmffn.hpp"

using namespace dmffn;

namespace {

// Gates.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSec = 300;
constexpr double kOverfitLossRatio = 0.10;
constexpr double kOverfitPsnrDb = 35.0;
constexpr double kOverfitBudgetSec = 900;
constexpr double kBicubicMarginDb = 3.0;
constexpr double kMetricTol = 1e-6;
constexpr double kUniformPsnr = 48.131;
constexpr double kUniformPsnrTol = 1e-3;
constexpr double kUnityTol = 1e-6;
constexpr std::size_t kReferenceParams = 669000;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class P>
void zero_non_norm(const P& p) {
  p.visit([](const std::string& name, const Tensor<double>& t) {
    if (name.find("gamma") != std::string::npos) return;
    auto c = t;
    for (auto& v : c.mutable_data()) v = 0.0;
  }, "p");
}

void gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto results = run_gradcheck_suite<double>(7);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_op, failed;
  for (const auto& r : results) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_op = r.op_name;
    }
    if (!(r.max_rel_error < kGradTol)) failed += " " + r.op_name;
  }
  report(1, "gradient suite", failed.empty() && secs < kGradBudgetSec,
         std::to_string(results.size()) + " ops, worst " + worst_op + fmt(" %.3g (< %.0e), %.1f s (< %.0f s)", worst, kGradTol, secs, kGradBudgetSec) +
             (failed.empty() ? "" : ", failed:" + failed));
}

void identity_at_zero() {
  Initializer init(11);
  BlockConfig bc;
  bc.channels = 8;
  bc.heads = 2;
  bc.square_window = 4;
  bc.axial_extent = 4;
  auto awb = AwbParams<double>::make(init, bc);
  auto swb = SwbParams<double>::make(init, bc);
  auto atb = AtbParams<double>::make(init, bc, 2);
  auto dfb = DfbParams<double>::make(init, 8, 2, 4, 2);
  zero_non_norm(awb);
  zero_non_norm(swb);
  zero_non_norm(atb);
  zero_non_norm(dfb);
  std::mt19937_64 rng(12);
  bool ok = true;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{5, 7}, {8, 8}, {9, 12}}) {
    auto x = random_uniform<double>(Shape{1, 8, h, w}, rng);
    auto y = random_uniform<double>(Shape{1, 8, h, w}, rng);
    ok = ok && awb.forward(x).data() == x.data() && swb.forward(x).data() == x.data() &&
         atb.forward(x).data() == x.data() && dfb_forward(x, y, dfb).data() == add(x, y).data();
  }
  report(2, "identity at zero weights", ok, "AWB, SWB, ATB identity and DFB(a,b)=a+b, bitwise in f64 on 3 sizes");
}

void shape_contract() {
  const std::size_t grid[] = {8, 22, 36, 50, 64};
  std::size_t checked = 0;
  std::string bad;
  std::mt19937_64 rng(13);
  for (std::size_t s : {2u, 3u, 4u}) {
    ModelConfig c;
    c.channels = 8;
    c.heads = 2;
    c.num_stages = 1;
    c.scale = s;
    auto m = build_model<float>(c);
    NoGradGuard ng;
    for (auto H : grid)
      for (auto W : grid) {
        auto y = m.forward(random_uniform<float>(Shape{1, 3, H, W}, rng, 0.f, 1.f));
        ++checked;
        if (y.shape() != Shape{1, 3, s * H, s * W}) bad += " x" + std::to_string(s) + ":" + std::to_string(H) + "x" + std::to_string(W);
      }
  }
  report(3, "shape contract", bad.empty(),
         std::to_string(checked) + " forwards over {8,22,36,50,64}^2 x scales {2,3,4}" + (bad.empty() ? "" : ", wrong:" + bad));
}

Tensor<float> textured_image() {
  const std::size_t N = 64;
  std::vector<float> v(3 * N * N);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < N; ++y)
      for (std::size_t x = 0; x < N; ++x) {
        const double fx = x / (N - 1.0), fy = y / (N - 1.0), cc = static_cast<double>(c);
        double val = 0.45 + 0.2 * std::sin(2 * M_PI * (1.5 * fx + (0.5 + 0.5 * cc) * fy)) + 0.1 * (fx - fy) * (cc - 1);
        val += 0.15 * std::sin(2 * M_PI * (0.8 * x + 0.6 * y) / 5.0 + cc) + 0.105 * std::cos(2 * M_PI * (0.3 * x - 0.95 * y) / 7.0);
        v[(c * N + y) * N + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
  return Tensor<float>(Shape{3, N, N}, std::move(v));
}

void overfit_and_bicubic() {
  ModelConfig mc;
  mc.channels = 16;
  mc.num_stages = 2;
  mc.scale = 2;
  auto model = build_model<float>(mc);
  const auto img = textured_image();
  std::ostringstream quiet;
  auto data = make_pairs<float>({{"textured", img}}, 2, 32, 32, false, 0, quiet);
  TrainConfig tc;
  tc.steps = 1500;
  tc.batch = 1;
  tc.patch = 32;
  tc.augment = false;
  tc.decay_every = 1500;
  AdamState<float> st;
  const auto t0 = std::chrono::steady_clock::now();
  auto losses = train(model, data, tc, st);
  const double secs = seconds_since(t0);
  Upscaler<float> up = [&model](const Tensor<float>& lr) { return model.infer(lr); };
  const double model_psnr = evaluate_image<float>("textured", img, 2, up).psnr_db;
  const double bicubic_psnr = evaluate_image<float>("textured", img, 2, bicubic_upscaler<float>(2)).psnr_db;
  const double ratio = losses.back() / losses.front();
  report(4, "overfit", ratio <= kOverfitLossRatio && model_psnr >= kOverfitPsnrDb && secs < kOverfitBudgetSec,
         fmt("loss %.4g -> %.4g (ratio %.4f <= 0.10), ", losses.front(), losses.back(), ratio) +
             fmt("Y-PSNR %.2f dB (>= 35), %.0f s (< 900 s)", model_psnr, secs));
  report(5, "beats bicubic", model_psnr - bicubic_psnr >= kBicubicMarginDb,
         fmt("model %.2f dB vs bicubic %.2f dB, margin %.2f dB (>= 3)", model_psnr, bicubic_psnr, model_psnr - bicubic_psnr));
}

double oracle_psnr(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return 10 * std::log10(static_cast<double>(a.numel()) / s);
}

double oracle_ssim(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
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
        acc += ((2 * ma * mb + 1e-4) * (2 * (sab - ma * mb) + 9e-4)) /
               ((ma * ma + mb * mb + 1e-4) * (saa - ma * ma + sbb - mb * mb + 9e-4));
      }
    total += acc / static_cast<double>((H - 10) * (W - 10));
  }
  return total / static_cast<double>(C);
}

void metrics_oracle() {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<std::size_t> side(11, 32), chan(0, 1);
  std::normal_distribution<double> noise(0, 0.08);
  double worst_p = 0, worst_s = 0, worst_id = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t C = chan(rng) ? 3 : 1, H = side(rng), W = side(rng);
    auto a = random_uniform<double>(Shape{C, H, W}, rng, 0.0, 1.0);
    auto b = a.detach();
    for (auto& v : b.mutable_data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
    worst_p = std::max(worst_p, std::abs(psnr(a, b) - oracle_psnr(a, b)));
    worst_s = std::max(worst_s, std::abs(ssim(a, b) - oracle_ssim(a, b)));
    worst_id = std::max(worst_id, std::abs(ssim(a, a) - 1.0));
  }
  Tensor<double> u(Shape{3, 16, 16}, 0.4), v(Shape{3, 16, 16}, 0.4 + 1.0 / 255.0);
  const double uniform = psnr(u, v);
  const bool ok = worst_p < kMetricTol && worst_s < kMetricTol && worst_id == 0.0 &&
                  std::abs(uniform - kUniformPsnr) <= kUniformPsnrTol;
  report(6, "metrics oracle", ok,
         fmt("50 pairs: max |dPSNR| %.2g, max |dSSIM| %.2g (< 1e-6), max |ssim(a,a)-1| %.2g; ", worst_p, worst_s, worst_id) +
             fmt("uniform 1/255 PSNR %.4f dB (48.131 +- 0.001)", uniform));
}

void bicubic_resampler() {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<std::size_t> len(1, 96);
  double worst = 0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t in = len(rng), out = len(rng);
    const auto taps = bicubic_taps(in, out, true);
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0;
      for (std::size_t k = 0; k < taps.taps; ++k) s += taps.weight[o * taps.taps + k];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  bool constant_ok = true;
  for (double value : {0.0, 0.3, 1.0}) {
    Tensor<double> c(Shape{3, 17, 23}, value);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 11}, {6, 7}, {51, 69}, {34, 23}}) {
      const auto r = bicubic_resize(c, h, w, true);
      for (double x : r.data()) constant_ok = constant_ok && std::abs(x - value) <= 1e-12;
    }
  }
  report(7, "bicubic resampler", worst < kUnityTol && constant_ok,
         fmt("max |sum(w)-1| %.2g over 10 random sizes (< 1e-6); constants preserved: ", worst) + (constant_ok ? "yes" : "no"));
}

void determinism_and_persistence() {
  ModelConfig mc;
  mc.channels = 8;
  mc.heads = 2;
  mc.num_stages = 1;
  std::mt19937_64 rng(16);
  std::vector<std::pair<std::string, Tensor<float>>> imgs{{"a", random_uniform<float>(Shape{3, 48, 48}, rng, 0.f, 1.f)}};
  std::ostringstream quiet;
  auto data = make_pairs<float>(imgs, 2, 8, 8, true, 3, quiet);
  TrainConfig tc;
  tc.steps = 8;
  tc.batch = 2;
  tc.patch = 8;
  tc.decay_every = 4;

  auto run = [&](Model<float>& m, AdamState<float>& st, std::size_t steps, std::ostream& log,
                 const CheckpointHook<float>& hook = {}) {
    auto c = tc;
    c.steps = steps;
    train(m, data, c, st, &log, hook);
  };
  auto m1 = build_model<float>(mc), m2 = build_model<float>(mc);
  AdamState<float> s1, s2;
  std::ostringstream l1, l2;
  run(m1, s1, 8, l1);
  run(m2, s2, 8, l2);
  const bool log_ok = l1.str() == l2.str() && !l1.str().empty();

  auto probe = random_uniform<float>(Shape{1, 3, 13, 11}, rng, 0.f, 1.f);
  auto loaded = deserialize_checkpoint<float>(serialize_checkpoint(m1, &s1));
  const bool ckpt_ok = loaded.model.forward(probe).data() == m1.forward(probe).data() && *loaded.optim == s1;

  auto m3 = build_model<float>(mc);
  AdamState<float> s3;
  std::ostringstream l3;
  std::string saved;
  run(m3, s3, 4, l3, [&](std::uint64_t, const Model<float>& m, const AdamState<float>& s) { saved = serialize_checkpoint(m, &s); });
  auto resumed = deserialize_checkpoint<float>(saved);
  auto rs = *resumed.optim;
  run(resumed.model, rs, 8, l3);
  bool weights_ok = true;
  auto pa = resumed.model.parameters(), pb = m1.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) weights_ok = weights_ok && pa[i].data() == pb[i].data();
  const bool resume_ok = l3.str() == l1.str() && weights_ok && rs == s1;

  report(8, "determinism and persistence", log_ok && ckpt_ok && resume_ok,
         std::string("loss log bitwise: ") + (log_ok ? "yes" : "no") + ", checkpoint forward bitwise: " + (ckpt_ok ? "yes" : "no") +
             ", resume == uninterrupted: " + (resume_ok ? "yes" : "no"));
}

void calibration() {
  const std::size_t n = param_count(build_model<float>(ModelConfig{}));
  const double delta = 100.0 * (static_cast<double>(n) - kReferenceParams) / kReferenceParams;
  std::printf("[INFO] 9 calibration: default x2 model has %zu parameters vs reference 669K (%+.1f%%), not a gate\n", n, delta);
}

}  // namespace

int main() {
  gradient_suite();
  identity_at_zero();
  shape_contract();
  overfit_and_bicubic();
  metrics_oracle();
  bicubic_resampler();
  determinism_and_persistence();
  calibration();
  std::printf("%s: %d gate(s) failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
