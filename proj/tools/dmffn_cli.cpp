// dmffn: train, evaluate and run the super-resolution network from the shell.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "dmffn/dmffn.hpp"

namespace fs = std::filesystem;
using namespace dmffn;

namespace {

struct Options {
  std::string config, hr_dir, lr, out, checkpoint, report, resume;
  std::optional<std::size_t> scale, steps;
  std::optional<std::uint64_t> seed;
  std::string precision = "f32";
};

struct Configs {
  ModelConfig model;
  TrainConfig train;
};

/// Config file, then command-line overrides.
Configs load_configs(const Options& o) {
  Configs c;
  if (!o.config.empty()) parse_config(read_text_file(o.config), &c.model, &c.train);
  if (o.scale) c.model.scale = *o.scale;
  if (o.steps) c.train.steps = *o.steps;
  if (o.seed) c.model.seed = c.train.seed = *o.seed;
  c.model.validate();
  return c;
}

template <class T>
Model<T> model_from(const Options& o, const Configs& c) {
  if (o.checkpoint.empty()) {
    std::cerr << "note: no --checkpoint given, using freshly initialized weights (seed " << c.model.seed << ")\n";
    return build_model<T>(c.model);
  }
  auto m = load_checkpoint<T>(o.checkpoint).model;
  if (o.scale && *o.scale != m.config.scale)
    throw ConfigError("checkpoint is for scale " + std::to_string(m.config.scale) + ", --scale is " +
                      std::to_string(*o.scale));
  return m;
}

template <class T>
int cmd_params(const Options& o) {
  auto c = load_configs(o);
  std::cout << param_count(build_model<T>(c.model)) << '\n';
  return 0;
}

template <class T>
int cmd_train(const Options& o) {
  auto c = load_configs(o);
  if (o.hr_dir.empty()) throw ConfigError("train needs --hr-dir");
  if (o.checkpoint.empty()) throw ConfigError("train needs --checkpoint (output path)");
  c.train.validate();
  Model<T> model;
  AdamState<T> state;
  if (!o.resume.empty()) {
    auto loaded = load_checkpoint<T>(o.resume);
    model = std::move(loaded.model);
    if (loaded.optim) state = std::move(*loaded.optim);
    if (o.scale && *o.scale != model.config.scale) throw ConfigError("--scale does not match the resumed checkpoint");
  } else {
    model = build_model<T>(c.model);
  }
  auto data = make_pairs<T>(o.hr_dir, model.config.scale, c.train.patch, c.train.stride, c.train.augment,
                            c.train.seed);
  const std::string log_path = o.report.empty() ? o.checkpoint + ".log" : o.report;
  std::ofstream log(log_path, state.step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot open loss log '" + log_path + "'");
  train<T>(model, data, c.train, state, &log, [&](std::uint64_t, const Model<T>& m, const AdamState<T>& s) {
    save_checkpoint(o.checkpoint, m, &s);
  });
  save_checkpoint(o.checkpoint, model, &state);
  std::cout << "trained to step " << state.step << ", checkpoint " << o.checkpoint << ", loss log " << log_path
            << '\n';
  return 0;
}

template <class T>
int cmd_eval(const Options& o) {
  auto c = load_configs(o);
  if (o.hr_dir.empty()) throw ConfigError("eval needs --hr-dir");
  auto model = model_from<T>(o, c);
  auto report = evaluate(model, o.hr_dir, model.config.scale);
  if (o.report.empty()) {
    write_csv(report, std::cout);
  } else {
    std::ofstream f(o.report);
    if (!f) throw Error("cannot open report '" + o.report + "'");
    write_csv(report, f);
    std::cout << "mean psnr " << format_metric(report.mean_psnr, 4) << " dB, mean ssim "
              << format_metric(report.mean_ssim, 6) << " over " << report.rows.size() << " images\n";
  }
  return 0;
}

template <class T>
void upscale_file(const Model<T>& model, const fs::path& in, const fs::path& out) {
  auto lr = ensure_rgb(to_tensor<T>(read_png(in.string())));
  auto sr = model.infer(Tensor<T>(Shape{1, 3, lr.dim(1), lr.dim(2)}, lr.data()));
  write_png(from_tensor(sr), out.string());
}

template <class T>
int cmd_infer(const Options& o) {
  auto c = load_configs(o);
  if (o.lr.empty() || o.out.empty()) throw ConfigError("infer needs --lr and --out");
  auto model = model_from<T>(o, c);
  if (fs::is_directory(o.lr)) {
    fs::create_directories(o.out);
    for (const auto& p : list_pngs(o.lr)) upscale_file(model, p, fs::path(o.out) / p.filename());
  } else {
    upscale_file(model, o.lr, o.out);
  }
  return 0;
}

template <class T>
int cmd_gradcheck(const Options& o) {
  auto reports = run_gradcheck_suite<T>(o.seed.value_or(7));
  std::ostringstream table;
  table << "op,max_rel_error,tolerance,status\n";
  bool ok = true;
  for (const auto& r : reports) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e,%.1e,", r.max_rel_error, r.tolerance);
    table << r.op_name << ',' << buf << (r.passed ? "pass" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  std::cout << table.str();
  if (!o.report.empty()) {
    std::ofstream f(o.report);
    f << table.str();
  }
  if (!ok) {
    std::cerr << "error: gradient check failed\n";
    return 1;
  }
  return 0;
}

int cmd_downsample(const Options& o) {
  if (o.hr_dir.empty() || o.out.empty()) throw ConfigError("downsample needs --hr-dir and --out");
  const std::size_t s = o.scale.value_or(2);
  if (s < 2 || s > 4) throw ConfigError("--scale must be 2, 3 or 4");
  fs::create_directories(o.out);
  for (const auto& p : list_pngs(o.hr_dir)) {
    auto hr = to_tensor<double>(read_png(p.string()));
    auto [cropped, lr] = degrade(hr, s);
    write_png(from_tensor(lr), (fs::path(o.out) / p.filename()).string());
  }
  return 0;
}

template <class T>
int dispatch(const std::string& cmd, const Options& o) {
  if (cmd == "params") return cmd_params<T>(o);
  if (cmd == "train") return cmd_train<T>(o);
  if (cmd == "eval") return cmd_eval<T>(o);
  if (cmd == "infer") return cmd_infer<T>(o);
  if (cmd == "gradcheck") return cmd_gradcheck<T>(o);
  return cmd_downsample(o);
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-way multi-feature fusion super-resolution"};
  app.require_subcommand(1, 1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--scale", o.scale, "upscaling factor")->check(CLI::IsMember({2, 3, 4}));
    sub->add_option("--seed", o.seed, "seed for initialization and data order");
    sub->add_option("--precision", o.precision, "arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* params = app.add_subcommand("params", "print the trainable parameter count");
  add_common(params);

  auto* tr = app.add_subcommand("train", "train on a directory of HR PNGs");
  add_common(tr);
  tr->add_option("--hr-dir", o.hr_dir, "HR training images")->required();
  tr->add_option("--checkpoint", o.checkpoint, "output checkpoint")->required();
  tr->add_option("--steps", o.steps, "total optimizer steps");
  tr->add_option("--report", o.report, "loss log (default: <checkpoint>.log)");
  tr->add_option("--resume", o.resume, "continue from a checkpoint with optimizer state")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM report over a directory of HR PNGs");
  add_common(ev);
  ev->add_option("--hr-dir", o.hr_dir, "HR evaluation images")->required();
  ev->add_option("--checkpoint", o.checkpoint, "trained model")->check(CLI::ExistingFile);
  ev->add_option("--report", o.report, "CSV output (default: stdout)");

  auto* inf = app.add_subcommand("infer", "upscale a PNG or a directory of PNGs");
  add_common(inf);
  inf->add_option("--lr", o.lr, "input PNG or directory")->required()->check(CLI::ExistingPath);
  inf->add_option("--out", o.out, "output PNG or directory")->required();
  inf->add_option("--checkpoint", o.checkpoint, "trained model")->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--precision", o.precision, "arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
  gc->add_option("--seed", o.seed, "seed for random inputs");
  gc->add_option("--report", o.report, "CSV copy of the table");

  auto* ds = app.add_subcommand("downsample", "write antialiased bicubic LR versions of HR PNGs");
  ds->add_option("--hr-dir", o.hr_dir, "HR images")->required();
  ds->add_option("--out", o.out, "output directory")->required();
  ds->add_option("--scale", o.scale, "downscaling factor")->check(CLI::IsMember({2, 3, 4}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << one_line(e.what()) << '\n';
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return o.precision == "f64" ? dispatch<double>(cmd, o) : dispatch<float>(cmd, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
}
