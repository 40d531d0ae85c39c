#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "dmffn/tensor.hpp"

namespace dmffn {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Architecture hyperparameters. Defaults give a 937,806-parameter ×2 network.
struct ModelConfig {
  std::size_t channels = 48;
  std::size_t num_stages = 4;
  std::size_t atb_depth = 1;
  std::size_t serb_per_sesab = 2;
  std::size_t heads = 4;
  std::size_t square_window = 8;
  std::size_t axial_stripe = 1;
  std::size_t gconv_groups = 4;
  std::size_t ca_ratio = 0;  // 0: 16 when channels >= 32, else 4
  std::size_t mlp_ratio = 2;
  std::size_t dfb_branches = 4;
  std::size_t scale = 2;
  std::uint64_t seed = 0;

  std::size_t effective_ca_ratio() const {
    if (ca_ratio != 0) return ca_ratio;
    return channels >= 32 ? 16 : 4;
  }

  /// Violated invariants, empty when the config is buildable.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    auto need = [&](bool ok, std::string msg) {
      if (!ok) v.push_back(std::move(msg));
    };
    const auto C = std::to_string(channels);
    need(channels > 0, "channels must be positive");
    need(heads >= 2 && heads % 2 == 0, "heads (" + std::to_string(heads) + ") must be even and >= 2");
    need(heads > 0 && channels % heads == 0, "channels " + C + " not divisible by heads " + std::to_string(heads));
    need(dfb_branches >= 2 && channels % dfb_branches == 0,
         "channels " + C + " not divisible by dfb_branches " + std::to_string(dfb_branches));
    need(gconv_groups > 0 && channels % gconv_groups == 0,
         "channels " + C + " not divisible by gconv_groups " + std::to_string(gconv_groups));
    const auto r = effective_ca_ratio();
    need(r > 0 && channels % r == 0, "channels " + C + " not divisible by ca_ratio " + std::to_string(r));
    need(scale == 2 || scale == 3 || scale == 4, "scale must be 2, 3 or 4");
    need(square_window >= 1, "square_window must be positive");
    need(axial_stripe >= 1, "axial_stripe must be positive");
    need(mlp_ratio >= 1, "mlp_ratio must be positive");
    return v;
  }

  void validate() const {
    auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid model config: ";
    for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? "; " : "") + v[i];
    throw ConfigError(msg);
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double lr0 = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch = 4;
  std::size_t steps = 1000;
  std::size_t decay_every = 200000;
  std::size_t patch = 32;  // LR patch side
  std::size_t stride = 0;  // patch grid stride, 0: equal to patch
  bool augment = true;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;

  void validate() const {
    if (!(lr0 >= 0)) throw ConfigError("lr0 must be non-negative");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (patch < 1) throw ConfigError("patch must be >= 1");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  V out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("config: bad value '" + value + "' for key '" + key + "'");
  if constexpr (std::is_unsigned_v<V>)
    if (!value.empty() && value[0] == '-') throw ConfigError("config: negative value for key '" + key + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean '" + v + "' for key '" + key + "'");
}

}  // namespace detail

/// `key = value` lines; `#` starts a comment. Keys must be unique.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, int> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (seen[key]++) throw ConfigError("config: duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

/// Assigns one key to whichever config owns it. Returns false for unknown keys.
inline bool apply_config_key(ModelConfig* m, TrainConfig* t, const std::string& k, const std::string& v) {
  using detail::parse_number;
  bool hit = false;
  if (m) {
    hit = true;
    if (k == "channels") m->channels = parse_number<std::size_t>(k, v);
    else if (k == "num_stages") m->num_stages = parse_number<std::size_t>(k, v);
    else if (k == "atb_depth") m->atb_depth = parse_number<std::size_t>(k, v);
    else if (k == "serb_per_sesab") m->serb_per_sesab = parse_number<std::size_t>(k, v);
    else if (k == "heads") m->heads = parse_number<std::size_t>(k, v);
    else if (k == "square_window") m->square_window = parse_number<std::size_t>(k, v);
    else if (k == "axial_stripe") m->axial_stripe = parse_number<std::size_t>(k, v);
    else if (k == "gconv_groups") m->gconv_groups = parse_number<std::size_t>(k, v);
    else if (k == "ca_ratio") m->ca_ratio = parse_number<std::size_t>(k, v);
    else if (k == "mlp_ratio") m->mlp_ratio = parse_number<std::size_t>(k, v);
    else if (k == "dfb_branches") m->dfb_branches = parse_number<std::size_t>(k, v);
    else if (k == "scale") m->scale = parse_number<std::size_t>(k, v);
    else if (k == "seed") m->seed = parse_number<std::uint64_t>(k, v);
    else hit = false;
  }
  if (t) {
    bool thit = true;
    if (k == "lr0") t->lr0 = parse_number<double>(k, v);
    else if (k == "betas") {
      const auto comma = v.find(',');
      if (comma == std::string::npos) throw ConfigError("config: betas needs two comma-separated values");
      t->beta1 = parse_number<double>(k, detail::trim(v.substr(0, comma)));
      t->beta2 = parse_number<double>(k, detail::trim(v.substr(comma + 1)));
    } else if (k == "eps") t->eps = parse_number<double>(k, v);
    else if (k == "batch") t->batch = parse_number<std::size_t>(k, v);
    else if (k == "steps") t->steps = parse_number<std::size_t>(k, v);
    else if (k == "decay_every") t->decay_every = parse_number<std::size_t>(k, v);
    else if (k == "patch") t->patch = parse_number<std::size_t>(k, v);
    else if (k == "stride") t->stride = parse_number<std::size_t>(k, v);
    else if (k == "augment") t->augment = detail::parse_bool(k, v);
    else if (k == "seed") t->seed = parse_number<std::uint64_t>(k, v);
    else if (k == "grad_clip") t->grad_clip = parse_number<double>(k, v);
    else thit = false;
    hit = hit || thit;
  }
  return hit;
}

/// Parses a combined model/training config; unknown keys are errors.
inline void parse_config(const std::string& text, ModelConfig* m, TrainConfig* t) {
  for (const auto& [k, v] : parse_key_values(text))
    if (!apply_config_key(m, t, k, v)) throw ConfigError("config: unknown key '" + k + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Canonical serialization: fixed key order, one `key = value` per line.
inline std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "channels = " << c.channels << '\n'
     << "num_stages = " << c.num_stages << '\n'
     << "atb_depth = " << c.atb_depth << '\n'
     << "serb_per_sesab = " << c.serb_per_sesab << '\n'
     << "heads = " << c.heads << '\n'
     << "square_window = " << c.square_window << '\n'
     << "axial_stripe = " << c.axial_stripe << '\n'
     << "gconv_groups = " << c.gconv_groups << '\n'
     << "ca_ratio = " << c.ca_ratio << '\n'
     << "mlp_ratio = " << c.mlp_ratio << '\n'
     << "dfb_branches = " << c.dfb_branches << '\n'
     << "scale = " << c.scale << '\n'
     << "seed = " << c.seed << '\n';
  return os.str();
}

inline ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig c;
  parse_config(text, &c, nullptr);
  return c;
}

}  // namespace dmffn
