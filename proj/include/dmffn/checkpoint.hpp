#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmffn/model.hpp"
#include "dmffn/optim.hpp"

namespace dmffn {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'M', 'F', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "DMFF" | u32 version | u32 len, config text
//   u32 entries | per entry: u32 len, name | u32 ndim | u32 dims[ndim] | f32 data[]
//   u8 has_optimizer | [u64 step | per parameter: f32 m[] | f32 v[]]

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const Model<T>& model, const AdamState<T>* optim = nullptr) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.text(to_text(model.config));
  const auto named = model.named_parameters();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (T v : t.data()) w.f32(static_cast<float>(v));
  }
  w.u8(optim ? 1 : 0);
  if (optim) {
    if (optim->m.size() != named.size())
      throw CheckpointError("checkpoint: optimizer state does not match the parameter list");
    w.u64(optim->step);
    for (std::size_t i = 0; i < named.size(); ++i) {
      for (T v : optim->m[i]) w.f32(static_cast<float>(v));
      for (T v : optim->v[i]) w.f32(static_cast<float>(v));
    }
  }
  return w.bytes();
}

template <class T>
struct LoadedCheckpoint {
  Model<T> model;
  std::optional<AdamState<T>> optim;
};

template <class T>
LoadedCheckpoint<T> deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("checkpoint: bad magic (not a DMFF file)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  ModelConfig cfg;
  try {
    cfg = model_config_from_text(r.text());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: bad config block: ") + e.what());
  }
  LoadedCheckpoint<T> out{build_model<T>(cfg), std::nullopt};
  auto named = out.model.named_parameters();
  const std::uint32_t n = r.u32();
  if (n != named.size())
    throw CheckpointError("checkpoint: " + std::to_string(n) + " entries, config expects " +
                          std::to_string(named.size()));
  std::unordered_set<std::string> seen;
  for (auto& [name, t] : named) {
    const std::string got = r.text();
    if (!seen.insert(got).second) throw CheckpointError("checkpoint: duplicate entry '" + got + "'");
    if (got != name) throw CheckpointError("checkpoint: entry '" + got + "' where config expects '" + name + "'");
    Shape s(r.u32());
    for (auto& d : s) d = r.u32();
    if (s != t.shape())
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "': file " + to_string(s) + ", config " +
                            to_string(t.shape()));
    for (auto& v : t.mutable_data()) v = static_cast<T>(r.f32());
  }
  if (r.u8()) {
    AdamState<T> st;
    st.step = r.u64();
    for (const auto& [name, t] : named) {
      std::vector<T> m(t.numel()), v(t.numel());
      for (auto& x : m) x = static_cast<T>(r.f32());
      for (auto& x : v) x = static_cast<T>(r.f32());
      st.m.push_back(std::move(m));
      st.v.push_back(std::move(v));
    }
    out.optim = std::move(st);
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after optimizer block");
  return out;
}

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model, const AdamState<T>* optim = nullptr) {
  const std::string bytes = serialize_checkpoint(model, optim);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(bytes);
}

}  // namespace dmffn
