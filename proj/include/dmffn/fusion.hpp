#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "dmffn/attention.hpp"
#include "dmffn/conv_branch.hpp"

namespace dmffn {

/// Progressive multi-branch mixer shared by the dual-way fusion block and the
/// feature reuse block.
///
/// The entry projection is split into `branches` equal channel groups. The
/// first group passes through a 1×1 conv; every later group is added to the
/// previous branch output before a 3×3 conv, and the last branch is gated by
/// channel attention. The branch outputs are concatenated and fused by a 1×1
/// conv.
template <class T>
struct DfbParams {
  ConvParams<T> entry;
  std::vector<ConvParams<T>> branch_convs;
  CaParams<T> branch_ca;
  ConvParams<T> fuse;

  std::size_t channels() const { return fuse.out_channels(); }
  std::size_t branches() const { return branch_convs.size(); }

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    entry.visit(f, prefix + ".entry");
    for (std::size_t i = 0; i < branch_convs.size(); ++i)
      branch_convs[i].visit(f, prefix + ".branch." + std::to_string(i));
    branch_ca.visit(f, prefix + ".branch_ca");
    fuse.visit(f, prefix + ".fuse");
  }

  /// `inputs` is 2 for the dual-way block and 1 for feature reuse.
  static DfbParams make(Initializer& init, std::size_t C, std::size_t inputs, std::size_t branches,
                        std::size_t ca_ratio) {
    if (branches < 2 || C % branches != 0)
      throw ShapeError("dfb: channels " + std::to_string(C) + " not divisible into " + std::to_string(branches) +
                       " branches");
    const std::size_t cb = C / branches;
    DfbParams p;
    p.entry = init.conv<T>(inputs * C, C, 1);
    p.branch_convs.push_back(init.conv<T>(cb, cb, 1));
    for (std::size_t k = 1; k < branches; ++k) p.branch_convs.push_back(init.conv<T>(cb, cb, 3));
    p.branch_ca = CaParams<T>::make(init, cb, std::gcd(ca_ratio, cb));
    p.fuse = init.conv<T>(C, C, 1);
    return p;
  }

  /// fuse(concat(branch outputs)) for an already-projected N×C×H×W feature.
  Tensor<T> mix(const Tensor<T>& z) const {
    auto groups = split(z, 1, branches());
    std::vector<Tensor<T>> ys;
    ys.push_back(conv2d(groups[0], branch_convs[0]));
    for (std::size_t k = 1; k < branches(); ++k) {
      auto y = conv2d(add(groups[k], ys.back()), branch_convs[k]);
      if (k + 1 == branches()) y = channel_attention(y, branch_ca);
      ys.push_back(y);
    }
    return conv2d(concat(ys, 1), fuse);
  }
};

/// Dual-way fusion: mixes two branch outputs and adds both back as residuals.
template <class T>
Tensor<T> dfb_forward(const Tensor<T>& a, const Tensor<T>& b, const DfbParams<T>& p) {
  if (a.shape() != b.shape())
    throw ShapeError("dfb: branch shapes differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.rank() != 4 || 2 * a.dim(1) != p.entry.in_channels())
    throw ShapeError("dfb: input " + to_string(a.shape()) + " does not match channels " +
                     std::to_string(p.channels()));
  auto mixed = p.mix(conv2d(concat<T>({a, b}, 1), p.entry));
  return add(add(mixed, a), b);
}

/// Feature reuse: the single-input variant applied to the summed stage features.
template <class T>
Tensor<T> frb_forward(const Tensor<T>& s, const DfbParams<T>& p) {
  if (s.rank() != 4 || s.dim(1) != p.entry.in_channels())
    throw ShapeError("frb: input " + to_string(s.shape()) + " does not match channels " +
                     std::to_string(p.channels()));
  return add(p.mix(conv2d(s, p.entry)), s);
}

/// One network stage: transformer and convolutional branches fused by a DFB.
template <class T>
struct DffbParams {
  AtbParams<T> atb;
  SesabParams<T> sesab;
  DfbParams<T> dfb;

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    atb.visit(f, prefix + ".atb");
    sesab.visit(f, prefix + ".sesab");
    dfb.visit(f, prefix + ".dfb");
  }

  Tensor<T> forward(const Tensor<T>& x) const { return dfb_forward(atb.forward(x), sesab.forward(x), dfb); }
};

template <class T>
Tensor<T> dffb_forward(const Tensor<T>& x, const DffbParams<T>& p) {
  return p.forward(x);
}

}  // namespace dmffn
