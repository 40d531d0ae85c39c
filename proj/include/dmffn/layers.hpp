#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "dmffn/ops.hpp"

namespace dmffn {

enum class PadMode { zero, reflect };

template <class T>
struct ConvParams {
  Tensor<T> weight;  // C_out × C_in/groups × kH × kW
  Tensor<T> bias;    // C_out, or undefined
  std::size_t stride = 1;
  std::size_t padding = 0;
  PadMode pad_mode = PadMode::zero;
  std::size_t groups = 1;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1) * groups; }
  std::size_t kernel() const { return weight.dim(2); }

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    f(prefix + ".weight", weight);
    if (bias.defined()) f(prefix + ".bias", bias);
  }
};

template <class T>
struct LinearParams {
  Tensor<T> weight;  // D_out × D_in
  Tensor<T> bias;    // D_out

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <class T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);

  template <class F>
  void visit(F&& f, const std::string& prefix) const {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

struct ConvGeometry {
  std::size_t N, C, H, W, Cout, K, stride, pad, groups, Ho, Wo;
  PadMode mode;
  std::size_t cg() const { return C / groups; }
  std::size_t og() const { return Cout / groups; }
  std::size_t rows() const { return cg() * K * K; }
  std::size_t cols() const { return Ho * Wo; }
  bool pointwise() const { return K == 1 && stride == 1 && pad == 0; }
};

// col[(c*K + ky)*K + kx][oy*Wo + ox] for channels [c0, c0+cg) of image n.
template <class T>
void im2col(const ConvGeometry& g, const T* x, std::size_t c0, T* col) {
  const auto H = static_cast<std::ptrdiff_t>(g.H), W = static_cast<std::ptrdiff_t>(g.W);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.cg(); ++c) {
    const T* plane = x + (c0 + c) * g.H * g.W;
    for (std::size_t ky = 0; ky < g.K; ++ky)
      for (std::size_t kx = 0; kx < g.K; ++kx) {
        T* row = col + ((c * g.K + ky) * g.K + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          bool yin = iy >= 0 && iy < H;
          if (!yin && g.mode == PadMode::reflect) {
            iy = reflect_index(iy, H);
            yin = true;
          }
          T* r = row + oy * g.Wo;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            bool xin = ix >= 0 && ix < W;
            if (!xin && g.mode == PadMode::reflect) {
              ix = reflect_index(ix, W);
              xin = true;
            }
            r[ox] = (yin && xin) ? plane[iy * W + ix] : T(0);
          }
        }
      }
  }
}

template <class T>
void col2im_acc(const ConvGeometry& g, const T* col, std::size_t c0, T* dx) {
  const auto H = static_cast<std::ptrdiff_t>(g.H), W = static_cast<std::ptrdiff_t>(g.W);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.cg(); ++c) {
    T* plane = dx + (c0 + c) * g.H * g.W;
    for (std::size_t ky = 0; ky < g.K; ++ky)
      for (std::size_t kx = 0; kx < g.K; ++kx) {
        const T* row = col + ((c * g.K + ky) * g.K + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          bool yin = iy >= 0 && iy < H;
          if (!yin && g.mode == PadMode::reflect) {
            iy = reflect_index(iy, H);
            yin = true;
          }
          if (!yin) continue;
          const T* r = row + oy * g.Wo;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            bool xin = ix >= 0 && ix < W;
            if (!xin && g.mode == PadMode::reflect) {
              ix = reflect_index(ix, W);
              xin = true;
            }
            if (xin) plane[iy * W + ix] += r[ox];
          }
        }
      }
  }
}

}  // namespace detail

/// Grouped 2-D cross-correlation over N×C×H×W input.
///
/// groups == 1 is a dense convolution; groups == C_in == C_out is depthwise.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  if (x.rank() != 4) throw ShapeError("conv2d: expected N×C×H×W input, got " + to_string(x.shape()));
  const Shape& ws = p.weight.shape();
  if (ws.size() != 4) throw ShapeError("conv2d: weight must be 4-D, got " + to_string(ws));
  if (p.groups == 0 || ws[0] % p.groups != 0 || x.dim(1) % p.groups != 0)
    throw ShapeError("conv2d: channels " + std::to_string(x.dim(1)) + "->" + std::to_string(ws[0]) +
                     " not divisible by groups " + std::to_string(p.groups));
  if (ws[1] * p.groups != x.dim(1))
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                     std::to_string(ws[1] * p.groups));
  if (ws[2] != ws[3]) throw ShapeError("conv2d: only square kernels are supported");
  if (p.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (p.bias.defined() && p.bias.numel() != ws[0]) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t K = ws[2];
  const std::size_t Hp = x.dim(2) + 2 * p.padding, Wp = x.dim(3) + 2 * p.padding;
  if (Hp < K || Wp < K)
    throw ShapeError("conv2d: spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " too small for kernel " + std::to_string(K) + " with padding " + std::to_string(p.padding));
  if (p.pad_mode == PadMode::reflect && (p.padding >= x.dim(2) || p.padding >= x.dim(3)) && p.padding > 0)
    throw ShapeError("conv2d: reflect padding must be smaller than the spatial size");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), ws[0], K, p.stride, p.padding, p.groups,
                         (Hp - K) / p.stride + 1, (Wp - K) / p.stride + 1, p.pad_mode};

  std::vector<T> out(g.N * g.Cout * g.cols(), T(0));
  std::vector<T> col(g.pointwise() ? 0 : g.rows() * g.cols());
  const T* X = x.data().data();
  const T* Wt = p.weight.data().data();
  for (std::size_t n = 0; n < g.N; ++n) {
    const T* xn = X + n * g.C * g.H * g.W;
    for (std::size_t gi = 0; gi < g.groups; ++gi) {
      const T* src;
      if (g.pointwise()) {
        src = xn + gi * g.cg() * g.H * g.W;
      } else {
        detail::im2col(g, xn, gi * g.cg(), col.data());
        src = col.data();
      }
      T* dst = out.data() + (n * g.Cout + gi * g.og()) * g.cols();
      detail::gemm_acc(Wt + gi * g.og() * g.rows(), src, dst, g.og(), g.rows(), g.cols());
    }
    if (p.bias.defined())
      for (std::size_t c = 0; c < g.Cout; ++c) {
        const T b = p.bias[c];
        T* o = out.data() + (n * g.Cout + c) * g.cols();
        for (std::size_t i = 0; i < g.cols(); ++i) o[i] += b;
      }
  }

  std::vector<Tensor<T>> inputs{x, p.weight};
  if (p.bias.defined()) inputs.push_back(p.bias);
  return make_result<T>("conv2d", Shape{g.N, g.Cout, g.Ho, g.Wo}, std::move(out), inputs, [&] {
    return [g, xi = x.impl(), wi = p.weight.impl(),
            bi = p.bias.defined() ? p.bias.impl() : nullptr](const TensorImpl<T>& o) {
      std::vector<T> col(g.pointwise() ? 0 : g.rows() * g.cols());
      const T* X = xi->data.data();
      for (std::size_t n = 0; n < g.N; ++n) {
        const T* xn = X + n * g.C * g.H * g.W;
        for (std::size_t gi = 0; gi < g.groups; ++gi) {
          const T* gout = o.grad.data() + (n * g.Cout + gi * g.og()) * g.cols();
          if (wi->requires_grad) {
            const T* src;
            if (g.pointwise()) {
              src = xn + gi * g.cg() * g.H * g.W;
            } else {
              detail::im2col(g, xn, gi * g.cg(), col.data());
              src = col.data();
            }
            detail::gemm_nt_acc(gout, src, wi->grad_buffer().data() + gi * g.og() * g.rows(), g.og(), g.cols(),
                                g.rows());
          }
          if (xi->requires_grad) {
            T* dxn = xi->grad_buffer().data() + n * g.C * g.H * g.W;
            if (g.pointwise()) {
              detail::gemm_tn_acc(wi->data.data() + gi * g.og() * g.rows(), gout, dxn + gi * g.cg() * g.H * g.W,
                                  g.og(), g.rows(), g.cols());
            } else {
              std::fill(col.begin(), col.end(), T(0));
              detail::gemm_tn_acc(wi->data.data() + gi * g.og() * g.rows(), gout, col.data(), g.og(), g.rows(),
                                  g.cols());
              detail::col2im_acc(g, col.data(), gi * g.cg(), dxn);
            }
          }
        }
        if (bi && bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (std::size_t c = 0; c < g.Cout; ++c) {
            const T* go = o.grad.data() + (n * g.Cout + c) * g.cols();
            T acc = T(0);
            for (std::size_t i = 0; i < g.cols(); ++i) acc += go[i];
            gb[c] += acc;
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Linear / normalization

/// y = x·Wᵀ + b over the trailing dimension.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  const Shape& ws = p.weight.shape();
  if (ws.size() != 2 || x.rank() < 1 || x.shape().back() != ws[1])
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(ws));
  if (p.bias.numel() != ws[0]) throw ShapeError("linear: bias length mismatch");
  const std::size_t Din = ws[1], Dout = ws[0], R = x.numel() / Din;
  Shape out_shape = x.shape();
  out_shape.back() = Dout;
  std::vector<T> out(R * Dout, T(0));
  detail::gemm_nt_acc(x.data().data(), p.weight.data().data(), out.data(), R, Din, Dout);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < Dout; ++j) out[r * Dout + j] += p.bias[j];
  return make_result<T>("linear", std::move(out_shape), std::move(out), {x, p.weight, p.bias}, [&] {
    return [xi = x.impl(), wi = p.weight.impl(), bi = p.bias.impl(), R, Din, Dout](const TensorImpl<T>& o) {
      const T* g = o.grad.data();
      if (xi->requires_grad) detail::gemm_acc(g, wi->data.data(), xi->grad_buffer().data(), R, Dout, Din);
      if (wi->requires_grad) detail::gemm_tn_acc(g, xi->data.data(), wi->grad_buffer().data(), R, Dout, Din);
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t j = 0; j < Dout; ++j) gb[j] += g[r * Dout + j];
      }
    };
  });
}

/// Normalizes over `axis` (channel axis 1 for N×C×H×W, last axis for N×L×C)
/// with biased variance, then applies the per-channel affine map.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p, std::size_t axis) {
  if (axis >= x.rank() || x.dim(axis) != p.gamma.numel() || p.beta.numel() != p.gamma.numel())
    throw ShapeError("layer_norm: axis " + std::to_string(axis) + " of " + to_string(x.shape()) +
                     " does not match gamma length " + std::to_string(p.gamma.numel()));
  if (!(p.eps > T(0))) throw Error("layer_norm: eps must be positive");
  const std::size_t C = x.dim(axis);
  auto [outer, inner] = detail::outer_inner(x.shape(), axis);
  const auto& X = x.data();
  std::vector<T> xhat(X.size()), rstd(outer * inner), out(X.size());
  std::vector<T> mu(inner), var(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * C * inner;
    std::fill(mu.begin(), mu.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) mu[i] += X[base + c * inner + i];
    for (auto& m : mu) m /= static_cast<T>(C);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const T d = X[base + c * inner + i] - mu[i];
        var[i] += d * d;
      }
    for (std::size_t i = 0; i < inner; ++i) rstd[o * inner + i] = T(1) / std::sqrt(var[i] / static_cast<T>(C) + p.eps);
    for (std::size_t c = 0; c < C; ++c) {
      const T gm = p.gamma[c], bt = p.beta[c];
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = base + c * inner + i;
        xhat[k] = (X[k] - mu[i]) * rstd[o * inner + i];
        out[k] = xhat[k] * gm + bt;
      }
    }
  }
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, p.gamma, p.beta}, [&] {
    return [xi = x.impl(), gi = p.gamma.impl(), bi = p.beta.impl(), xhat = std::move(xhat), rstd = std::move(rstd),
            outer, inner, C](const TensorImpl<T>& o) {
      const auto& G = o.grad;
      std::vector<T> m1(inner), m2(inner);
      for (std::size_t ob = 0; ob < outer; ++ob) {
        const std::size_t base = ob * C * inner;
        if (gi->requires_grad) {
          auto& gg = gi->grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < inner; ++i) gg[c] += G[base + c * inner + i] * xhat[base + c * inner + i];
        }
        if (bi->requires_grad) {
          auto& gb = bi->grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < inner; ++i) gb[c] += G[base + c * inner + i];
        }
        if (!xi->requires_grad) continue;
        std::fill(m1.begin(), m1.end(), T(0));
        std::fill(m2.begin(), m2.end(), T(0));
        for (std::size_t c = 0; c < C; ++c) {
          const T gm = gi->data[c];
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = base + c * inner + i;
            const T dxh = G[k] * gm;
            m1[i] += dxh;
            m2[i] += dxh * xhat[k];
          }
        }
        auto& gx = xi->grad_buffer();
        const T invC = T(1) / static_cast<T>(C);
        for (std::size_t c = 0; c < C; ++c) {
          const T gm = gi->data[c];
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t k = base + c * inner + i;
            const T dxh = G[k] * gm;
            gx[k] += rstd[ob * inner + i] * (dxh - m1[i] * invC - xhat[k] * m2[i] * invC);
          }
        }
      }
    };
  });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { elu, gelu, relu, sigmoid };

namespace detail {

template <class T, class F, class DF>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, DF df) {
  const auto& X = x.data();
  std::vector<T> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = f(X[i]);
  return make_result<T>(name, x.shape(), std::move(out), {x}, [&] {
    return [xi = x.impl(), df](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * df(xi->data[i], o.data[i]);
    };
  });
}

}  // namespace detail

/// ELU with alpha = 1.
template <class T>
Tensor<T> elu(const Tensor<T>& x) {
  return detail::unary<T>(
      "elu", x, [](T v) { return v > T(0) ? v : std::expm1(v); },
      [](T v, T y) { return v > T(0) ? T(1) : y + T(1); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(inv_sqrt2))); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * T(inv_sqrt2))) + v * T(inv_sqrt2pi) * std::exp(T(-0.5) * v * v);
      });
}

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  switch (kind) {
    case Activation::elu: return elu(x);
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  throw Error("activation: unknown kind");
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + to_string(x.shape()));
  const std::size_t L = x.dim(axis);
  auto [outer, inner] = detail::outer_inner(x.shape(), axis);
  const auto& X = x.data();
  std::vector<T> out(X.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * L * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < L; ++l) mx = std::max(mx, X[base + l * inner]);
      T s = T(0);
      for (std::size_t l = 0; l < L; ++l) {
        const T e = std::exp(X[base + l * inner] - mx);
        out[base + l * inner] = e;
        s += e;
      }
      for (std::size_t l = 0; l < L; ++l) out[base + l * inner] /= s;
    }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [&] {
    return [xi = x.impl(), outer, inner, L](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t ob = 0; ob < outer; ++ob)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = ob * L * inner + i;
          T dot = T(0);
          for (std::size_t l = 0; l < L; ++l) dot += o.grad[base + l * inner] * o.data[base + l * inner];
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t k = base + l * inner;
            gx[k] += o.data[k] * (o.grad[k] - dot);
          }
        }
    };
  });
}

// ---------------------------------------------------------------------------
// Spatial rearrangement and resampling

namespace detail {

// Index of the input element feeding pixel_shuffle output position `k`.
struct ShuffleMap {
  std::size_t N, C, H, W, r;
  std::size_t src(std::size_t n, std::size_t c, std::size_t oy, std::size_t ox) const {
    const std::size_t h = oy / r, i = oy % r, w = ox / r, j = ox % r;
    return ((n * C * r * r + c * r * r + i * r + j) * H + h) * W + w;
  }
};

}  // namespace detail

/// N×(C·r²)×H×W → N×C×(rH)×(rW).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 4 || r == 0 || x.dim(1) % (r * r) != 0)
    throw ShapeError("pixel_shuffle: channels of " + to_string(x.shape()) + " not divisible by r^2=" +
                     std::to_string(r * r));
  const std::size_t N = x.dim(0), C = x.dim(1) / (r * r), H = x.dim(2), W = x.dim(3);
  detail::ShuffleMap m{N, C, H, W, r};
  std::vector<std::size_t> index(x.numel());
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < H * r; ++oy)
        for (std::size_t ox = 0; ox < W * r; ++ox) index[k++] = m.src(n, c, oy, ox);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[index[i]];
  return make_result<T>("pixel_shuffle", Shape{N, C, H * r, W * r}, std::move(out), {x}, [&] {
    return [xi = x.impl(), index = std::move(index)](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += o.grad[i];
    };
  });
}

/// Exact inverse of pixel_shuffle: N×C×(rH)×(rW) → N×(C·r²)×H×W.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 4 || r == 0 || x.dim(2) % r != 0 || x.dim(3) % r != 0)
    throw ShapeError("pixel_unshuffle: spatial size of " + to_string(x.shape()) + " not divisible by " +
                     std::to_string(r));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2) / r, W = x.dim(3) / r;
  detail::ShuffleMap m{N, C, H, W, r};
  // out[src(k)] = x[k] where k enumerates shuffled layout
  std::vector<std::size_t> index(x.numel());
  std::size_t k = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < H * r; ++oy)
        for (std::size_t ox = 0; ox < W * r; ++ox) index[m.src(n, c, oy, ox)] = k++;
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[index[i]];
  return make_result<T>("pixel_unshuffle", Shape{N, C * r * r, H, W}, std::move(out), {x}, [&] {
    return [xi = x.impl(), index = std::move(index)](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += o.grad[i];
    };
  });
}

/// Mean over H×W per channel: N×C×H×W → N×C×1×1.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected 4-D input");
  const std::size_t NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(NC);
  for (std::size_t k = 0; k < NC; ++k) {
    T acc = T(0);
    for (std::size_t i = 0; i < HW; ++i) acc += x[k * HW + i];
    out[k] = acc / static_cast<T>(HW);
  }
  return make_result<T>("global_avg_pool", Shape{x.dim(0), x.dim(1), 1, 1}, std::move(out), {x}, [&] {
    return [xi = x.impl(), NC, HW](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      const T inv = T(1) / static_cast<T>(HW);
      for (std::size_t k = 0; k < NC; ++k)
        for (std::size_t i = 0; i < HW; ++i) gx[k * HW + i] += o.grad[k] * inv;
    };
  });
}

/// Max pooling without padding; the first maximum in scan order receives the gradient.
template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride) {
  if (x.rank() != 4 || kernel == 0 || stride == 0) throw ShapeError("max_pool2d: bad arguments");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < kernel || W < kernel)
    throw ShapeError("max_pool2d: input " + to_string(x.shape()) + " smaller than kernel " + std::to_string(kernel));
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  std::vector<T> out(N * C * Ho * Wo);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = nc * H * W + oy * stride * W + ox * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t k = nc * H * W + (oy * stride + ky) * W + ox * stride + kx;
            if (x[k] > x[best]) best = k;
          }
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        out[o] = x[best];
        arg[o] = best;
      }
  return make_result<T>("max_pool2d", Shape{N, C, Ho, Wo}, std::move(out), {x}, [&] {
    return [xi = x.impl(), arg = std::move(arg)](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += o.grad[i];
    };
  });
}

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// align_corners=false source coordinates, clamped at the low edge.
inline std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize, align_corners = false.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4) throw ShapeError("resize_bilinear: expected 4-D input");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: output size must be at least 1");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  auto ty = detail::bilinear_taps(H, out_h);
  auto tx = detail::bilinear_taps(W, out_w);
  std::vector<T> out(NC * out_h * out_w);
  for (std::size_t k = 0; k < NC; ++k) {
    const T* p = x.data().data() + k * H * W;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        out[(k * out_h + oy) * out_w + ox] = wy0 * (wx0 * p[a.i0 * W + b.i0] + wx1 * p[a.i0 * W + b.i1]) +
                                             wy1 * (wx0 * p[a.i1 * W + b.i0] + wx1 * p[a.i1 * W + b.i1]);
      }
    }
  }
  return make_result<T>("resize_bilinear", Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x}, [&] {
    return [xi = x.impl(), ty, tx, NC, H, W, out_h, out_w](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t k = 0; k < NC; ++k) {
        T* p = gx.data() + k * H * W;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[oy];
          const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& b = tx[ox];
            const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
            const T g = o.grad[(k * out_h + oy) * out_w + ox];
            p[a.i0 * W + b.i0] += g * wy0 * wx0;
            p[a.i0 * W + b.i1] += g * wy0 * wx1;
            p[a.i1 * W + b.i0] += g * wy1 * wx0;
            p[a.i1 * W + b.i1] += g * wy1 * wx1;
          }
        }
      }
    };
  });
}

/// Reflect padding (edge pixel not repeated); each pad must be < the padded axis length.
template <class T>
Tensor<T> reflect_pad2d(const Tensor<T>& x, std::size_t bottom, std::size_t right) {
  if (x.rank() != 4) throw ShapeError("reflect_pad2d: expected 4-D input");
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if ((bottom > 0 && bottom >= H) || (right > 0 && right >= W))
    throw ShapeError("reflect_pad2d: pad (" + std::to_string(bottom) + "," + std::to_string(right) +
                     ") too large for " + to_string(x.shape()));
  if (bottom == 0 && right == 0) return x;
  const std::size_t Ho = H + bottom, Wo = W + right;
  std::vector<std::size_t> index(NC * Ho * Wo);
  for (std::size_t k = 0; k < NC; ++k)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const auto sy = static_cast<std::size_t>(detail::reflect_index(static_cast<std::ptrdiff_t>(y), H));
        const auto sx = static_cast<std::size_t>(detail::reflect_index(static_cast<std::ptrdiff_t>(xx), W));
        index[(k * Ho + y) * Wo + xx] = (k * H + sy) * W + sx;
      }
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[index[i]];
  return make_result<T>("reflect_pad2d", Shape{x.dim(0), x.dim(1), Ho, Wo}, std::move(out), {x}, [&] {
    return [xi = x.impl(), index = std::move(index)](const TensorImpl<T>& o) {
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += o.grad[i];
    };
  });
}

/// Top-left aligned crop to h×w.
template <class T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t h, std::size_t w) {
  if (x.rank() != 4 || h > x.dim(2) || w > x.dim(3)) throw ShapeError("crop2d: crop exceeds input");
  if (h == x.dim(2) && w == x.dim(3)) return x;
  return slice(slice(x, 2, 0, h), 3, 0, w);
}

}  // namespace dmffn
