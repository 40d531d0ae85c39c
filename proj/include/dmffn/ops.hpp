#pragma once

#include <array>
#include <cmath>
#include <span>

#include "dmffn/tensor.hpp"

namespace dmffn {

enum class BinaryOp { add, sub, mul };

namespace detail {

template <class T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// Row-major strides; broadcast dimensions get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& out, const Shape& in) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t d = out.size(); d-- > 0;) {
    st[d] = (in[d] == 1 && out[d] != 1) ? 0 : s;
    s *= in[d];
  }
  return st;
}

// Visits (flat_out, flat_b) pairs for a b broadcast against `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& bstride, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t total = numel(out);
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t bpos = 0;
  const std::size_t inner = out[rank - 1];
  const std::size_t inner_stride = bstride[rank - 1];
  for (std::size_t o = 0; o < total; o += inner) {
    std::size_t b = bpos;
    for (std::size_t i = 0; i < inner; ++i, b += inner_stride) f(o + i, b);
    // advance the outer multi-index
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      bpos += bstride[d];
      if (idx[d] < out[d]) break;
      bpos -= bstride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

inline const char* op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
  }
  return "?";
}

}  // namespace detail

/// Elementwise a (op) b. `b` must match `a`, have a single element, or have
/// the same rank with size-1 dimensions wherever it differs from `a`.
template <class T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  Shape sb = b.shape();
  const bool same = sa == sb;
  if (!same) {
    if (b.numel() == 1) {
      sb = Shape(sa.size(), 1);
    } else {
      bool ok = sb.size() == sa.size();
      for (std::size_t d = 0; ok && d < sa.size(); ++d) ok = sb[d] == sa[d] || sb[d] == 1;
      if (!ok)
        throw ShapeError(std::string(detail::op_name(op)) + ": shape mismatch " + to_string(sa) +
                         " vs " + to_string(b.shape()));
    }
  }
  const auto& A = a.data();
  const auto& B = b.data();
  std::vector<T> out(A.size());
  auto apply = [op](T x, T y) {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
    }
    return T(0);
  };
  std::vector<std::size_t> bstride;
  if (same) {
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = apply(A[i], B[i]);
  } else {
    bstride = detail::broadcast_strides(sa, sb);
    detail::for_each_broadcast(sa, bstride, [&](std::size_t o, std::size_t j) { out[o] = apply(A[o], B[j]); });
  }
  return make_result<T>(detail::op_name(op), sa, std::move(out), {a, b}, [&] {
    return [ai = a.impl(), bi = b.impl(), op, same, bstride](const TensorImpl<T>& o) {
      const auto& g = o.grad;
      const Shape& s = o.shape;
      if (ai->requires_grad) {
        auto& ga = ai->grad_buffer();
        if (op == BinaryOp::mul) {
          if (same) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
          } else {
            detail::for_each_broadcast(s, bstride, [&](std::size_t k, std::size_t j) { ga[k] += g[k] * bi->data[j]; });
          }
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (bi->requires_grad) {
        auto& gb = bi->grad_buffer();
        const T sign = op == BinaryOp::sub ? T(-1) : T(1);
        if (same) {
          if (op == BinaryOp::mul)
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
          else
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        } else {
          detail::for_each_broadcast(s, bstride, [&](std::size_t k, std::size_t j) {
            gb[j] += op == BinaryOp::mul ? g[k] * ai->data[k] : sign * g[k];
          });
        }
      }
    };
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data());
  for (auto& v : out) v *= s;
  return make_result<T>("mul_scalar", a.shape(), std::move(out), {a}, [&] {
    return [ai = a.impl(), s](const TensorImpl<T>& o) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * s;
    };
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data());
  for (auto& v : out) v += s;
  return make_result<T>("add_scalar", a.shape(), std::move(out), {a}, [&] {
    return [ai = a.impl()](const TensorImpl<T>& o) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    };
  });
}

/// Sum of all elements, accumulated sequentially in index order.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return make_result<T>("sum", Shape{1}, std::vector<T>{acc}, {a}, [&] {
    return [ai = a.impl()](const TensorImpl<T>& o) {
      auto& ga = ai->grad_buffer();
      for (auto& v : ga) v += o.grad[0];
    };
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Same data, new shape. Element count must match.
template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  return make_result<T>("reshape", std::move(shape), a.data(), {a}, [&] {
    return [ai = a.impl()](const TensorImpl<T>& o) {
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    };
  });
}

namespace detail {

// out[perm-index] <- in[index]; `fwd` selects direction for the backward pass.
template <class T>
void permute_copy(const Shape& in_shape, const std::vector<std::size_t>& perm, std::span<const T> src,
                  std::span<T> dst, bool accumulate_into_src_layout) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_stride[d] = s;
    s *= in_shape[d];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> gather(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in_shape[perm[d]];
    gather[d] = in_stride[perm[d]];
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src_pos = 0;
  const std::size_t total = numel(in_shape);
  for (std::size_t o = 0; o < total; ++o) {
    if (accumulate_into_src_layout)
      dst[src_pos] += src[o];
    else
      dst[o] = src[src_pos];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src_pos += gather[d];
      if (idx[d] < out_shape[d]) break;
      src_pos -= gather[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

/// out.shape[d] = a.shape[perm[d]].
template <class T>
Tensor<T> permute(const Tensor<T>& a, std::vector<std::size_t> perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch");
  std::vector<bool> used(s.size(), false);
  for (auto p : perm) {
    if (p >= s.size() || used[p]) throw ShapeError("permute: invalid axis order");
    used[p] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) out_shape[d] = s[perm[d]];
  std::vector<T> out(a.numel());
  detail::permute_copy<T>(s, perm, a.data(), out, false);
  return make_result<T>("permute", std::move(out_shape), std::move(out), {a}, [&] {
    return [ai = a.impl(), perm](const TensorImpl<T>& o) {
      detail::permute_copy<T>(ai->shape, perm, o.grad, ai->grad_buffer(), true);
    };
  });
}

/// Swap the two trailing axes.
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  std::vector<std::size_t> perm(a.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (a.rank() < 2) throw ShapeError("transpose_last2: rank < 2");
  std::swap(perm[a.rank() - 1], perm[a.rank() - 2]);
  return permute(a, std::move(perm));
}

namespace detail {

inline std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  return {outer, inner};
}

}  // namespace detail

/// Concatenate along `axis`; all other dimensions must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != parts[0].shape()[d])
        throw ShapeError("concat: shape mismatch " + to_string(parts[0].shape()) + " vs " + to_string(s));
    out_shape[axis] += s[axis];
  }
  auto [outer, inner] = detail::outer_inner(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.shape()[axis] * inner;
    const auto& src = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * chunk, chunk, out.begin() + (o * out_shape[axis] + off) * inner);
    off += p.shape()[axis];
  }
  return make_result<T>("concat", out_shape, std::move(out), parts, [&] {
    std::vector<detail::ImplPtr<T>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    return [impls, offsets, outer, inner, axis_len = out_shape[axis], axis](const TensorImpl<T>& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (!impls[k]->requires_grad) continue;
        auto& g = impls[k]->grad_buffer();
        const std::size_t chunk = impls[k]->shape[axis] * inner;
        for (std::size_t b = 0; b < outer; ++b) {
          const T* src = o.grad.data() + (b * axis_len + offsets[k]) * inner;
          T* dst = g.data() + b * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
    };
  });
}

/// Sub-range [start, start+length) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") exceeds axis " + std::to_string(axis) + " of " + to_string(s));
  Shape out_shape = s;
  out_shape[axis] = length;
  auto [outer, inner] = detail::outer_inner(s, axis);
  std::vector<T> out(numel(out_shape));
  const std::size_t chunk = length * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.data().begin() + (o * s[axis] + start) * inner, chunk, out.begin() + o * chunk);
  return make_result<T>("slice", std::move(out_shape), std::move(out), {a}, [&] {
    return [ai = a.impl(), outer, inner, start, chunk, axis_len = s[axis]](const TensorImpl<T>& o) {
      auto& g = ai->grad_buffer();
      for (std::size_t b = 0; b < outer; ++b) {
        T* dst = g.data() + (b * axis_len + start) * inner;
        const T* src = o.grad.data() + b * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    };
  });
}

/// Split `a` into `parts` equal chunks along `axis`.
template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis, std::size_t parts) {
  if (parts == 0 || a.shape().at(axis) % parts != 0)
    throw ShapeError("split: axis " + std::to_string(axis) + " of " + to_string(a.shape()) +
                     " not divisible into " + std::to_string(parts));
  const std::size_t len = a.shape()[axis] / parts;
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < parts; ++i) out.push_back(slice(a, axis, i * len, len));
  return out;
}

namespace detail {

// C[M×P] += A[M×K] · B[K×P], i-k-j order so the inner loop is contiguous.
template <class T>
void gemm_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t P) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * P;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * P;
      for (std::size_t j = 0; j < P; ++j) c[j] += av * b[j];
    }
  }
}

// C[M×P] += A[M×K] · B[P×K]ᵀ
template <class T>
void gemm_nt_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t P) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < P; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * P + j] += acc;
    }
  }
}

// C[K×P] += A[M×K]ᵀ · B[M×P]
template <class T>
void gemm_tn_acc(const T* A, const T* B, T* C, std::size_t M, std::size_t K, std::size_t P) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    const T* b = B + i * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      T* c = C + k * P;
      for (std::size_t j = 0; j < P; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

/// Batched matrix product over equal leading dimensions: (…×M×K)·(…×K×P).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() != sa.size())
    throw ShapeError("matmul: rank mismatch " + to_string(sa) + " vs " + to_string(sb));
  const std::size_t r = sa.size();
  for (std::size_t d = 0; d + 2 < r; ++d)
    if (sa[d] != sb[d]) throw ShapeError("matmul: batch dimensions differ " + to_string(sa) + " vs " + to_string(sb));
  const std::size_t M = sa[r - 2], K = sa[r - 1], P = sb[r - 1];
  if (sb[r - 2] != K)
    throw ShapeError("matmul: inner dimensions differ " + to_string(sa) + " vs " + to_string(sb));
  std::size_t batch = 1;
  for (std::size_t d = 0; d + 2 < r; ++d) batch *= sa[d];
  Shape out_shape = sa;
  out_shape[r - 1] = P;
  std::vector<T> out(batch * M * P, T(0));
  for (std::size_t n = 0; n < batch; ++n)
    detail::gemm_acc(a.data().data() + n * M * K, b.data().data() + n * K * P, out.data() + n * M * P, M, K, P);
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b}, [&] {
    return [ai = a.impl(), bi = b.impl(), batch, M, K, P](const TensorImpl<T>& o) {
      for (std::size_t n = 0; n < batch; ++n) {
        const T* g = o.grad.data() + n * M * P;
        if (ai->requires_grad)  // dA = dC · Bᵀ
          detail::gemm_nt_acc(g, bi->data.data() + n * K * P, ai->grad_buffer().data() + n * M * K, M, P, K);
        if (bi->requires_grad)  // dB = Aᵀ · dC
          detail::gemm_tn_acc(ai->data.data() + n * M * K, g, bi->grad_buffer().data() + n * K * P, M, K, P);
      }
    };
  });
}

}  // namespace dmffn
