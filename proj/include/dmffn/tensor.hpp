#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dmffn {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII guard that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
struct TensorImpl;

/// Backward closure of one recorded operation. It receives the output node and
/// adds its contribution into the gradients of the inputs it captured.
template <class T>
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void accumulate(std::size_t i, T g) {
    if (grad.empty()) grad.assign(data.size(), T(0));
    grad[i] += g;
  }
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor with optional reverse-mode graph linkage.
///
/// Copies are shallow handles; all copies observe the same buffers. Data is
/// treated as immutable once an operation has consumed it, except through
/// `mutable_data()` which optimizers and gradient checks use on leaves.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data.assign(dmffn::numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    if (dmffn::numel(shape) != data.size())
      throw ShapeError("tensor: shape " + to_string(shape) + " needs " +
                       std::to_string(dmffn::numel(shape)) + " elements, got " +
                       std::to_string(data.size()));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{1}, v, requires_grad); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& mutable_data() { return impl_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool r) { impl_->requires_grad = r; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad() const { return impl_->grad; }
  std::vector<T>& mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  const std::shared_ptr<Node<T>>& node() const { return impl_->node; }

  /// Copy of the values without graph linkage.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data, false); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Build the output of an operation. When any input is tracked and grad mode
/// is on, attaches a node whose closure is produced by `make_backward`.
template <class T, class MakeBackward>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> inputs, MakeBackward&& make_backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (!track) return out;
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = make_backward();
  out.impl()->node = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

/// Reverse-mode sweep from a single-element tensor. Gradients accumulate into
/// every tracked tensor reachable from `loss`; nothing is cleared.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw Error("backward: loss must have exactly one element");
  if (!loss.node()) throw Error("backward: loss has no recorded graph");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl<T>* child = impl->node->inputs[next++].get();
      if (child->node && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  loss.impl()->accumulate(0, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->grad.empty()) continue;  // unreachable contribution
    impl->node->backward(*impl);
  }
}

}  // namespace dmffn
