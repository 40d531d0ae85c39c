#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <vector>

#include "dmffn/checkpoint.hpp"
#include "dmffn/dataset.hpp"
#include "dmffn/optim.hpp"

namespace dmffn {

class TrainError : public Error {
 public:
  using Error::Error;
};

/// Mean absolute error as a single fused op; subgradient 0 at ties.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("l1_loss: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  const std::size_t n = pred.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  const T value = static_cast<T>(s / static_cast<double>(n));
  return make_result<T>("l1_loss", Shape{1}, {value}, {pred, target}, [pred, target, n] {
    return [pi = pred.impl(), ti = target.impl(), n](const TensorImpl<T>& out) {
      const T g = out.grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = pi->data[i] - ti->data[i];
        const T sg = d > 0 ? g : (d < 0 ? -g : T(0));
        if (pi->requires_grad) pi->accumulate(i, sg);
        if (ti->requires_grad) ti->accumulate(i, -sg);
      }
    };
  });
}

/// Step-decay schedule: lr0 halved every `decay_every` steps (step is 1-based).
inline double learning_rate(const TrainConfig& cfg, std::uint64_t step) {
  return cfg.lr0 * std::pow(0.5, static_cast<double>((step - 1) / cfg.decay_every));
}

template <class T>
using CheckpointHook = std::function<void(std::uint64_t step, const Model<T>&, const AdamState<T>&)>;

/// Runs optimizer steps state.step+1 … cfg.steps on batches drawn by step
/// index, so a resumed run sees exactly the batches an uninterrupted one
/// would. Returns the losses of the steps taken here.
template <class T>
std::vector<double> train(Model<T>& model, const PairDataset<T>& data, const TrainConfig& cfg, AdamState<T>& state,
                          std::ostream* log = nullptr, const CheckpointHook<T>& on_checkpoint = {}) {
  if (data.scale() != model.config.scale)
    throw TrainError("train: data scale " + std::to_string(data.scale()) + " does not match model scale " +
                     std::to_string(model.config.scale));
  auto params = model.parameters();
  if (state.m.empty()) state = AdamState<T>::zeros_like(params);
  std::vector<double> losses;
  for (std::uint64_t step = state.step + 1; step <= cfg.steps; ++step) {
    auto b = data.batch(static_cast<std::size_t>(step - 1), cfg.batch);
    model.zero_grad();
    auto loss = l1_loss(model.forward(b.lr), b.hr);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw TrainError("train: non-finite loss at step " + std::to_string(step));
    backward(loss);
    if (cfg.grad_clip) clip_grad_norm(params, *cfg.grad_clip);
    adam_step(params, state, AdamHyper{learning_rate(cfg, step), cfg.beta1, cfg.beta2, cfg.eps});
    losses.push_back(value);
    if (log) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%llu,%.9g\n", static_cast<unsigned long long>(step), value);
      *log << buf << std::flush;
    }
    if (on_checkpoint && step % cfg.decay_every == 0) on_checkpoint(step, model, state);
  }
  return losses;
}

}  // namespace dmffn
