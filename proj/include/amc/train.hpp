#pragma once

// Mini-batch SGD.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "amc/data.hpp"
#include "amc/model.hpp"
#include "amc/rng.hpp"

namespace amc {

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw Error("train config: learning_rate must be positive");
  if (cfg.batch_size == 0) throw Error("train config: batch_size must be positive");
}

/// Targets for one gradient step: hard labels with per-row loss weights, and
/// optionally soft probability targets that replace the labels.
struct StepTargets {
  std::vector<std::size_t> labels;
  std::vector<double> weights;    // empty: batch mean
  std::optional<Tensor> soft;     // [rows, classes]
};

/// theta <- theta - lr * grad(sum_r w_r * loss_r). Returns the loss value.
inline double sgd_step(ModelState& model, const Tensor& x, const StepTargets& targets, double lr,
                       std::uint64_t dropout_seed) {
  ForwardPass fp = forward(model, x, {Mode::train, dropout_seed, true, false});
  const ad::Var loss = targets.soft ? ad::soft_cross_entropy(fp.tape, fp.logits, *targets.soft, targets.weights)
                                    : ad::cross_entropy(fp.tape, fp.logits, targets.labels, targets.weights);
  const double value = fp.tape.value(loss)[0];
  fp.tape.backward(loss);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Tensor g = fp.tape.grad(fp.params[i]);
    Buffer& p = model.params[i].value.values();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
  return value;
}

/// Per-epoch shuffled batch boundaries. The final batch may be short.
struct EpochPlan {
  std::vector<std::size_t> order;
  std::size_t batch_size;

  std::size_t batches() const { return (order.size() + batch_size - 1) / batch_size; }
  std::vector<std::size_t> batch(std::size_t b) const {
    const std::size_t begin = b * batch_size, end = std::min(order.size(), begin + batch_size);
    return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
  }
};

inline EpochPlan plan_epoch(std::size_t n, const TrainConfig& cfg, std::size_t epoch) {
  return {shuffled_indices(n, derive_seed(cfg.seed, epoch)), cfg.batch_size};
}

inline std::uint64_t step_seed(const TrainConfig& cfg, std::size_t epoch, std::size_t batch) {
  return derive_seed(derive_seed(cfg.seed, "step"), epoch * 1000003ULL + batch);
}

struct TrainLog {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Plain training on clean data (the undefended baseline).
inline ModelState train_plain(ModelState model, const Dataset& data, const TrainConfig& cfg, TrainLog* log = nullptr) {
  validate(cfg);
  if (data.size() == 0) throw Error("train_plain: empty dataset");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const EpochPlan plan = plan_epoch(data.size(), cfg, epoch);
    double total = 0.0;
    for (std::size_t b = 0; b < plan.batches(); ++b) {
      const auto rows = plan.batch(b);
      StepTargets targets;
      for (std::size_t r : rows) targets.labels.push_back(data.labels[r]);
      total += sgd_step(model, gather_rows(data.images, rows), targets, cfg.learning_rate, step_seed(cfg, epoch, b));
    }
    if (log) log->epoch_loss.push_back(total / static_cast<double>(plan.batches()));
  }
  return model;
}

/// Training against soft probability targets ([n, classes]).
inline ModelState train_soft(ModelState model, const Tensor& images, const Tensor& targets, const TrainConfig& cfg) {
  validate(cfg);
  if (images.dim(0) == 0) throw Error("train_soft: empty dataset");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const EpochPlan plan = plan_epoch(images.dim(0), cfg, epoch);
    for (std::size_t b = 0; b < plan.batches(); ++b) {
      const auto rows = plan.batch(b);
      StepTargets st;
      st.labels.assign(rows.size(), 0);
      st.soft = gather_rows(targets, rows);
      sgd_step(model, gather_rows(images, rows), st, cfg.learning_rate, step_seed(cfg, epoch, b));
    }
  }
  return model;
}

inline double accuracy(const ModelState& model, const Dataset& data) {
  if (data.size() == 0) throw Error("accuracy: empty dataset");
  const auto pred = predict_label(model, data.images);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace amc
