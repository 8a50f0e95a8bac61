#pragma once

// Adaptive black-box adversary: the target is reachable only through a
// prediction interface; the adversary labels its own pool through that
// interface, trains a substitute and transfers white-box attacks from it.

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amc/attacks.hpp"
#include "amc/data.hpp"
#include "amc/defenses.hpp"
#include "amc/train.hpp"

namespace amc {

enum class InterfaceKind { label_only, noisy_label, prob_vector };

inline const char* interface_name(InterfaceKind k) {
  switch (k) {
    case InterfaceKind::label_only: return "label_only";
    case InterfaceKind::noisy_label: return "noisy_label";
    case InterfaceKind::prob_vector: return "prob_vector";
  }
  return "?";
}

inline InterfaceKind interface_from_name(const std::string& s) {
  for (auto k : {InterfaceKind::label_only, InterfaceKind::noisy_label, InterfaceKind::prob_vector})
    if (s == interface_name(k)) return k;
  throw Error("unknown interface '" + s + "' (expected label_only, noisy_label or prob_vector)");
}

struct QueryResponse {
  std::vector<std::size_t> labels;
  std::optional<Tensor> probabilities;  // prob_vector only
};

/// The target's predictive surface. Parameters are held privately and never
/// exposed; every evaluation of the target goes through a counted query.
class PredictionInterface {
 public:
  PredictionInterface(const ModelState& target, InterfaceKind kind, double noise_p = 0.1)
      : target_(&target), kind_(kind), noise_p_(noise_p) {
    if (!(noise_p >= 0.0 && noise_p < 1.0)) throw Error("noisy label interface: p must lie in [0,1)");
  }
  PredictionInterface(const PredictionInterface&) = delete;
  PredictionInterface& operator=(const PredictionInterface&) = delete;

  InterfaceKind kind() const { return kind_; }
  double noise() const { return noise_p_; }
  std::size_t num_classes() const { return target_->spec.num_classes; }
  Shape input_shape() const { return target_->spec.input_shape; }
  std::uint64_t queries() const { return counter_.load(); }

  /// The adversary's view: argmax labels, argmax labels flipped to a uniform
  /// other class with probability p, or the full probability vector.
  QueryResponse query(const Tensor& x, std::uint64_t seed) const {
    const Tensor logits = evaluate(x);
    QueryResponse r{argmax_rows(logits), std::nullopt};
    if (kind_ == InterfaceKind::noisy_label && noise_p_ > 0.0) {
      Rng rng(seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::uniform_int_distribution<std::size_t> other(0, num_classes() - 2);
      for (auto& y : r.labels) {
        if (u(rng) >= noise_p_) continue;
        const std::size_t k = other(rng);
        y = k >= y ? k + 1 : k;
      }
    } else if (kind_ == InterfaceKind::prob_vector) {
      r.probabilities = softmax_rows(logits);
    }
    return r;
  }

  /// Noise-free argmax labels, used when scoring the target on transferred
  /// examples. Counted like any other query.
  std::vector<std::size_t> query_label(const Tensor& x) const { return argmax_rows(evaluate(x)); }

 private:
  Tensor evaluate(const Tensor& x) const {
    Tensor logits = predict_logits(*target_, x);
    counter_.fetch_add(x.dim(0));
    return logits;
  }

  const ModelState* target_;
  InterfaceKind kind_;
  double noise_p_;
  mutable std::atomic<std::uint64_t> counter_{0};
};

struct ProxyState {
  ModelState model;
  std::string tag;  // "P'" (hardening) or "P''" (evaluation)
  std::string pool;
};

struct QueryLog {
  std::uint64_t queries = 0;
};

/// Labels the pool through the interface (one pass) and trains a substitute
/// with the proxy architecture. Probability-vector interfaces train on the
/// soft targets.
inline std::pair<ProxyState, QueryLog> train_proxy(const PredictionInterface& iface, const Dataset& pool,
                                                   const std::string& tag, const TrainConfig& cfg) {
  if (pool.size() == 0) throw Error("train_proxy: empty pool");
  const std::uint64_t before = iface.queries();
  const QueryResponse r = iface.query(pool.images, derive_seed(cfg.seed, "proxy-labels"));
  ModelState proxy = build(desk_proxy_spec(iface.input_shape(), iface.num_classes()), derive_seed(cfg.seed, "proxy-init"));
  if (r.probabilities) {
    proxy = train_soft(std::move(proxy), pool.images, *r.probabilities, cfg);
  } else {
    Dataset labeled{pool.images, r.labels, iface.num_classes(), pool.name, Partition::proxy_pool};
    proxy = train_plain(std::move(proxy), labeled, cfg);
  }
  return {ProxyState{std::move(proxy), tag, pool.name}, QueryLog{iface.queries() - before}};
}

inline AdvBatch transfer_attack(const ProxyState& proxy, const AttackConfig& attack, const Tensor& x,
                                std::span<const std::size_t> y, std::uint64_t seed) {
  return craft(proxy.model, x, y, attack, seed);
}

struct ProxyHardeningLog {
  std::uint64_t queries = 0;
  std::size_t proxy_trainings = 0;
};

/// Single-attack hardening with examples crafted on a fixed proxy P'.
inline ModelState harden_via_proxy(const ModelState& target, const ProxyState& hardening_proxy,
                                   const AttackConfig& attack, const Dataset& data, const AdvTrainConfig& cfg) {
  return adversarial_train(target, attack, data, cfg, Crafter::fixed(hardening_proxy.model));
}

/// Cascade hardening through a proxy. Level 1 crafts on the supplied P';
/// every later level first retrains P' from scratch against the interface of
/// the model that level starts from.
inline ModelState harden_via_proxy(const ModelState& target, const ProxyState& hardening_proxy,
                                   const CascadeConfig& cascade, const Dataset& data, const Dataset& pool,
                                   InterfaceKind kind, double noise_p, const TrainConfig& proxy_cfg,
                                   CascadeLog* log = nullptr, ProxyHardeningLog* plog = nullptr,
                                   const CascadeObserver& observer = {}) {
  auto provider = [&](const ModelState& level_start, std::size_t level) -> ModelState {
    if (level == 1) return hardening_proxy.model;
    PredictionInterface iface(level_start, kind, noise_p);
    auto [proxy, qlog] = train_proxy(iface, pool, hardening_proxy.tag, proxy_cfg);
    if (plog) {
      plog->queries += qlog.queries;
      ++plog->proxy_trainings;
    }
    return std::move(proxy.model);
  };
  return amc_train(target, data, cascade, Crafter::per_level(provider), log, observer);
}

}  // namespace amc
