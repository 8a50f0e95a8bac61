#pragma once

// Adversarial training, adversarial model cascades and input quantization.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amc/attacks.hpp"
#include "amc/data.hpp"
#include "amc/train.hpp"

namespace amc {

struct AdvTrainConfig {
  double alpha = 0.5;  // weight of the clean loss
  TrainConfig train;
};

inline void validate(const AdvTrainConfig& cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw Error("adversarial training: alpha must lie in [0,1]");
  validate(cfg.train);
}

struct CascadeConfig {
  std::vector<AttackConfig> attack_order;
  double current_fraction = 0.8;
  AdvTrainConfig level;  // used at every level
};

inline void validate(const CascadeConfig& c) {
  if (c.attack_order.empty()) throw Error("cascade: attack order is empty");
  if (!(c.current_fraction > 0.0 && c.current_fraction <= 1.0))
    throw Error("cascade: current_fraction must lie in (0,1]");
  for (const auto& a : c.attack_order) validate(a);
  validate(c.level);
}

// ---------------------------------------------------------------- batch composition

struct BatchComposition {
  std::vector<std::size_t> attack_counts;  // entry k: samples perturbed by attack k (0-based)
  std::size_t clean = 0;                   // clean copies in the union batch
  std::vector<std::size_t> assignment;     // attack index per batch position
};

/// Adversarial sample counts for level `level` (1-based) of a cascade over a
/// batch of m samples. Level 1 perturbs everything with attack 1. Later levels
/// give round(fraction * m) samples to the current attack and split the rest
/// evenly over the earlier attacks; leftover units go to the earliest attacks.
inline std::vector<std::size_t> composition_counts(std::size_t level, std::size_t m, std::size_t levels,
                                                   double current_fraction) {
  if (level < 1 || level > levels)
    throw Error("compose_batch: level " + std::to_string(level) + " outside [1," + std::to_string(levels) + "]");
  std::vector<std::size_t> counts(level, 0);
  if (level == 1) {
    counts[0] = m;
    return counts;
  }
  const auto current = std::min<std::size_t>(m, static_cast<std::size_t>(std::lround(current_fraction * static_cast<double>(m))));
  counts[level - 1] = current;
  const std::size_t rest = m - current, previous = level - 1;
  for (std::size_t k = 0; k < previous; ++k) counts[k] = rest / previous + (k < rest % previous ? 1 : 0);
  return counts;
}

/// Counts plus a seeded, non-overlapping assignment of batch positions to attacks.
inline BatchComposition compose_batch(std::size_t level, std::size_t m, const CascadeConfig& cascade,
                                      std::uint64_t seed) {
  BatchComposition bc;
  bc.attack_counts = composition_counts(level, m, cascade.attack_order.size(), cascade.current_fraction);
  bc.clean = m;
  bc.assignment.reserve(m);
  for (std::size_t k = 0; k < bc.attack_counts.size(); ++k) bc.assignment.insert(bc.assignment.end(), bc.attack_counts[k], k);
  if (level > 1) {
    Rng rng(seed);
    std::shuffle(bc.assignment.begin(), bc.assignment.end(), rng);
  }
  return bc;
}

// ---------------------------------------------------------------- crafter

/// Which model adversarial examples are crafted against during training: the
/// model being trained (white-box hardening), a fixed proxy, or a proxy
/// produced afresh at the start of every cascade level.
class Crafter {
 public:
  using LevelFn = std::function<ModelState(const ModelState& level_start, std::size_t level)>;

  static Crafter self() { return Crafter{}; }
  static Crafter fixed(ModelState proxy) {
    Crafter c;
    c.fixed_ = std::move(proxy);
    return c;
  }
  static Crafter per_level(LevelFn fn) {
    Crafter c;
    c.per_level_ = std::move(fn);
    return c;
  }

  bool is_self() const { return !fixed_ && !per_level_; }

  /// The crafting model for a level, or nullopt for "the model being trained".
  std::optional<ModelState> for_level(const ModelState& level_start, std::size_t level) const {
    if (fixed_) return fixed_;
    if (per_level_) return per_level_(level_start, level);
    return std::nullopt;
  }

 private:
  std::optional<ModelState> fixed_;
  LevelFn per_level_;
};

// ---------------------------------------------------------------- training

struct LevelLog {
  std::size_t level = 0;
  std::string attack;
  std::vector<double> epoch_loss;
  std::vector<std::size_t> attack_counts;  // adversarial samples per attack (0-based), this level
};

struct CascadeLog {
  std::vector<LevelLog> levels;
  std::vector<std::string> attack_names;

  std::vector<std::size_t> cumulative_counts() const {
    std::vector<std::size_t> total(attack_names.size(), 0);
    for (const auto& l : levels)
      for (std::size_t k = 0; k < l.attack_counts.size(); ++k) total[k] += l.attack_counts[k];
    return total;
  }
  /// Cumulative counts divided by the last attack's count.
  std::vector<double> realized_ratio() const {
    const auto total = cumulative_counts();
    std::vector<double> r(total.size(), 0.0);
    if (total.empty() || total.back() == 0) return r;
    for (std::size_t k = 0; k < total.size(); ++k) r[k] = static_cast<double>(total[k]) / static_cast<double>(total.back());
    return r;
  }
};

namespace detail {

/// One cascade level (or plain adversarial training when `attacks` has one
/// entry and level == 1). Adversarial examples are regenerated for every
/// mini-batch against the current crafting model; each step minimizes
/// alpha * mean CE(clean) + (1 - alpha) * mean CE(adversarial).
inline ModelState train_level(ModelState model, const Dataset& data, std::span<const AttackConfig> attacks,
                              std::size_t level, const CascadeConfig& cascade, const ModelState* crafter,
                              LevelLog* log) {
  const AdvTrainConfig& cfg = cascade.level;
  if (data.size() == 0) throw Error("adversarial training: empty dataset");
  const TrainConfig& tc = cfg.train;
  std::vector<std::size_t> counts(attacks.size(), 0);
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const EpochPlan plan = plan_epoch(data.size(), tc, epoch);
    double total = 0.0;
    for (std::size_t b = 0; b < plan.batches(); ++b) {
      const auto rows = plan.batch(b);
      const std::size_t m = rows.size();
      const std::uint64_t sseed = step_seed(tc, epoch, b);
      Tensor x = gather_rows(data.images, rows);
      StepTargets targets;
      for (std::size_t r : rows) targets.labels.push_back(data.labels[r]);

      if (cfg.alpha < 1.0) {
        const BatchComposition bc = compose_batch(level, m, cascade, derive_seed(sseed, "compose"));
        Tensor x_adv(x.shape());
        const std::size_t row = x.row_size();
        const ModelState& target = crafter ? *crafter : model;
        for (std::size_t k = 0; k < attacks.size(); ++k) {
          if (bc.attack_counts[k] == 0) continue;
          std::vector<std::size_t> pos;
          for (std::size_t p = 0; p < m; ++p)
            if (bc.assignment[p] == k) pos.push_back(p);
          std::vector<std::size_t> ys;
          for (std::size_t p : pos) ys.push_back(targets.labels[p]);
          const AdvBatch adv = craft(target, gather_rows(x, pos), ys, attacks[k], derive_seed(sseed, k));
          for (std::size_t q = 0; q < pos.size(); ++q)
            std::copy_n(adv.x_adv.data() + q * row, row, x_adv.data() + pos[q] * row);
          counts[k] += pos.size();
        }
        x = concat_rows(x, x_adv);
        targets.labels.insert(targets.labels.end(), targets.labels.begin(), targets.labels.end());
        targets.weights.assign(2 * m, 0.0);
        for (std::size_t p = 0; p < m; ++p) {
          targets.weights[p] = cfg.alpha / static_cast<double>(m);
          targets.weights[m + p] = (1.0 - cfg.alpha) / static_cast<double>(m);
        }
      }
      total += sgd_step(model, x, targets, tc.learning_rate, sseed);
    }
    if (log) log->epoch_loss.push_back(plan.batches() ? total / static_cast<double>(plan.batches()) : 0.0);
  }
  if (log) {
    log->level = level;
    log->attack = attacks[level - 1].name();
    log->attack_counts = counts;
  }
  return model;
}

inline TrainConfig level_train_config(const TrainConfig& base, std::size_t level) {
  TrainConfig tc = base;
  if (level > 1) tc.seed = derive_seed(base.seed, level - 1);
  return tc;
}

}  // namespace detail

/// Hardens `model` against one attack. With crafter == self the examples are
/// crafted on the model under training (white-box); otherwise on the proxy.
inline ModelState adversarial_train(const ModelState& model, const AttackConfig& attack, const Dataset& data,
                                    const AdvTrainConfig& cfg, const Crafter& crafter = Crafter::self(),
                                    LevelLog* log = nullptr) {
  validate(cfg);
  validate(attack);
  const CascadeConfig single{{attack}, 1.0, cfg};
  const auto crafting = crafter.for_level(model, 1);
  return detail::train_level(model, data, single.attack_order, 1, single, crafting ? &*crafting : nullptr, log);
}

struct CascadeObserver {
  std::function<void(std::size_t level, const ModelState& initial)> on_level_start;
  std::function<void(std::size_t level, const ModelState& final_model)> on_level_end;
};

namespace detail {

inline ModelState run_cascade(const ModelState& m0, const Dataset& data, const CascadeConfig& cascade,
                              const Crafter& crafter, bool transfer, CascadeLog* log,
                              const CascadeObserver& observer) {
  validate(cascade);
  if (log) {
    log->levels.clear();
    log->attack_names.clear();
    for (const auto& a : cascade.attack_order) log->attack_names.push_back(a.name());
  }
  ModelState prev = m0;
  const std::size_t levels = cascade.attack_order.size();
  for (std::size_t i = 1; i <= levels; ++i) {
    ModelState init = transfer_params(transfer ? prev : m0, m0.spec);
    if (observer.on_level_start) observer.on_level_start(i, init);
    CascadeConfig level_cfg = cascade;
    level_cfg.level.train = level_train_config(cascade.level.train, i);
    const auto crafting = crafter.for_level(init, i);
    LevelLog ll;
    const std::span<const AttackConfig> seen(cascade.attack_order.data(), i);
    prev = train_level(std::move(init), data, seen, i, level_cfg, crafting ? &*crafting : nullptr, &ll);
    if (observer.on_level_end) observer.on_level_end(i, prev);
    if (log) log->levels.push_back(std::move(ll));
  }
  return prev;
}

}  // namespace detail

/// Sequential hardening over the attack order: level i starts from the
/// parameters level i-1 finished with and mixes adversarial samples from
/// attacks 1..i according to compose_batch. Prediction uses the returned
/// final model.
inline ModelState amc_train(const ModelState& m0, const Dataset& data, const CascadeConfig& cascade,
                            const Crafter& crafter = Crafter::self(), CascadeLog* log = nullptr,
                            const CascadeObserver& observer = {}) {
  return detail::run_cascade(m0, data, cascade, crafter, true, log, observer);
}

/// Ablation: every level restarts from the undefended parameters.
inline ModelState amc_train_no_transfer(const ModelState& m0, const Dataset& data, const CascadeConfig& cascade,
                                        const Crafter& crafter = Crafter::self(), CascadeLog* log = nullptr,
                                        const CascadeObserver& observer = {}) {
  return detail::run_cascade(m0, data, cascade, crafter, false, log, observer);
}

// ---------------------------------------------------------------- feature squeezing

/// Bit-depth reduction: round(x * (2^b - 1)) / (2^b - 1).
inline Tensor quantize(const Tensor& x, int bits) {
  if (bits < 1 || bits > 8) throw Error("quantize: bits must lie in [1,8], got " + std::to_string(bits));
  const double levels = static_cast<double>((1 << bits) - 1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::round(x[i] * levels) / levels;
  return out;
}

inline std::vector<std::size_t> defended_predict(const ModelState& model, const Tensor& x,
                                                 std::optional<int> squeeze_bits = std::nullopt) {
  return squeeze_bits ? predict_label(model, quantize(x, *squeeze_bits)) : predict_label(model, x);
}

}  // namespace amc
