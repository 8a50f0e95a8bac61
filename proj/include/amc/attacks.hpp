#pragma once

// The four adversarial example generators. Each is an optimizer over the
// input space; every output is clipped to [0,1].
//
//   fgsm  one signed-gradient step under an L-inf budget
//   pgm   iterated signed-gradient steps projected onto the L-inf ball
//   eap   elastic-net (L1 + L2) attack solved by iterative shrinkage-thresholding
//   vap   virtual adversarial perturbation; power iteration on the KL curvature

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "amc/model.hpp"
#include "amc/rng.hpp"
#include "amc/serialize.hpp"
#include "json.hpp"

namespace amc {

struct FgsmConfig {
  double eps = 0.1;
  friend bool operator==(const FgsmConfig&, const FgsmConfig&) = default;
};

struct PgmConfig {
  double eps = 0.3;
  std::size_t nb_iter = 15;
  std::optional<double> step_size;  // default min(eps, 2.5 * eps / nb_iter)

  double step() const {
    return step_size.value_or(std::min(eps, 2.5 * eps / static_cast<double>(std::max<std::size_t>(nb_iter, 1))));
  }
  friend bool operator==(const PgmConfig&, const PgmConfig&) = default;
};

struct EapConfig {
  double beta = 1e-2;
  std::size_t binary_steps = 5;
  std::size_t max_iterations = 8;
  double initial_const = 1e-3;
  double learning_rate = 1e-1;
  friend bool operator==(const EapConfig&, const EapConfig&) = default;
};

struct VapConfig {
  double xi = 1.0;
  std::size_t num_iters = 6;
  double eps = 5.0;
  friend bool operator==(const VapConfig&, const VapConfig&) = default;
};

enum class AttackId { fgsm, eap, pgm, vap };

inline const char* attack_name(AttackId id) {
  switch (id) {
    case AttackId::fgsm: return "fgsm";
    case AttackId::eap: return "eap";
    case AttackId::pgm: return "pgm";
    case AttackId::vap: return "vap";
  }
  return "?";
}

inline AttackId attack_id_from_name(const std::string& name) {
  for (AttackId id : {AttackId::fgsm, AttackId::eap, AttackId::pgm, AttackId::vap})
    if (name == attack_name(id)) return id;
  throw Error("unknown attack '" + name + "' (expected fgsm, eap, pgm or vap)");
}

struct AttackConfig {
  std::variant<FgsmConfig, PgmConfig, EapConfig, VapConfig> params;

  AttackConfig() = default;
  AttackConfig(FgsmConfig c) : params(c) {}
  AttackConfig(PgmConfig c) : params(c) {}
  AttackConfig(EapConfig c) : params(c) {}
  AttackConfig(VapConfig c) : params(c) {}

  AttackId id() const {
    return std::visit(
        [](const auto& c) {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, FgsmConfig>) return AttackId::fgsm;
          else if constexpr (std::is_same_v<T, PgmConfig>) return AttackId::pgm;
          else if constexpr (std::is_same_v<T, EapConfig>) return AttackId::eap;
          else return AttackId::vap;
        },
        params);
  }
  std::string name() const { return attack_name(id()); }
  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

inline void validate(const FgsmConfig& c) {
  if (!(c.eps >= 0.0)) throw Error("fgsm: eps must be >= 0");
}
inline void validate(const PgmConfig& c) {
  if (!(c.eps >= 0.0)) throw Error("pgm: eps must be >= 0");
  if (c.nb_iter == 0) throw Error("pgm: nb_iter must be positive");
  if (c.step_size && !(*c.step_size > 0.0)) throw Error("pgm: step_size must be positive");
  if (c.step_size && c.eps > 0.0 && *c.step_size > c.eps) throw Error("pgm: step_size must not exceed eps");
}
inline void validate(const EapConfig& c) {
  if (!(c.beta > 0.0) || !(c.initial_const > 0.0) || !(c.learning_rate > 0.0) || c.max_iterations == 0 ||
      c.binary_steps == 0)
    throw Error("eap: beta, binary_steps, max_iterations, initial_const and learning_rate must be positive");
}
inline void validate(const VapConfig& c) {
  if (!(c.xi > 0.0)) throw Error("vap: xi must be positive");
  if (c.num_iters == 0) throw Error("vap: num_iters must be >= 1");
  if (!(c.eps > 0.0)) throw Error("vap: eps must be positive");
}
inline void validate(const AttackConfig& a) {
  std::visit([](const auto& c) { validate(c); }, a.params);
}

// ---------------------------------------------------------------- json

inline void to_json(nlohmann::json& j, const AttackConfig& a) {
  std::visit(
      [&j](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FgsmConfig>) {
          j = {{"attack", "fgsm"}, {"eps", c.eps}};
        } else if constexpr (std::is_same_v<T, PgmConfig>) {
          j = {{"attack", "pgm"}, {"eps", c.eps}, {"nb_iter", c.nb_iter}, {"step_size", c.step()}};
        } else if constexpr (std::is_same_v<T, EapConfig>) {
          j = {{"attack", "eap"},          {"beta", c.beta},
               {"binary_steps", c.binary_steps}, {"max_iterations", c.max_iterations},
               {"initial_const", c.initial_const}, {"learning_rate", c.learning_rate}};
        } else {
          j = {{"attack", "vap"}, {"xi", c.xi}, {"num_iters", c.num_iters}, {"eps", c.eps}};
        }
      },
      a.params);
}

// ---------------------------------------------------------------- helpers

namespace detail {

/// Gradient of the summed per-sample cross-entropy with respect to the input.
inline Tensor loss_input_gradient(const ModelState& model, const Tensor& x, std::span<const std::size_t> y) {
  ForwardPass fp = forward(model, x, {Mode::eval, 0, false, true});
  const std::vector<double> ones(y.size(), 1.0);
  const ad::Var loss = ad::cross_entropy(fp.tape, fp.logits, y, ones);
  fp.tape.backward(loss);
  return fp.tape.grad(fp.input);
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
inline double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

inline void check_unit_range(const Tensor& x, const char* who) {
  for (double v : x.values())
    if (!(v >= 0.0 && v <= 1.0)) throw Error(std::string(who) + ": input outside [0,1]");
}

}  // namespace detail

// ---------------------------------------------------------------- attacks

inline Tensor fgsm(const ModelState& model, const Tensor& x, std::span<const std::size_t> y, const FgsmConfig& cfg) {
  validate(cfg);
  detail::check_unit_range(x, "fgsm");
  if (cfg.eps == 0.0) return x;
  const Tensor g = detail::loss_input_gradient(model, x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = detail::clip01(x[i] + cfg.eps * detail::sign(g[i]));
  return out;
}

/// Starts at the clean point; each step moves by step_size * sign(grad) and
/// projects onto the intersection of the eps L-inf ball and [0,1].
inline Tensor pgm(const ModelState& model, const Tensor& x0, std::span<const std::size_t> y, const PgmConfig& cfg) {
  validate(cfg);
  detail::check_unit_range(x0, "pgm");
  if (cfg.eps == 0.0) return x0;
  const double step = cfg.step();
  Tensor x = x0;
  for (std::size_t it = 0; it < cfg.nb_iter; ++it) {
    const Tensor g = detail::loss_input_gradient(model, x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double moved = x[i] + step * detail::sign(g[i]);
      x[i] = detail::clip01(std::min(x0[i] + cfg.eps, std::max(x0[i] - cfg.eps, moved)));
    }
  }
  return x;
}

/// Soft-thresholding projected to [0,1]: coordinates whose update moved less
/// than beta away from the original snap back to it exactly.
inline double shrink_threshold(double updated, double original, double beta) {
  const double d = updated - original;
  if (d > beta) return detail::clip01(updated - beta);
  if (d < -beta) return detail::clip01(updated + beta);
  return original;
}

struct EapResult {
  Tensor x_adv;
  std::vector<bool> found;
  std::vector<double> distortion;  // ||d||_2^2 + beta ||d||_1 of the returned point
};

/// Elastic-net distortion ||x' - x||_2^2 + beta ||x' - x||_1 of one row.
inline double elastic_net_distortion(const double* adv, const double* x, std::size_t n, double beta) {
  double l2 = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = adv[i] - x[i];
    l2 += d * d;
    l1 += std::abs(d);
  }
  return l2 + beta * l1;
}

/// Minimizes c * max(z_y - max_{j != y} z_j, 0) + ||d||_2^2 + beta ||d||_1 by
/// ISTA, with a binary search over c. Keeps, per sample, the misclassified
/// iterate of lowest elastic-net distortion; samples without one are returned
/// unchanged and flagged not found.
inline EapResult eap(const ModelState& model, const Tensor& x, std::span<const std::size_t> y, const EapConfig& cfg) {
  validate(cfg);
  detail::check_unit_range(x, "eap");
  const std::size_t n = x.dim(0), row = x.row_size();
  EapResult res{x, std::vector<bool>(n, false), std::vector<double>(n, 0.0)};
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<double> c(n, cfg.initial_const), lower(n, 0.0), upper(n, 1e10);

  for (std::size_t bs = 0; bs < cfg.binary_steps; ++bs) {
    Tensor xk = x;
    std::vector<bool> round_success(n, false);
    for (std::size_t it = 0; it <= cfg.max_iterations; ++it) {
      ForwardPass fp = forward(model, xk, {Mode::eval, 0, false, true});
      if (it > 0) {
        const auto pred = argmax_rows(fp.logit_values());
        for (std::size_t s = 0; s < n; ++s) {
          if (pred[s] == y[s]) continue;
          round_success[s] = true;
          const double dist = elastic_net_distortion(xk.data() + s * row, x.data() + s * row, row, cfg.beta);
          if (dist < best[s]) {
            best[s] = dist;
            res.found[s] = true;
            res.distortion[s] = dist;
            std::copy_n(xk.data() + s * row, row, res.x_adv.data() + s * row);
          }
        }
      }
      if (it == cfg.max_iterations) break;
      const ad::Var loss = ad::margin_loss(fp.tape, fp.logits, y, c);
      fp.tape.backward(loss);
      const Tensor g = fp.tape.grad(fp.input);
      for (std::size_t i = 0; i < xk.size(); ++i) {
        const double grad = g[i] + 2.0 * (xk[i] - x[i]);
        xk[i] = shrink_threshold(xk[i] - cfg.learning_rate * grad, x[i], cfg.beta);
      }
    }
    for (std::size_t s = 0; s < n; ++s) {
      if (round_success[s]) {
        upper[s] = std::min(upper[s], c[s]);
        c[s] = 0.5 * (lower[s] + upper[s]);
      } else {
        lower[s] = std::max(lower[s], c[s]);
        c[s] = upper[s] < 1e9 ? 0.5 * (lower[s] + upper[s]) : c[s] * 10.0;
      }
    }
  }
  return res;
}

struct VapResult {
  Tensor x_adv;
  Tensor direction;  // unit L2 direction per sample, before scaling by eps
  std::vector<bool> degenerate;
};

/// Power iteration for the input direction that most increases
/// KL(p(x) || p(x + r)); the true label is never used.
inline VapResult vap(const ModelState& model, const Tensor& x, const VapConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  detail::check_unit_range(x, "vap");
  const std::size_t n = x.dim(0), row = x.row_size();
  VapResult res{Tensor(x.shape()), Tensor(x.shape()), std::vector<bool>(n, false)};
  const Tensor clean_logits = predict_logits(model, x);

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor& d = res.direction;
  for (double& v : d.values()) v = normal(rng);
  auto normalize_rows = [&](const Tensor& g, bool initial) {
    for (std::size_t s = 0; s < n; ++s) {
      double sq = 0.0;
      for (std::size_t i = 0; i < row; ++i) sq += g[s * row + i] * g[s * row + i];
      const double norm = std::sqrt(sq);
      if (!(norm > 1e-30) || !std::isfinite(norm)) {
        if (!initial) res.degenerate[s] = true;
        continue;
      }
      for (std::size_t i = 0; i < row; ++i) d[s * row + i] = g[s * row + i] / norm;
    }
  };
  normalize_rows(d, true);

  for (std::size_t it = 0; it < cfg.num_iters; ++it) {
    Tensor probe = x;
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] += cfg.xi * d[i];
    ForwardPass fp = forward(model, probe, {Mode::eval, 0, false, true});
    const ad::Var p = fp.tape.constant(clean_logits);
    const ad::Var kl = ad::kl_divergence(fp.tape, p, fp.logits);
    fp.tape.backward(kl);
    normalize_rows(fp.tape.grad(fp.input), false);
  }
  for (std::size_t i = 0; i < x.size(); ++i) res.x_adv[i] = detail::clip01(x[i] + cfg.eps * d[i]);
  return res;
}

// ---------------------------------------------------------------- dispatch

struct AdvBatch {
  AttackConfig attack;
  std::uint64_t seed = 0;
  Tensor x_adv;
  std::vector<std::size_t> labels;
  std::vector<bool> success;  // crafting model mislabels the sample
};

/// Runs one attack over a batch against `model`. Output lies in [0,1].
inline AdvBatch craft(const ModelState& model, const Tensor& x, std::span<const std::size_t> y,
                      const AttackConfig& attack, std::uint64_t seed) {
  validate(attack);
  AdvBatch out{attack, seed, x, std::vector<std::size_t>(y.begin(), y.end()), {}};
  if (x.rank() == 0 || x.dim(0) == 0) return out;
  if (y.size() != x.dim(0)) throw Error("craft: label count does not match batch");
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, FgsmConfig>) out.x_adv = fgsm(model, x, y, c);
        else if constexpr (std::is_same_v<T, PgmConfig>) out.x_adv = pgm(model, x, y, c);
        else if constexpr (std::is_same_v<T, EapConfig>) out.x_adv = eap(model, x, y, c).x_adv;
        else out.x_adv = vap(model, x, c, seed).x_adv;
      },
      attack.params);
  const auto pred = predict_label(model, out.x_adv);
  out.success.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.success[i] = pred[i] != y[i];
  return out;
}

/// Tensor container (x_adv, labels) plus a JSON sidecar at `path` + ".json".
inline void save_adv_batch(const AdvBatch& b, const std::filesystem::path& path) {
  TensorContainer c;
  c.header = {{"kind", "adv_batch"}, {"attack", b.attack.name()}};
  Tensor labels({b.labels.size()});
  for (std::size_t i = 0; i < b.labels.size(); ++i) labels[i] = static_cast<double>(b.labels[i]);
  c.tensors.push_back({"x_adv", b.x_adv});
  c.tensors.push_back({"labels", std::move(labels)});
  save_container(c, path);
  nlohmann::json side = {{"attack", b.attack.name()}, {"config", b.attack}, {"seed", b.seed},
                         {"success", b.success}};
  const std::string text = side.dump(2) + "\n";
  write_file(path.string() + ".json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace amc
