#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "amc/model.hpp"

namespace amc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares analytic input and parameter gradients of the mean cross-entropy
/// against central differences with step h. Relative error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
inline GradCheckResult finite_diff_check(const ModelState& model, const Tensor& x, std::span<const std::size_t> y,
                                         double h) {
  if (!(h > 0.0)) throw Error("finite_diff_check: step must be positive");
  auto loss_at = [&](const ModelState& m, const Tensor& in) {
    ForwardPass fp = forward(m, in);
    return fp.tape.value(ad::cross_entropy(fp.tape, fp.logits, y))[0];
  };
  ForwardPass fp = forward(model, x, {Mode::eval, 0, true, true});
  const Gradients g = backward(fp, ad::cross_entropy(fp.tape, fp.logits, y));

  GradCheckResult res;
  auto compare = [&](double analytic, double plus, double minus) {
    const double numeric = (plus - minus) / (2.0 * h);
    res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
    ++res.coordinates;
  };

  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double up = loss_at(model, xp);
    xp[i] = x[i] - h;
    const double down = loss_at(model, xp);
    xp[i] = x[i];
    compare(g.input[i], up, down);
  }
  ModelState mp = model;
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    Buffer& v = mp.params[p].value.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss_at(mp, x);
      v[i] = orig - h;
      const double down = loss_at(mp, x);
      v[i] = orig;
      compare(g.params[p][i], up, down);
    }
  }
  return res;
}

}  // namespace amc
