#include <gtest/gtest.h>

#include <cmath>

#include "amc/gradcheck.hpp"
#include "helpers.hpp"

using namespace amc;
using amc::test::random_labels;
using amc::test::random_tensor;

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// straight-line two-layer MLP, no library code
std::vector<double> mlp_oracle(const ModelState& m, const Tensor& x) {
  const Tensor &W1 = m.params[0].value, &b1 = m.params[1].value, &W2 = m.params[2].value, &b2 = m.params[3].value;
  const std::size_t B = x.dim(0), D = x.dim(1), H = W1.dim(0), C = W2.dim(0);
  std::vector<double> out(B * C);
  for (std::size_t r = 0; r < B; ++r) {
    std::vector<double> h(H);
    for (std::size_t i = 0; i < H; ++i) {
      double s = b1[i];
      for (std::size_t k = 0; k < D; ++k) s += W1[i * D + k] * x[r * D + k];
      h[i] = std::tanh(s);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double s = b2[c];
      for (std::size_t i = 0; i < H; ++i) s += W2[c * H + i] * h[i];
      out[r * C + c] = s;
    }
  }
  return out;
}

double ce_oracle(const Tensor& z, const std::vector<std::size_t>& y) {
  const std::size_t B = z.dim(0), C = z.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(z[r * C + c]);
    total += -std::log(std::exp(z[r * C + y[r]]) / denom);
  }
  return total / static_cast<double>(B);
}

double scalar(ad::Tape& t, ad::Var v) { return t.value(v)[0]; }

}  // namespace

TEST(Forward, ZeroWeightLinearGivesZeroLogits) {
  const ModelState m = test::linear_model(3, std::vector<double>(6, 0.0), {0.0, 0.0});
  const Tensor logits = predict_logits(m, random_tensor({4, 3}, 1));
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLinearLayer) {
  const ModelState m = test::linear_model(2, {1, 0, 0, 1}, {0, 0});
  const Tensor logits = predict_logits(m, Tensor({1, 2}, std::vector<double>{1, 2}));
  EXPECT_EQ(logits[0], 1.0);
  EXPECT_EQ(logits[1], 2.0);
}

TEST(Forward, MlpMatchesStraightLineOracle) {
  const ModelState m = build(test::mlp_spec(5, 7, 3), 42);
  const Tensor x = random_tensor({4, 5}, 2);
  const Tensor logits = predict_logits(m, x);
  const auto want = mlp_oracle(m, x);
  ASSERT_EQ(logits.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(logits[i], want[i], 1e-12);
}

TEST(Forward, ShapeMismatchNamesBothShapes) {
  const ModelState m = build(test::mlp_spec(5, 7, 3), 1);
  try {
    (void)predict_logits(m, Tensor({2, 4}));
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("(2,4)"), std::string::npos) << what;
    EXPECT_NE(what.find("(B,5)"), std::string::npos) << what;
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  ad::Tape t;
  const auto z = t.constant(Tensor({2, 5}, 0.3));
  const std::vector<std::size_t> y{0, 4};
  EXPECT_NEAR(scalar(t, ad::cross_entropy(t, z, y)), std::log(5.0), 1e-15);
}

TEST(CrossEntropy, SaturatedCorrectPredictionIsZero) {
  ad::Tape t;
  const auto z = t.constant(Tensor({1, 3}, std::vector<double>{0, 1e6, 0}));
  const std::vector<std::size_t> y{1};
  const double loss = scalar(t, ad::cross_entropy(t, z, y));
  EXPECT_GE(loss, 0.0);
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesSoftmaxThenLogOracle) {
  const Tensor z = random_tensor({4, 6}, 9, -3, 3);
  const auto y = random_labels(4, 6, 3);
  ad::Tape t;
  EXPECT_NEAR(scalar(t, ad::cross_entropy(t, t.constant(z), y)), ce_oracle(z, y), 1e-12);
}

TEST(CrossEntropy, OutOfRangeLabelRejected) {
  ad::Tape t;
  const std::vector<std::size_t> y{3};
  EXPECT_THROW(ad::cross_entropy(t, t.constant(Tensor({1, 3})), y), Error);
}

TEST(KlDivergence, IdenticalIsZero) {
  ad::Tape t;
  const Tensor z = random_tensor({3, 4}, 5);
  EXPECT_NEAR(scalar(t, ad::kl_divergence(t, t.constant(z), t.constant(z))), 0.0, 1e-15);
}

TEST(KlDivergence, TwoClassClosedForm) {
  const Tensor p({1, 2}, std::vector<double>{0.0, std::log(3.0)});
  const Tensor q({1, 2}, std::vector<double>{0.0, 0.0});
  // direct summation over the two probabilities
  const double pp[2] = {0.25, 0.75}, qq[2] = {0.5, 0.5};
  double want = 0.0;
  for (int i = 0; i < 2; ++i) want += pp[i] * std::log(pp[i] / qq[i]);
  ad::Tape t;
  const double pq = scalar(t, ad::kl_divergence(t, t.constant(p), t.constant(q)));
  const double qp = scalar(t, ad::kl_divergence(t, t.constant(q), t.constant(p)));
  EXPECT_NEAR(pq, want, 1e-14);
  EXPECT_NEAR(pq, 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5), 1e-14);
  EXPECT_GT(std::abs(pq - qp), 1e-3);
}

TEST(KlDivergence, ShapeMismatchRejected) {
  ad::Tape t;
  EXPECT_THROW(ad::kl_divergence(t, t.constant(Tensor({1, 2})), t.constant(Tensor({1, 3}))), Error);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  ad::Tape t;
  const auto x = t.variable(random_tensor({2, 3}, 1));
  const auto c = t.constant(Tensor({1}, 4.0));
  const auto loss = ad::add(t, ad::scale(t, ad::sum(t, x), 0.0), c);
  t.backward(loss);
  const Tensor g = t.grad(x);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LogisticInputGradient) {
  // two-class logits (0, w.x): softmax CE reduces to the logistic loss
  const ModelState m = test::linear_model(2, {0, 0, 2, -3}, {0, 0});
  ForwardPass fp = forward(m, Tensor({1, 2}, std::vector<double>{0.5, 0.5}), {Mode::eval, 0, false, true});
  const std::vector<std::size_t> y{1};
  const Gradients g = backward(fp, ad::cross_entropy(fp.tape, fp.logits, y));
  const double s = sigmoid(-0.5) - 1.0;
  EXPECT_NEAR(g.input[0], s * 2.0, 1e-12);
  EXPECT_NEAR(g.input[1], s * -3.0, 1e-12);
  EXPECT_NEAR(g.input[0], -1.245, 5e-4);
  EXPECT_NEAR(g.input[1], 1.8675, 5e-4);
  // finite-difference cross-check
  const double h = 1e-6;
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor xp({1, 2}, std::vector<double>{0.5, 0.5}), xm = xp;
    xp[i] += h;
    xm[i] -= h;
    ForwardPass a = forward(m, xp), b = forward(m, xm);
    const double num = (scalar(a.tape, ad::cross_entropy(a.tape, a.logits, y)) -
                        scalar(b.tape, ad::cross_entropy(b.tape, b.logits, y))) / (2 * h);
    EXPECT_NEAR(g.input[i], num, 1e-8);
  }
}

TEST(Backward, NonScalarRejected) {
  ad::Tape t;
  const auto x = t.variable(Tensor({2}, 1.0));
  EXPECT_THROW(t.backward(x), Error);
}

TEST(Backward, GradientShapesMatchPrimals) {
  const ModelState m = build(test::small_conv_spec(6, 3), 4);
  ForwardPass fp = forward(m, random_tensor({2, 1, 6, 6}, 3, 0, 1), {Mode::eval, 0, true, true});
  const auto y = random_labels(2, 3, 1);
  const Gradients g = backward(fp, ad::cross_entropy(fp.tape, fp.logits, y));
  EXPECT_EQ(g.input.shape(), (Shape{2, 1, 6, 6}));
  for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(g.params[i].shape(), m.params[i].value.shape());
}

TEST(Backward, SweepVisitsEachOperationOnce) {
  ad::Tape t;
  const auto x = t.variable(random_tensor({2, 2}, 1));
  const auto y = ad::tanh(t, x);
  const auto z = ad::add(t, y, y);  // y feeds z twice, still one visit
  const auto loss = ad::sum(t, z);
  t.backward(loss);
  EXPECT_EQ(t.last_backward_visits(), 3u);  // tanh, add, sum
}

TEST(Backward, LinearityOverSummedLosses) {
  const ModelState m = build(test::mlp_spec(4, 6, 3), 8);
  const Tensor x = random_tensor({3, 4}, 2);
  const auto y1 = random_labels(3, 3, 5), y2 = random_labels(3, 3, 6);
  auto grads = [&](bool first, bool second) {
    ForwardPass fp = forward(m, x, {Mode::eval, 0, true, true});
    ad::Var loss;
    const auto l1 = ad::cross_entropy(fp.tape, fp.logits, y1), l2 = ad::cross_entropy(fp.tape, fp.logits, y2);
    loss = first && second ? ad::add(fp.tape, l1, l2) : (first ? l1 : l2);
    return backward(fp, loss);
  };
  const Gradients both = grads(true, true), a = grads(true, false), b = grads(false, true);
  for (std::size_t i = 0; i < both.input.size(); ++i) EXPECT_NEAR(both.input[i], a.input[i] + b.input[i], 1e-10);
  for (std::size_t p = 0; p < both.params.size(); ++p)
    for (std::size_t i = 0; i < both.params[p].size(); ++i)
      EXPECT_NEAR(both.params[p][i], a.params[p][i] + b.params[p][i], 1e-10);
}

TEST(Backward, RepeatedPassesAreBitIdentical) {
  const ModelState m = build(test::small_conv_spec(6, 3), 11);
  const Tensor x = random_tensor({2, 1, 6, 6}, 3, 0, 1);
  const auto y = random_labels(2, 3, 1);
  auto run = [&] {
    ForwardPass fp = forward(m, x, {Mode::eval, 0, true, true});
    return backward(fp, ad::cross_entropy(fp.tape, fp.logits, y));
  };
  const Gradients a = run(), b = run();
  EXPECT_EQ(a.input, b.input);
  EXPECT_EQ(a.params, b.params);
}

TEST(GradCheck, LinearModelNearlyExact) {
  const ModelState m = build({"linear", {4}, 3, {}}, 3);
  const auto r = finite_diff_check(m, random_tensor({2, 4}, 1), random_labels(2, 3, 2), 1e-5);
  EXPECT_GT(r.coordinates, 0u);
  EXPECT_LT(r.max_rel_error, 1e-7);
}

TEST(GradCheck, TanhMlp) {
  const ModelState m = build(test::mlp_spec(4, 6, 3), 5);
  EXPECT_LT(finite_diff_check(m, random_tensor({3, 4}, 1), random_labels(3, 3, 2), 1e-5).max_rel_error, 1e-4);
}

TEST(GradCheck, ConvPoolNetwork) {
  const ModelState m = build(test::small_conv_spec(6, 3), 6);
  EXPECT_LT(finite_diff_check(m, random_tensor({2, 1, 6, 6}, 1, 0, 1), random_labels(2, 3, 2), 1e-5).max_rel_error,
            1e-4);
}

TEST(GradCheck, SigmoidAndReluLayers) {
  const ArchitectureSpec spec{"mixed", {5}, 4, {LayerSpec::dense(6, Activation::sigmoid), LayerSpec::dense(5, Activation::relu)}};
  const ModelState m = build(spec, 2);
  EXPECT_LT(finite_diff_check(m, random_tensor({3, 5}, 7), random_labels(3, 4, 1), 1e-5).max_rel_error, 1e-4);
}

TEST(GradCheck, ZeroStepRejected) {
  const ModelState m = build(test::mlp_spec(2, 2, 2), 1);
  EXPECT_THROW(finite_diff_check(m, random_tensor({1, 2}, 1), random_labels(1, 2, 1), 0.0), Error);
}

TEST(Dropout, TrainModeOnlyAndSeeded) {
  const ArchitectureSpec spec{"drop", {6}, 2, {LayerSpec::dense(8), LayerSpec::drop(0.5)}};
  const ModelState m = build(spec, 1);
  const Tensor x = random_tensor({4, 6}, 2);
  const Tensor eval1 = forward(m, x).logit_values(), eval2 = forward(m, x).logit_values();
  EXPECT_EQ(eval1, eval2);
  const Tensor tr1 = forward(m, x, {Mode::train, 7}).logit_values();
  const Tensor tr2 = forward(m, x, {Mode::train, 7}).logit_values();
  const Tensor tr3 = forward(m, x, {Mode::train, 8}).logit_values();
  EXPECT_EQ(tr1, tr2);
  EXPECT_NE(tr1, tr3);
  EXPECT_NE(tr1, eval1);
}

TEST(MaxPool, TiesRouteGradientToFirstElement) {
  ad::Tape t;
  const auto x = t.variable(Tensor({1, 1, 2, 2}, 1.0));
  const auto loss = ad::sum(t, ad::maxpool2(t, x));
  t.backward(loss);
  const Tensor g = t.grad(x);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1] + g[2] + g[3], 0.0);
}
