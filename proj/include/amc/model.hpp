#pragma once

// Architecture specifications, parameter initialization, forward passes and
// prediction for the small feed-forward classifiers used throughout.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amc/autodiff.hpp"
#include "amc/rng.hpp"
#include "amc/tensor.hpp"
#include "json.hpp"

namespace amc {

enum class LayerKind { conv2d, maxpool2, dense, dropout };
enum class Activation { none, relu, tanh, sigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;   // filters for conv2d, width for dense
  std::size_t kernel = 3;  // conv2d only; "same" zero padding of kernel/2
  Activation activation = Activation::none;
  double rate = 0.0;  // dropout only

  static LayerSpec conv(std::size_t filters, std::size_t kernel, Activation act = Activation::relu) {
    return {LayerKind::conv2d, filters, kernel, act, 0.0};
  }
  static LayerSpec pool() { return {LayerKind::maxpool2, 0, 0, Activation::none, 0.0}; }
  static LayerSpec dense(std::size_t units, Activation act = Activation::relu) {
    return {LayerKind::dense, units, 0, act, 0.0};
  }
  static LayerSpec drop(double rate) { return {LayerKind::dropout, 0, 0, Activation::none, rate}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Hidden layers in order; a linear head producing `num_classes` logits is
/// always appended after the last listed layer.
struct ArchitectureSpec {
  std::string name;
  Shape input_shape;  // [C,H,W] or [D]
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct Param {
  std::string name;
  Tensor value;
  friend bool operator==(const Param&, const Param&) = default;
};

struct ModelState {
  ArchitectureSpec spec;
  std::vector<Param> params;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Param& p : params) n += p.value.size();
    return n;
  }
  friend bool operator==(const ModelState&, const ModelState&) = default;
};

// ---------------------------------------------------------------- json

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::conv2d, "conv2d"},
                                         {LayerKind::maxpool2, "maxpool2"},
                                         {LayerKind::dense, "dense"},
                                         {LayerKind::dropout, "dropout"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::none, "none"},
                                          {Activation::relu, "relu"},
                                          {Activation::tanh, "tanh"},
                                          {Activation::sigmoid, "sigmoid"}})

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", l.kind}, {"units", l.units}, {"kernel", l.kernel}, {"activation", l.activation},
                     {"rate", l.rate}};
}
inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  j.at("kind").get_to(l.kind);
  j.at("units").get_to(l.units);
  j.at("kernel").get_to(l.kernel);
  j.at("activation").get_to(l.activation);
  j.at("rate").get_to(l.rate);
}
inline void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
  j = nlohmann::json{{"name", s.name}, {"input_shape", s.input_shape}, {"num_classes", s.num_classes},
                     {"layers", s.layers}};
}
inline void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
  j.at("name").get_to(s.name);
  j.at("input_shape").get_to(s.input_shape);
  j.at("num_classes").get_to(s.num_classes);
  j.at("layers").get_to(s.layers);
}

// ---------------------------------------------------------------- shapes

namespace detail {

inline std::size_t same_pad(std::size_t kernel) { return kernel / 2; }

struct ParamShape {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0, fan_out = 0;
};

/// Walks the layer list, checking compatibility, and returns every parameter
/// shape in canonical order.
inline std::vector<ParamShape> param_shapes(const ArchitectureSpec& spec) {
  if (spec.input_shape.empty() || spec.input_shape.size() == 2 || spec.input_shape.size() > 3)
    throw Error("architecture '" + spec.name + "': input shape must be [D] or [C,H,W], got " +
                shape_str(spec.input_shape));
  for (std::size_t e : spec.input_shape)
    if (e == 0) throw Error("architecture '" + spec.name + "': zero extent in input shape");
  if (spec.num_classes < 2) throw Error("architecture '" + spec.name + "': need at least 2 classes");

  std::vector<ParamShape> out;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " of '" + spec.name + "'";
    const std::string prefix = "layer" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (cur.size() != 3) throw Error(where + ": conv2d needs a [C,H,W] input, got " + shape_str(cur));
        if (l.units == 0 || l.kernel == 0 || l.kernel % 2 == 0)
          throw Error(where + ": conv2d needs filters > 0 and an odd kernel");
        if (l.kernel > cur[1] + 2 * same_pad(l.kernel) || l.kernel > cur[2] + 2 * same_pad(l.kernel))
          throw Error(where + ": kernel larger than input");
        out.push_back({prefix + ".weight", {l.units, cur[0], l.kernel, l.kernel}, cur[0] * l.kernel * l.kernel,
                       l.units * l.kernel * l.kernel});
        out.push_back({prefix + ".bias", {l.units}, 0, 0});
        cur = {l.units, cur[1], cur[2]};
        break;
      }
      case LayerKind::maxpool2:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2)
          throw Error(where + ": maxpool2 needs a [C,H,W] input with H,W >= 2, got " + shape_str(cur));
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::dense: {
        if (l.units == 0) throw Error(where + ": dense layer needs units > 0");
        const std::size_t in = shape_size(cur);
        out.push_back({prefix + ".weight", {l.units, in}, in, l.units});
        out.push_back({prefix + ".bias", {l.units}, 0, 0});
        cur = {l.units};
        break;
      }
      case LayerKind::dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0))
          throw Error(where + ": dropout rate " + std::to_string(l.rate) + " outside [0,1)");
        break;
    }
  }
  const std::size_t in = shape_size(cur);
  out.push_back({"head.weight", {spec.num_classes, in}, in, spec.num_classes});
  out.push_back({"head.bias", {spec.num_classes}, 0, 0});
  return out;
}

}  // namespace detail

inline void validate(const ArchitectureSpec& spec) { (void)detail::param_shapes(spec); }

/// Parameters drawn uniformly from +-sqrt(6/(fan_in+fan_out)); biases start at zero.
inline ModelState build(const ArchitectureSpec& spec, std::uint64_t seed) {
  ModelState m{spec, {}, seed};
  Rng rng(seed);
  for (const auto& ps : detail::param_shapes(spec)) {
    Tensor t(ps.shape);
    if (ps.fan_in > 0) {
      const double limit = std::sqrt(6.0 / static_cast<double>(ps.fan_in + ps.fan_out));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (double& v : t.values()) v = u(rng);
    }
    m.params.push_back({ps.name, std::move(t)});
  }
  return m;
}

/// Value copy of `source` into a model of `target_spec`, which must equal the
/// source architecture.
inline ModelState transfer_params(const ModelState& source, const ArchitectureSpec& target_spec) {
  if (!(source.spec == target_spec))
    throw Error("transfer_params: target architecture '" + target_spec.name +
                "' differs from source architecture '" + source.spec.name + "'");
  return source;
}

// ---------------------------------------------------------------- forward

enum class Mode { eval, train };

struct ForwardOptions {
  Mode mode = Mode::eval;
  std::uint64_t dropout_seed = 0;
  bool track_params = false;  // record parameters as differentiable leaves
  bool track_input = false;   // record the input as a differentiable leaf
};

/// One recorded forward pass. Holds the tape and the handles needed to read
/// gradients after backward().
struct ForwardPass {
  ad::Tape tape;
  ad::Var input;
  std::vector<ad::Var> params;  // same order as ModelState::params
  ad::Var logits;

  const Tensor& logit_values() const { return tape.value(logits); }
};

struct Gradients {
  Tensor input;
  std::vector<Tensor> params;
};

inline void check_input(const ModelState& model, const Tensor& x) {
  const Shape& want = model.spec.input_shape;
  const bool ok = x.rank() == want.size() + 1 && std::equal(want.begin(), want.end(), x.shape().begin() + 1);
  if (!ok || x.dim(0) == 0) {
    std::string expected = "(B";
    for (std::size_t e : want) expected += "," + std::to_string(e);
    throw Error("input shape " + shape_str(x.shape()) + " does not match model '" + model.spec.name +
                "' input shape " + expected + ") with B >= 1");
  }
}

inline ad::Var apply_activation(ad::Tape& t, ad::Var v, Activation a) {
  switch (a) {
    case Activation::relu: return ad::relu(t, v);
    case Activation::tanh: return ad::tanh(t, v);
    case Activation::sigmoid: return ad::sigmoid(t, v);
    case Activation::none: break;
  }
  return v;
}

inline ForwardPass forward(const ModelState& model, const Tensor& x, const ForwardOptions& opt = {}) {
  check_input(model, x);
  ForwardPass fp;
  ad::Tape& t = fp.tape;
  fp.input = opt.track_input ? t.variable(x) : t.constant(x);
  fp.params.reserve(model.params.size());
  for (const Param& p : model.params)
    fp.params.push_back(opt.track_params ? t.variable(p.value) : t.constant(p.value));

  Rng dropout_rng(opt.dropout_seed);
  const std::size_t batch = x.dim(0);
  ad::Var h = fp.input;
  std::size_t pi = 0;
  for (const LayerSpec& l : model.spec.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
        h = ad::conv2d(t, h, fp.params[pi], fp.params[pi + 1], detail::same_pad(l.kernel));
        pi += 2;
        h = apply_activation(t, h, l.activation);
        break;
      case LayerKind::maxpool2: h = ad::maxpool2(t, h); break;
      case LayerKind::dense:
        if (t.value(h).rank() != 2) h = ad::reshape(t, h, {batch, t.value(h).row_size()});
        h = ad::linear(t, h, fp.params[pi], fp.params[pi + 1]);
        pi += 2;
        h = apply_activation(t, h, l.activation);
        break;
      case LayerKind::dropout:
        if (opt.mode == Mode::train && l.rate > 0.0) h = ad::dropout(t, h, l.rate, dropout_rng);
        break;
    }
  }
  if (t.value(h).rank() != 2) h = ad::reshape(t, h, {batch, t.value(h).row_size()});
  fp.logits = ad::linear(t, h, fp.params[pi], fp.params[pi + 1]);
  return fp;
}

inline Gradients backward(ForwardPass& fp, ad::Var loss, double seed = 1.0) {
  fp.tape.backward(loss, seed);
  Gradients g;
  g.input = fp.tape.grad(fp.input);
  g.params.reserve(fp.params.size());
  for (ad::Var p : fp.params) g.params.push_back(fp.tape.grad(p));
  return g;
}

// ---------------------------------------------------------------- prediction

inline Tensor predict_logits(const ModelState& model, const Tensor& x) {
  return forward(model, x).logit_values();
}

/// Row-wise argmax; ties go to the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    out[r] = best;
  }
  return out;
}

inline std::vector<std::size_t> predict_label(const ModelState& model, const Tensor& x) {
  return argmax_rows(predict_logits(model, x));
}

inline Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  ad::detail::log_softmax_rows(logits.data(), out.data(), logits.dim(0), logits.dim(1));
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

// ---------------------------------------------------------------- stock architectures

/// LeNet-scale target: two 3x3 conv blocks (8 and 16 filters) with 2x2
/// pooling, one 64-unit hidden layer.
inline ArchitectureSpec desk_target_spec(Shape input_shape, std::size_t num_classes) {
  return {"desk-target",
          std::move(input_shape),
          num_classes,
          {LayerSpec::conv(8, 3), LayerSpec::pool(), LayerSpec::conv(16, 3), LayerSpec::pool(),
           LayerSpec::dense(64)}};
}

/// Substitute model: four 3x3 conv layers with pooling after every two,
/// then a hidden dense layer and the head. Dropout 0.4 / 0.3 / 0.2.
inline ArchitectureSpec desk_proxy_spec(Shape input_shape, std::size_t num_classes) {
  return {"desk-proxy",
          std::move(input_shape),
          num_classes,
          {LayerSpec::conv(8, 3), LayerSpec::conv(8, 3), LayerSpec::pool(), LayerSpec::drop(0.4),
           LayerSpec::conv(16, 3), LayerSpec::conv(16, 3), LayerSpec::pool(), LayerSpec::drop(0.3),
           LayerSpec::dense(64), LayerSpec::drop(0.2)}};
}

inline ArchitectureSpec architecture_by_name(const std::string& name, Shape input_shape, std::size_t num_classes) {
  if (name == "desk-target") return desk_target_spec(std::move(input_shape), num_classes);
  if (name == "desk-proxy") return desk_proxy_spec(std::move(input_shape), num_classes);
  throw Error("unknown architecture '" + name + "' (expected desk-target or desk-proxy)");
}

}  // namespace amc
