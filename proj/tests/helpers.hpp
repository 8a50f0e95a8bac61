#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "amc/model.hpp"
#include "amc/rng.hpp"

namespace amc::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = d(rng);
  return y;
}

inline ArchitectureSpec mlp_spec(std::size_t in, std::size_t hidden, std::size_t classes,
                                 Activation act = Activation::tanh) {
  return {"mlp", {in}, classes, {LayerSpec::dense(hidden, act)}};
}

inline ArchitectureSpec small_conv_spec(std::size_t side, std::size_t classes) {
  return {"small-conv", {1, side, side}, classes,
          {LayerSpec::conv(2, 3, Activation::tanh), LayerSpec::pool(), LayerSpec::dense(5, Activation::tanh)}};
}

/// Linear model (no hidden layers) with the given head weights.
inline ModelState linear_model(std::size_t in, const std::vector<double>& w, const std::vector<double>& b) {
  ModelState m = build({"linear", {in}, b.size(), {}}, 0);
  m.params[0].value = Tensor({b.size(), in}, w);
  m.params[1].value = Tensor({b.size()}, b);
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("amc-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace amc::test
