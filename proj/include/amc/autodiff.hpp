#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive executed during a forward pass. Node ids
// increase monotonically, so the recording order is already topological and
// backward() is a single reverse sweep.

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amc/rng.hpp"
#include "amc/tensor.hpp"

namespace amc::ad {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor value) { return push(std::move(value), {}, false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), {}, true, nullptr); }

  /// Records an operation. The node requires a gradient iff any input does;
  /// otherwise the backward closure is dropped.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var in : inputs) {
      if (in.id >= nodes_.size()) throw Error("tape input recorded out of order");
      needs = needs || nodes_[in.id].requires_grad;
    }
    return push(std::move(value), std::move(inputs), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::vector<Var>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Gradient of the last backward() target with respect to v (zeros if v was
  /// not reached).
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad ? *n.grad : Tensor(n.value.shape());
  }

  /// Accumulation buffer for an input's gradient; allocated on first use.
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.grad) n.grad = Tensor(n.value.shape());
    return *n.grad;
  }
  const Tensor& upstream(std::size_t id) const { return *nodes_[id].grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return visits_; }

  void backward(Var loss, double seed = 1.0) {
    const Node& target = nodes_.at(loss.id);
    if (target.value.size() != 1)
      throw Error("backward requires a scalar loss, got shape " + shape_str(target.value.shape()));
    for (Node& n : nodes_) n.grad.reset();
    grad_buffer(loss)[0] = seed;
    visits_ = 0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.fn || !n.grad) continue;
      ++visits_;
      n.fn(*this, id);
    }
  }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    std::vector<Var> inputs;
    bool requires_grad = false;
    BackwardFn fn;
  };

  Var push(Tensor value, std::vector<Var> inputs, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::nullopt, std::move(inputs), requires_grad, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(what);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

/// Row-wise log-sum-exp of a [rows, cols] block.
inline void log_softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = in + r * cols;
    double m = *std::max_element(z, z + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(z[c] - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = z[c] - lse;
  }
}

template <class F>
Var unary(Tape& t, Var x, F&& f, std::function<double(double, double)> dfdx_from_in_out) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return t.record(std::move(y), {x}, [x, d = std::move(dfdx_from_in_out)](Tape& tp, std::size_t self) {
    if (!tp.requires_grad(x)) return;
    const Tensor& g = tp.upstream(self);
    const Tensor& in = tp.value(x);
    const Tensor& out = tp.value(Var{self});
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(in[i], out[i]);
  });
}

}  // namespace detail

/// a[n,k] x b[k,m].
inline Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                  "matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const auto n = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto m = static_cast<Eigen::Index>(bv.dim(1));
  Tensor out({av.dim(0), bv.dim(1)});
  MapRM(out.data(), n, m).noalias() = ConstMapRM(av.data(), n, k) * ConstMapRM(bv.data(), k, m);
  return t.record(std::move(out), {a, b}, [a, b, n, k, m](Tape& tp, std::size_t self) {
    ConstMapRM g(tp.upstream(self).data(), n, m);
    if (tp.requires_grad(a))
      MapRM(tp.grad_buffer(a).data(), n, k).noalias() += g * ConstMapRM(tp.value(b).data(), k, m).transpose();
    if (tp.requires_grad(b))
      MapRM(tp.grad_buffer(b).data(), k, m).noalias() += ConstMapRM(tp.value(a).data(), n, k).transpose() * g;
  });
}

/// Elementwise a + b, or a + b broadcast over leading rows when b matches a's
/// trailing extents (bias addition).
inline Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const bool same = av.shape() == bv.shape();
  const bool broadcast = !same && bv.rank() < av.rank() && bv.size() > 0 &&
                         std::equal(bv.shape().rbegin(), bv.shape().rend(), av.shape().rbegin());
  detail::require(same || broadcast, "add: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  Tensor out = av;
  const std::size_t inner = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % inner];
  return t.record(std::move(out), {a, b}, [a, b, inner](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
    }
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v *= s;
  return t.record(std::move(out), {a}, [a, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

/// Sum of all elements, as a scalar.
inline Var sum(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (double v : av.values()) s += v;
  return t.record(Tensor({1}, std::vector<double>{s}), {a}, [a](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    for (double& v : tp.grad_buffer(a).values()) v += g;
  });
}

inline Var relu(Tape& t, Var x) {
  return detail::unary(
      t, x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Tape& t, Var x) {
  return detail::unary(
      t, x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

inline Var sigmoid(Tape& t, Var x) {
  return detail::unary(
      t, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double out) { return out * (1.0 - out); });
}

inline Var reshape(Tape& t, Var x, Shape shape) {
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Fully connected layer: x[B,in] * w[out,in]^T + b[out].
inline Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  detail::require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1) && bv.size() == wv.dim(0),
                  "linear: input " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  const auto batch = static_cast<Eigen::Index>(xv.dim(0));
  const auto in = static_cast<Eigen::Index>(wv.dim(1));
  const auto out_dim = static_cast<Eigen::Index>(wv.dim(0));
  Tensor out({xv.dim(0), wv.dim(0)});
  MapRM y(out.data(), batch, out_dim);
  y.noalias() = ConstMapRM(xv.data(), batch, in) * ConstMapRM(wv.data(), out_dim, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), out_dim);
  return t.record(std::move(out), {x, w, b}, [x, w, b, batch, in, out_dim](Tape& tp, std::size_t self) {
    ConstMapRM g(tp.upstream(self).data(), batch, out_dim);
    if (tp.requires_grad(x))
      MapRM(tp.grad_buffer(x).data(), batch, in).noalias() += g * ConstMapRM(tp.value(w).data(), out_dim, in);
    if (tp.requires_grad(w))
      MapRM(tp.grad_buffer(w).data(), out_dim, in).noalias() +=
          g.transpose() * ConstMapRM(tp.value(x).data(), batch, in);
    if (tp.requires_grad(b))
      Eigen::Map<Eigen::RowVectorXd>(tp.grad_buffer(b).data(), out_dim) += g.colwise().sum();
  });
}

/// Stride-1 2-D convolution, x[B,C,H,W] with w[O,C,k,k] and b[O], zero
/// padding `pad` on every side. Lowered to a single GEMM over the batch.
inline Var conv2d(Tape& t, Var x, Var w, Var b, std::size_t pad) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  detail::require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1) && wv.dim(2) == wv.dim(3),
                  "conv2d: input " + shape_str(xv.shape()) + " incompatible with kernel " + shape_str(wv.shape()));
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t O = wv.dim(0), K = wv.dim(2);
  detail::require(H + 2 * pad >= K && W + 2 * pad >= K, "conv2d: kernel larger than padded input");
  detail::require(t.value(b).size() == O, "conv2d: bias size mismatch");
  const std::size_t OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;
  const std::size_t patch = C * K * K, pixels = OH * OW, cols_n = B * pixels;

  auto cols = std::make_shared<Buffer>(patch * cols_n, 0.0);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ki = 0; ki < K; ++ki)
        for (std::size_t kj = 0; kj < K; ++kj) {
          double* row = cols->data() + ((c * K + ki) * K + kj) * cols_n + bi * pixels;
          const double* src = xv.data() + (bi * C + c) * H * W;
          for (std::size_t oh = 0; oh < OH; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ow = 0; ow < OW; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              row[oh * OW + ow] = src[static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)];
            }
          }
        }

  const auto eO = static_cast<Eigen::Index>(O), eP = static_cast<Eigen::Index>(patch),
             eN = static_cast<Eigen::Index>(cols_n);
  MatrixRM prod = ConstMapRM(wv.data(), eO, eP) * ConstMapRM(cols->data(), eP, eN);
  const Tensor& bv = t.value(b);
  Tensor out({B, O, OH, OW});
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < O; ++o) {
      const double* src = prod.data() + o * cols_n + bi * pixels;
      double* dst = out.data() + (bi * O + o) * pixels;
      for (std::size_t p = 0; p < pixels; ++p) dst[p] = src[p] + bv[o];
    }

  return t.record(std::move(out), {x, w, b}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    MatrixRM gmat(eO, eN);
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t o = 0; o < O; ++o)
        std::copy_n(g.data() + (bi * O + o) * pixels, pixels, gmat.data() + o * cols_n + bi * pixels);
    if (tp.requires_grad(w))
      MapRM(tp.grad_buffer(w).data(), eO, eP).noalias() += gmat * ConstMapRM(cols->data(), eP, eN).transpose();
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t o = 0; o < O; ++o) gb[o] += gmat.row(static_cast<Eigen::Index>(o)).sum();
    }
    if (tp.requires_grad(x)) {
      MatrixRM dcols = ConstMapRM(tp.value(w).data(), eO, eP).transpose() * gmat;
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ki = 0; ki < K; ++ki)
            for (std::size_t kj = 0; kj < K; ++kj) {
              const double* row = dcols.data() + ((c * K + ki) * K + kj) * cols_n + bi * pixels;
              double* dst = gx.data() + (bi * C + c) * H * W;
              for (std::size_t oh = 0; oh < OH; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t ow = 0; ow < OW; ++ow) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  dst[static_cast<std::size_t>(ih) * W + static_cast<std::size_t>(iw)] += row[oh * OW + ow];
                }
              }
            }
    }
  });
}

/// 2x2 max pooling with stride 2 over x[B,C,H,W]; odd trailing rows/columns
/// are dropped. Ties resolve to the first element in row-major order.
inline Var maxpool2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  detail::require(xv.rank() == 4 && xv.dim(2) >= 2 && xv.dim(3) >= 2,
                  "maxpool2: expected [B,C,H,W] with H,W >= 2, got " + shape_str(xv.shape()));
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t OH = H / 2, OW = W / 2;
  Tensor out({B, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < B * C; ++plane) {
    const double* src = xv.data() + plane * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        std::size_t best = (2 * oh) * W + 2 * ow;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * oh + di) * W + 2 * ow + dj;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = plane * OH * OW + oh * OW + ow;
        out[o] = src[best];
        (*argmax)[o] = plane * H * W + best;
      }
  }
  return t.record(std::move(out), {x}, [x, argmax](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

/// Inverted dropout: each element kept with probability 1-rate and scaled by
/// 1/(1-rate). The mask is drawn from `rng`.
inline Var dropout(Tape& t, Var x, double rate, Rng& rng) {
  detail::require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1)");
  const Tensor& xv = t.value(x);
  auto mask = std::make_shared<Buffer>(xv.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = u(rng) >= rate ? keep_scale : 0.0;
    out[i] = xv[i] * (*mask)[i];
  }
  return t.record(std::move(out), {x}, [x, mask](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

inline Var log_softmax(Tape& t, Var logits) {
  const Tensor& z = t.value(logits);
  detail::require(z.rank() == 2, "log_softmax: expected [batch, classes], got " + shape_str(z.shape()));
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  Tensor out(z.shape());
  detail::log_softmax_rows(z.data(), out.data(), rows, cols);
  return t.record(std::move(out), {logits}, [logits, rows, cols](Tape& tp, std::size_t self) {
    const Tensor& g = tp.upstream(self);
    const Tensor& ls = tp.value(Var{self});
    Tensor& gz = tp.grad_buffer(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        gz[r * cols + c] += g[r * cols + c] - std::exp(ls[r * cols + c]) * gsum;
    }
  });
}

/// Weighted softmax cross-entropy, sum_b w_b * -log softmax(z_b)[y_b].
/// Without weights every sample gets 1/B (the batch mean).
inline Var cross_entropy(Tape& t, Var logits, std::span<const std::size_t> labels,
                         std::span<const double> weights = {}) {
  const Tensor& z = t.value(logits);
  detail::require(z.rank() == 2, "cross_entropy: expected [batch, classes], got " + shape_str(z.shape()));
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  detail::require(labels.size() == rows, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                             std::to_string(rows) + " rows");
  detail::require(weights.empty() || weights.size() == rows, "cross_entropy: weight count mismatch");
  std::vector<double> w(rows, rows ? 1.0 / static_cast<double>(rows) : 0.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  for (std::size_t y : labels)
    if (y >= cols)
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(cols) + ")");
  auto ls = std::make_shared<Buffer>(z.size());
  detail::log_softmax_rows(z.data(), ls->data(), rows, cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) loss -= w[r] * (*ls)[r * cols + labels[r]];
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return t.record(Tensor({1}, std::vector<double>{loss}), {logits},
                  [logits, ls, ys = std::move(ys), w = std::move(w), rows, cols](Tape& tp, std::size_t self) {
                    const double g = tp.upstream(self)[0];
                    Tensor& gz = tp.grad_buffer(logits);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double p = std::exp((*ls)[r * cols + c]);
                        gz[r * cols + c] += g * w[r] * (p - (c == ys[r] ? 1.0 : 0.0));
                      }
                  });
}

/// Cross-entropy against soft targets, sum_b w_b * -sum_c p_bc log softmax(z_b)_c.
inline Var soft_cross_entropy(Tape& t, Var logits, const Tensor& targets, std::span<const double> weights = {}) {
  const Tensor& z = t.value(logits);
  detail::require_same_shape(z, targets, "soft_cross_entropy");
  detail::require(z.rank() == 2, "soft_cross_entropy: expected [batch, classes]");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  std::vector<double> w(rows, rows ? 1.0 / static_cast<double>(rows) : 0.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  auto ls = std::make_shared<Buffer>(z.size());
  detail::log_softmax_rows(z.data(), ls->data(), rows, cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) loss -= w[r] * targets[r * cols + c] * (*ls)[r * cols + c];
  return t.record(Tensor({1}, std::vector<double>{loss}), {logits},
                  [logits, ls, targets, w = std::move(w), rows, cols](Tape& tp, std::size_t self) {
                    const double g = tp.upstream(self)[0];
                    Tensor& gz = tp.grad_buffer(logits);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mass = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) mass += targets[r * cols + c];
                      for (std::size_t c = 0; c < cols; ++c)
                        gz[r * cols + c] +=
                            g * w[r] * (mass * std::exp((*ls)[r * cols + c]) - targets[r * cols + c]);
                    }
                  });
}

/// Mean over the batch of KL(softmax(p) || softmax(q)).
inline Var kl_divergence(Tape& t, Var p_logits, Var q_logits) {
  const Tensor& pz = t.value(p_logits);
  const Tensor& qz = t.value(q_logits);
  detail::require_same_shape(pz, qz, "kl_divergence");
  detail::require(pz.rank() == 2, "kl_divergence: expected [batch, classes]");
  const std::size_t rows = pz.dim(0), cols = pz.dim(1);
  auto lp = std::make_shared<Buffer>(pz.size());
  auto lq = std::make_shared<Buffer>(qz.size());
  detail::log_softmax_rows(pz.data(), lp->data(), rows, cols);
  detail::log_softmax_rows(qz.data(), lq->data(), rows, cols);
  const double inv = rows ? 1.0 / static_cast<double>(rows) : 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < pz.size(); ++i) kl += std::exp((*lp)[i]) * ((*lp)[i] - (*lq)[i]);
  kl = std::max(0.0, kl * inv);
  return t.record(Tensor({1}, std::vector<double>{kl}), {p_logits, q_logits},
                  [=](Tape& tp, std::size_t self) {
                    const double g = tp.upstream(self)[0] * inv;
                    if (tp.requires_grad(q_logits)) {
                      Tensor& gq = tp.grad_buffer(q_logits);
                      for (std::size_t i = 0; i < gq.size(); ++i) gq[i] += g * (std::exp((*lq)[i]) - std::exp((*lp)[i]));
                    }
                    if (tp.requires_grad(p_logits)) {
                      Tensor& gp = tp.grad_buffer(p_logits);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double mean_term = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                          const std::size_t i = r * cols + c;
                          mean_term += std::exp((*lp)[i]) * ((*lp)[i] - (*lq)[i]);
                        }
                        for (std::size_t c = 0; c < cols; ++c) {
                          const std::size_t i = r * cols + c;
                          gp[i] += g * std::exp((*lp)[i]) * ((*lp)[i] - (*lq)[i] - mean_term);
                        }
                      }
                    }
                  });
}

/// Untargeted hinge on the logit margin,
/// sum_b c_b * max(z_b[y_b] - max_{j != y_b} z_b[j] + kappa, 0).
inline Var margin_loss(Tape& t, Var logits, std::span<const std::size_t> labels, std::span<const double> consts,
                       double kappa = 0.0) {
  const Tensor& z = t.value(logits);
  detail::require(z.rank() == 2 && z.dim(1) >= 2, "margin_loss: expected [batch, classes>=2]");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  detail::require(labels.size() == rows && consts.size() == rows, "margin_loss: label/constant count mismatch");
  std::vector<std::size_t> runner_up(rows);
  std::vector<double> active(rows, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.data() + r * cols;
    if (labels[r] >= cols) throw Error("margin_loss: label out of range");
    std::size_t best = labels[r] == 0 ? 1 : 0;
    for (std::size_t c = 0; c < cols; ++c)
      if (c != labels[r] && zr[c] > zr[best]) best = c;
    runner_up[r] = best;
    const double m = zr[labels[r]] - zr[best] + kappa;
    if (m > 0.0) {
      loss += consts[r] * m;
      active[r] = consts[r];
    }
  }
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return t.record(Tensor({1}, std::vector<double>{loss}), {logits},
                  [logits, ys = std::move(ys), runner_up = std::move(runner_up), active = std::move(active), rows,
                   cols](Tape& tp, std::size_t self) {
                    const double g = tp.upstream(self)[0];
                    Tensor& gz = tp.grad_buffer(logits);
                    for (std::size_t r = 0; r < rows; ++r) {
                      gz[r * cols + ys[r]] += g * active[r];
                      gz[r * cols + runner_up[r]] -= g * active[r];
                    }
                  });
}

}  // namespace amc::ad
