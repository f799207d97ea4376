#pragma once

// Dense f64 tensors with dynamically-recorded reverse-mode autodiff.
//
// Every operation that participates in differentiation records a node on a
// tape (creation-ordered ids); backward() replays closures in strictly
// decreasing id order, which makes gradient accumulation order deterministic.
// Matrix products are delegated to Eigen over row-major maps; everything else
// is straightforward loops. All math is double precision and single-threaded.

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "transtok/common.hpp"

namespace transtok {

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily; empty means "all zero"
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

inline MatMap as_mat(std::vector<double>& v, std::size_t r, std::size_t c) {
  return MatMap(v.data(), static_cast<Eigen::Index>(r),
                static_cast<Eigen::Index>(c));
}

inline CMatMap as_mat(const std::vector<double>& v, std::size_t r,
                      std::size_t c) {
  return CMatMap(v.data(), static_cast<Eigen::Index>(r),
                 static_cast<Eigen::Index>(c));
}

}  // namespace detail

// Temporarily disables tape recording on this thread (RAII).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    std::size_t n = 1;
    for (auto d : node_->shape) n *= d;
    node_->value.assign(n, 0.0);
    node_->requires_grad = requires_grad;
    node_->id = detail::next_node_id();
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (data.size() != t.size()) {
      throw std::invalid_argument("Tensor::from: data size does not match shape");
    }
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(std::vector<std::size_t> shape, Rng& rng,
                      double stddev = 1.0, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& x : t.node_->value) x = rng.normal(0.0, stddev);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }

  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: tensor is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  // Gradient accumulated by the most recent backward(); empty if untouched.
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<detail::TensorNode>& node() { return node_; }
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

  // Drops parent links and the backward closure, keeping only the value.
  // Useful to cut a tensor out of the tape (e.g. frozen inputs).
  Tensor detached() const {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = false;
    t.node_->id = detail::next_node_id();
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

// Creates the output node of an op. `track` decides whether the closure is
// recorded (any differentiable parent, and grad mode on).
inline Tensor make_result(std::vector<std::size_t> shape,
                          std::vector<double> value,
                          const std::vector<Tensor>& parents,
                          std::function<void(TensorNode&)> backward_fn) {
  Tensor out = Tensor::from(std::move(shape), std::move(value));
  bool track = false;
  if (grad_mode()) {
    for (const auto& p : parents) {
      if (p.node()->requires_grad) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    out.node()->requires_grad = true;
    for (const auto& p : parents) out.node()->parents.push_back(p.node());
    out.node()->backward_fn = std::move(backward_fn);
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

// --------------------------------------------------------------------------
// Elementwise / basic ops
// --------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      a.shape(), std::move(v), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i];
        }
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      a.shape(), std::move(v), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] -= self.grad[i];
        }
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      a.shape(), std::move(v), {a, b}, [an, bn](detail::TensorNode& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i] * an->value[i];
        }
      });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * c;
  auto an = a.node();
  return detail::make_result(
      a.shape(), std::move(v), {a}, [an, c](detail::TensorNode& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          an->grad[i] += self.grad[i] * c;
      });
}

// x: (R, C), v: (C). Adds v to every row.
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0)) {
    throw std::invalid_argument("add_rowvec: expected (R,C) and (C)");
  }
  const std::size_t R = x.dim(0), C = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      out[r * C + c] = x.data()[r * C + c] + v.data()[c];
  auto xn = x.node();
  auto vn = v.node();
  return detail::make_result(
      x.shape(), std::move(out), {x, v},
      [xn, vn, R, C](detail::TensorNode& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            xn->grad[i] += self.grad[i];
        }
        if (vn->requires_grad) {
          vn->ensure_grad();
          for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c)
              vn->grad[c] += self.grad[r * C + c];
        }
      });
}

// Mean over rows: (R, C) -> (C).
inline Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("mean_rows: expected rank 2");
  const std::size_t R = x.dim(0), C = x.dim(1);
  if (R == 0) throw std::invalid_argument("mean_rows: empty input");
  std::vector<double> out(C, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c] += x.data()[r * C + c];
  for (auto& v : out) v /= static_cast<double>(R);
  auto xn = x.node();
  return detail::make_result(
      {C}, std::move(out), {x}, [xn, R, C](detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double inv = 1.0 / static_cast<double>(R);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < C; ++c)
            xn->grad[r * C + c] += self.grad[c] * inv;
      });
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  auto xn = x.node();
  return detail::make_result(
      {1}, {s}, {x}, [xn](detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (auto& g : xn->grad) g += self.grad[0];
      });
}

// --------------------------------------------------------------------------
// Matrix products (Eigen-backed)
// --------------------------------------------------------------------------

// (m, k) x (k, n) -> (m, n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.values(), m, k) * detail::as_mat(b.values(), k, n);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](detail::TensorNode& self) {
        auto g = detail::as_mat(self.grad, m, n);
        if (an->requires_grad) {
          an->ensure_grad();
          detail::as_mat(an->grad, m, k).noalias() +=
              g * detail::as_mat(bn->value, k, n).transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::as_mat(bn->grad, k, n).noalias() +=
              detail::as_mat(an->value, m, k).transpose() * g;
        }
      });
}

// (m, k) x (n, k)^T -> (m, n). Used for the tied output projection.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw std::invalid_argument("matmul_nt: incompatible shapes");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n);
  detail::as_mat(out, m, n).noalias() =
      detail::as_mat(a.values(), m, k) *
      detail::as_mat(b.values(), n, k).transpose();
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](detail::TensorNode& self) {
        auto g = detail::as_mat(self.grad, m, n);
        if (an->requires_grad) {
          an->ensure_grad();
          detail::as_mat(an->grad, m, k).noalias() +=
              g * detail::as_mat(bn->value, n, k);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::as_mat(bn->grad, n, k).noalias() +=
              g.transpose() * detail::as_mat(an->value, m, k);
        }
      });
}

// --------------------------------------------------------------------------
// Nonlinearities and normalization
// --------------------------------------------------------------------------

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(x.data()[i]);
  auto xn = x.node();
  return detail::make_result(
      x.shape(), std::move(out), {x}, [xn](detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double inv_sqrt2 = 0.70710678118654752440;
        const double inv_sqrt_2pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double xv = xn->value[i];
          const double cdf = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
          xn->grad[i] += self.grad[i] * (cdf + xv * pdf);
        }
      });
}

// Numerically-stabilized softmax along `axis` (negative counts from the end;
// default: last axis). Each slice along the axis sums to 1; max-subtraction
// keeps large inputs from overflowing.
inline Tensor softmax(const Tensor& x, int axis = -1) {
  const int r = static_cast<int>(x.rank());
  if (r == 0) throw std::invalid_argument("softmax: empty shape");
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("softmax: invalid axis " + std::to_string(axis));
  }
  const std::size_t a = static_cast<std::size_t>(axis);
  const std::size_t C = x.dim(a);
  if (C == 0) throw std::invalid_argument("softmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < a; ++i) outer *= x.dim(i);
  for (std::size_t i = a + 1; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<double> out(x.size());
  auto run = [C, outer, inner](const double* in, double* res) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * C * inner + i;
        double mx = in[base];
        for (std::size_t c = 1; c < C; ++c)
          mx = std::max(mx, in[base + c * inner]);
        double denom = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double e = std::exp(in[base + c * inner] - mx);
          res[base + c * inner] = e;
          denom += e;
        }
        for (std::size_t c = 0; c < C; ++c) res[base + c * inner] /= denom;
      }
    }
  };
  run(x.data(), out.data());
  auto xn = x.node();
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [xn, C, outer, inner](detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * C * inner + i;
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              dot += self.value[base + c * inner] * self.grad[base + c * inner];
            }
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t k = base + c * inner;
              xn->grad[k] += self.value[k] * (self.grad[k] - dot);
            }
          }
        }
      });
}

// LayerNorm over the last axis with learned gain/bias (both shape (C)).
// A constant row normalizes to zeros, so its output is just the bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  if (x.rank() == 0) throw std::invalid_argument("layer_norm: empty shape");
  const std::size_t C = x.shape().back();
  if (C == 0) throw std::invalid_argument("layer_norm: zero-length last axis");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  if (gain.size() != C || bias.size() != C) {
    throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  }
  const std::size_t R = x.size() / C;
  std::vector<double> out(x.size());
  std::vector<double> mean(R), invstd(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = x.data() + r * C;
    double m = 0.0;
    for (std::size_t c = 0; c < C; ++c) m += row[c];
    m /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = row[c] - m;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    mean[r] = m;
    invstd[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      out[r * C + c] = (row[c] - m) * is * gain.data()[c] + bias.data()[c];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, R, C, mean = std::move(mean),
       invstd = std::move(invstd)](detail::TensorNode& self) {
        const bool need_x = xn->requires_grad;
        const bool need_g = gn->requires_grad;
        const bool need_b = bn->requires_grad;
        if (need_x) xn->ensure_grad();
        if (need_g) gn->ensure_grad();
        if (need_b) bn->ensure_grad();
        for (std::size_t r = 0; r < R; ++r) {
          const double* xv = xn->value.data() + r * C;
          const double* dy = self.grad.data() + r * C;
          const double m = mean[r];
          const double is = invstd[r];
          if (need_g || need_b) {
            for (std::size_t c = 0; c < C; ++c) {
              const double xhat = (xv[c] - m) * is;
              if (need_g) gn->grad[c] += dy[c] * xhat;
              if (need_b) bn->grad[c] += dy[c];
            }
          }
          if (need_x) {
            double sum_gh = 0.0, sum_ghx = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double gh = dy[c] * gn->value[c];
              const double xhat = (xv[c] - m) * is;
              sum_gh += gh;
              sum_ghx += gh * xhat;
            }
            const double invC = 1.0 / static_cast<double>(C);
            for (std::size_t c = 0; c < C; ++c) {
              const double gh = dy[c] * gn->value[c];
              const double xhat = (xv[c] - m) * is;
              xn->grad[r * C + c] +=
                  is * (gh - sum_gh * invC - xhat * sum_ghx * invC);
            }
          }
        }
      });
}

// --------------------------------------------------------------------------
// Embedding lookup
// --------------------------------------------------------------------------

// table: (V, H), ids: length T. Result (T, H); backward scatter-adds rows.
inline Tensor embedding_rows(const Tensor& table, std::vector<int> ids) {
  if (table.rank() != 2) {
    throw std::invalid_argument("embedding_rows: table must be (V,H)");
  }
  const std::size_t V = table.dim(0), H = table.dim(1), T = ids.size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw std::out_of_range("embedding_rows: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(V));
    }
  }
  std::vector<double> out(T * H);
  for (std::size_t t = 0; t < T; ++t) {
    const double* src = table.data() + static_cast<std::size_t>(ids[t]) * H;
    std::copy(src, src + H, out.begin() + t * H);
  }
  auto tn = table.node();
  return detail::make_result(
      {T, H}, std::move(out), {table},
      [tn, H, ids = std::move(ids)](detail::TensorNode& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t t = 0; t < ids.size(); ++t) {
          double* dst = tn->grad.data() + static_cast<std::size_t>(ids[t]) * H;
          const double* g = self.grad.data() + t * H;
          for (std::size_t c = 0; c < H; ++c) dst[c] += g[c];
        }
      });
}

// --------------------------------------------------------------------------
// Rotary position embedding
// --------------------------------------------------------------------------

// Applies rotary embedding per head. x: (T, H) laid out as `heads` contiguous
// blocks of head_dim per row; pair k of a head rotates by
// angle = pos * theta^(-2k/head_dim). Position 0 is the identity; rotations
// preserve per-pair norms.
inline Tensor rope(const Tensor& x, const std::vector<std::size_t>& positions,
                   std::size_t heads, double theta) {
  if (x.rank() != 2) throw std::invalid_argument("rope: expected (T,H)");
  const std::size_t T = x.dim(0), H = x.dim(1);
  if (positions.size() != T) {
    throw std::invalid_argument("rope: positions length must equal seq length");
  }
  if (heads == 0 || H % heads != 0) {
    throw std::invalid_argument("rope: hidden size not divisible by heads");
  }
  const std::size_t hd = H / heads;
  if (hd % 2 != 0) {
    throw std::invalid_argument("rope: head dimension must be even");
  }
  if (theta <= 0.0) throw std::invalid_argument("rope: theta must be positive");
  const std::size_t pairs = hd / 2;
  std::vector<double> inv_freq(pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    inv_freq[k] = std::pow(theta, -2.0 * static_cast<double>(k) /
                                      static_cast<double>(hd));
  }
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < T; ++t) {
    const double pos = static_cast<double>(positions[t]);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* src = x.data() + t * H + h * hd;
      double* dst = out.data() + t * H + h * hd;
      for (std::size_t k = 0; k < pairs; ++k) {
        const double ang = pos * inv_freq[k];
        const double c = std::cos(ang), s = std::sin(ang);
        const double x0 = src[2 * k], x1 = src[2 * k + 1];
        dst[2 * k] = x0 * c - x1 * s;
        dst[2 * k + 1] = x0 * s + x1 * c;
      }
    }
  }
  auto xn = x.node();
  return detail::make_result(
      x.shape(), std::move(out), {x},
      [xn, T, H, heads, hd, pairs, positions,
       inv_freq = std::move(inv_freq)](detail::TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t t = 0; t < T; ++t) {
          const double pos = static_cast<double>(positions[t]);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* g = self.grad.data() + t * H + h * hd;
            double* dst = xn->grad.data() + t * H + h * hd;
            for (std::size_t k = 0; k < pairs; ++k) {
              const double ang = pos * inv_freq[k];
              const double c = std::cos(ang), s = std::sin(ang);
              const double g0 = g[2 * k], g1 = g[2 * k + 1];
              // transpose of the rotation = rotation by -angle
              dst[2 * k] += g0 * c + g1 * s;
              dst[2 * k + 1] += -g0 * s + g1 * c;
            }
          }
        }
      });
}

// --------------------------------------------------------------------------
// Attention
// --------------------------------------------------------------------------

// Counters for attention score storage; lets callers verify that local
// attention allocates O(T * window) rather than O(T^2).
struct AttnStats {
  std::size_t score_elements = 0;         // total score/probability entries
  std::size_t local_score_elements = 0;   // windowed (banded) calls only
  std::size_t global_score_elements = 0;  // full-attention calls only
  std::size_t calls = 0;
};

inline AttnStats*& attn_stats_sink() {
  thread_local AttnStats* sink = nullptr;
  return sink;
}

class AttnStatsScope {
 public:
  explicit AttnStatsScope(AttnStats* s) : prev_(attn_stats_sink()) {
    attn_stats_sink() = s;
  }
  ~AttnStatsScope() { attn_stats_sink() = prev_; }

 private:
  AttnStats* prev_;
};

// Multi-head scaled dot-product attention over already-projected (and
// position-encoded) q, k, v of shape (T, H). If `window` is set, token i
// attends only to j with |i - j| <= window / 2, and scores are stored in a
// compact band, never materializing T x T. Scaling is 1/sqrt(head_dim).
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::size_t heads,
                        std::optional<std::size_t> window = std::nullopt) {
  detail::check_same_shape(q, k, "attention");
  detail::check_same_shape(q, v, "attention");
  if (q.rank() != 2) throw std::invalid_argument("attention: expected (T,H)");
  const std::size_t T = q.dim(0), H = q.dim(1);
  if (heads == 0 || H % heads != 0) {
    throw std::invalid_argument("attention: hidden size not divisible by heads");
  }
  const std::size_t hd = H / heads;
  if (window) {
    if (*window < 1) throw std::invalid_argument("attention: window must be >= 1");
    if (*window % 2 != 0) {
      throw std::invalid_argument("attention: window must be even");
    }
  }
  const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t half = window ? *window / 2 : 0;

  // Per row: attended range [lo, hi].
  auto row_range = [&](std::size_t i) -> std::pair<std::size_t, std::size_t> {
    if (!window) return {0, T - 1};
    const std::size_t lo = i > half ? i - half : 0;
    const std::size_t hi = std::min(T - 1, i + half);
    return {lo, hi};
  };

  // Probabilities stored compactly: probs[h] is row-concatenated bands.
  std::vector<std::vector<double>> probs(heads);
  std::vector<std::size_t> row_offset(T + 1, 0);
  for (std::size_t i = 0; i < T; ++i) {
    auto [lo, hi] = row_range(i);
    row_offset[i + 1] = row_offset[i] + (hi - lo + 1);
  }
  const std::size_t band_size = row_offset[T];
  if (auto* sink = attn_stats_sink()) {
    sink->score_elements += band_size * heads;
    if (window) {
      sink->local_score_elements += band_size * heads;
    } else {
      sink->global_score_elements += band_size * heads;
    }
    sink->calls += 1;
  }

  std::vector<double> out(T * H, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    probs[h].assign(band_size, 0.0);
    const double* Q = q.data() + h * hd;
    const double* K = k.data() + h * hd;
    const double* V = v.data() + h * hd;
    for (std::size_t i = 0; i < T; ++i) {
      auto [lo, hi] = row_range(i);
      const std::size_t len = hi - lo + 1;
      double* p = probs[h].data() + row_offset[i];
      const double* qi = Q + i * H;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        const double* kj = K + (lo + j) * H;
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
        p[j] = s * scl;
        mx = std::max(mx, p[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        p[j] = std::exp(p[j] - mx);
        denom += p[j];
      }
      double* oi = out.data() + i * H + h * hd;
      for (std::size_t j = 0; j < len; ++j) {
        p[j] /= denom;
        const double* vj = V + (lo + j) * H;
        for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
      }
    }
  }

  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  return detail::make_result(
      q.shape(), std::move(out), {q, k, v},
      [qn, kn, vn, T, H, heads, hd, scl, window, half, row_offset,
       probs = std::move(probs)](detail::TensorNode& self) {
        const bool need_q = qn->requires_grad;
        const bool need_k = kn->requires_grad;
        const bool need_v = vn->requires_grad;
        if (need_q) qn->ensure_grad();
        if (need_k) kn->ensure_grad();
        if (need_v) vn->ensure_grad();
        std::vector<double> dp;
        for (std::size_t h = 0; h < heads; ++h) {
          const double* Q = qn->value.data() + h * hd;
          const double* K = kn->value.data() + h * hd;
          const double* V = vn->value.data() + h * hd;
          double* dQ = need_q ? qn->grad.data() + h * hd : nullptr;
          double* dK = need_k ? kn->grad.data() + h * hd : nullptr;
          double* dV = need_v ? vn->grad.data() + h * hd : nullptr;
          for (std::size_t i = 0; i < T; ++i) {
            std::size_t lo = 0, hi = T - 1;
            if (window) {
              lo = i > half ? i - half : 0;
              hi = std::min(T - 1, i + half);
            }
            const std::size_t len = hi - lo + 1;
            const double* p = probs[h].data() + row_offset[i];
            const double* go = self.grad.data() + i * H + h * hd;
            dp.assign(len, 0.0);
            // dP = dO . V^T ; dV += P^T dO
            for (std::size_t j = 0; j < len; ++j) {
              const double* vj = V + (lo + j) * H;
              double acc = 0.0;
              for (std::size_t c = 0; c < hd; ++c) acc += go[c] * vj[c];
              dp[j] = acc;
              if (need_v) {
                double* dvj = dV + (lo + j) * H;
                for (std::size_t c = 0; c < hd; ++c) dvj[c] += p[j] * go[c];
              }
            }
            // softmax backward: dS = P * (dP - sum(dP * P))
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += dp[j] * p[j];
            const double* qi = Q + i * H;
            for (std::size_t j = 0; j < len; ++j) {
              const double ds = p[j] * (dp[j] - dot) * scl;
              const double* kj = K + (lo + j) * H;
              if (need_q) {
                double* dqi = dQ + i * H;
                for (std::size_t c = 0; c < hd; ++c) dqi[c] += ds * kj[c];
              }
              if (need_k) {
                double* dkj = dK + (lo + j) * H;
                for (std::size_t c = 0; c < hd; ++c) dkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

// --------------------------------------------------------------------------
// Losses
// --------------------------------------------------------------------------

// Sum of cross-entropies of logits rows against integer labels; label -1
// means "ignore this row". `kept_out`, if given, receives the number of rows
// that contributed. Softmax inside is max-stabilized.
inline Tensor cross_entropy_sum(const Tensor& logits,
                                const std::vector<int>& labels,
                                std::size_t* kept_out = nullptr) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy_sum: logits must be (N,V)");
  }
  const std::size_t N = logits.dim(0), V = logits.dim(1);
  if (labels.size() != N) {
    throw std::invalid_argument("cross_entropy_sum: labels length mismatch");
  }
  double total = 0.0;
  std::size_t kept = 0;
  for (std::size_t r = 0; r < N; ++r) {
    const int y = labels[r];
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= V) {
      throw std::out_of_range("cross_entropy_sum: label out of range");
    }
    const double* row = logits.data() + r * V;
    double mx = row[0];
    for (std::size_t c = 1; c < V; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < V; ++c) denom += std::exp(row[c] - mx);
    total += std::log(denom) + mx - row[static_cast<std::size_t>(y)];
    ++kept;
  }
  if (kept_out) *kept_out = kept;
  auto ln = logits.node();
  return detail::make_result(
      {1}, {total}, {logits},
      [ln, N, V, labels](detail::TensorNode& self) {
        if (!ln->requires_grad) return;
        ln->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t r = 0; r < N; ++r) {
          const int y = labels[r];
          if (y < 0) continue;
          const double* row = ln->value.data() + r * V;
          double* grow = ln->grad.data() + r * V;
          double mx = row[0];
          for (std::size_t c = 1; c < V; ++c) mx = std::max(mx, row[c]);
          double denom = 0.0;
          for (std::size_t c = 0; c < V; ++c) denom += std::exp(row[c] - mx);
          for (std::size_t c = 0; c < V; ++c) {
            double p = std::exp(row[c] - mx) / denom;
            if (c == static_cast<std::size_t>(y)) p -= 1.0;
            grow[c] += g * p;
          }
        }
      });
}

// Mean cross-entropy over the non-ignored rows. Throws if no row is labeled.
inline Tensor mlm_loss(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t kept = 0;
  Tensor s = cross_entropy_sum(logits, labels, &kept);
  if (kept == 0) {
    throw std::invalid_argument("mlm_loss: no labeled positions in batch");
  }
  return scale(s, 1.0 / static_cast<double>(kept));
}

// --------------------------------------------------------------------------
// Backward pass
// --------------------------------------------------------------------------

// Reverse accumulation from a scalar root. Nodes are replayed in strictly
// decreasing creation order, so every node's gradient is complete before its
// own closure runs, and accumulation order is deterministic.
inline void backward(const Tensor& root) {
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar");
  }
  auto* root_node = root.node().get();
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<detail::TensorNode*> stack{root_node};
  seen.insert(root_node);
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::TensorNode* a, const detail::TensorNode* b) {
              return a->id > b->id;
            });
  root_node->ensure_grad();
  root_node->grad[0] += 1.0;
  for (auto* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace transtok
