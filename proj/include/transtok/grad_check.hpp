#pragma once

// Central-difference gradient verification for any scalar loss built from
// tensor ops. Compares analytic gradients against (f(x+h) - f(x-h)) / 2h
// coordinate by coordinate, reporting the worst relative error.

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "transtok/common.hpp"
#include "transtok/tensor.hpp"

namespace transtok {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 means "check every coordinate"; otherwise sample this many per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// `loss_fn` must rebuild the loss from the *current* values of `params` every
// time it is called. Relative error uses |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult grad_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& params,
    const GradCheckOptions& opts = {}) {
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) {
      throw std::invalid_argument("grad_check: tensor '" + name +
                                  "' does not require grad");
    }
    p.node()->grad.clear();
  }
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) {
    throw std::runtime_error("grad_check: loss is not finite");
  }
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) {
    std::vector<double> g = p.node()->grad;
    if (g.empty()) g.assign(p.size(), 0.0);
    analytic.push_back(std::move(g));
  }

  auto eval = [&]() -> double {
    NoGradGuard ng;
    return loss_fn().item();
  };

  GradCheckResult res;
  Rng rng(sub_seed(opts.seed, "grad-check"));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& name = params[pi].first;
    Tensor p = params[pi].second;
    std::vector<std::size_t> coords;
    const std::size_t n = p.size();
    if (opts.max_coords_per_tensor == 0 || n <= opts.max_coords_per_tensor) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      // Sample distinct coordinates deterministically.
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      rng.shuffle(all);
      coords.assign(all.begin(),
                    all.begin() + static_cast<std::ptrdiff_t>(
                                      opts.max_coords_per_tensor));
    }
    for (std::size_t idx : coords) {
      const double x0 = p.data()[idx];
      p.data()[idx] = x0 + opts.step;
      const double fp = eval();
      p.data()[idx] = x0 - opts.step;
      const double fm = eval();
      p.data()[idx] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("grad_check: non-finite loss while perturbing '" +
                                 name + "'");
      }
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[pi][idx];
      if (!std::isfinite(a)) {
        throw std::runtime_error("grad_check: non-finite analytic gradient in '" +
                                 name + "'");
      }
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_tensor = name;
        res.worst_index = idx;
      }
    }
  }
  return res;
}

}  // namespace transtok
