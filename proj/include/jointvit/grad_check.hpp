#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "jointvit/autodiff.hpp"

namespace jointvit {

/// Builds a scalar loss on the given tape. Parameters must be registered with
/// `tape.parameter(...)` so their gradients can be read back.
using ScalarGraphFn = std::function<Var(Tape&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_param;  // max relative error for each parameter
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

namespace detail {

inline double scalar_loss(const ScalarGraphFn& f) {
  Tape tape;
  Var loss = f(tape);
  const Tensor& v = loss.value();
  require(v.size() == 1 && v.rank() <= 1, ErrorKind::Contract,
          "grad_check: function must return a scalar, got " + shape_string(v.shape()));
  return v[0];
}

}  // namespace detail

/// Compares reverse-mode gradients with central differences. Error per
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(const ScalarGraphFn& f, std::span<Tensor* const> params,
                                  double eps = 1e-4) {
  require(eps > 0.0, ErrorKind::Contract, "grad_check: eps must be positive");
  detail::scalar_loss(f);

  Tape tape;
  Var loss = f(tape);
  GradientStore grads = tape.backward(loss);

  GradCheckReport report;
  report.per_param.assign(params.size(), 0.0);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    std::vector<double> analytic(param.size(), 0.0);
    if (grads.contains(param)) {
      auto g = grads(param);
      analytic.assign(g.begin(), g.end());
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + eps;
      const double up = detail::scalar_loss(f);
      param[i] = saved - eps;
      const double down = detail::scalar_loss(f);
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      const double err = std::abs(analytic[i] - numeric) / denom;
      report.per_param[p] = std::max(report.per_param[p], err);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace jointvit
