#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "otter/error.hpp"
#include "otter/numerics/autodiff.hpp"

namespace otter::num {

/// Scalar-valued function of a list of parameter leaves, built on a tape.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

inline double evaluate_scalar(const TapeFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  const double v = f(tape, leaves).value()[0];
  if (!std::isfinite(v)) throw Error(Errc::NonFinite, "grad_check: function value is not finite");
  return v;
}

/// Compares tape gradients with central finite differences over every
/// component of every parameter. Returns the largest relative error, using
/// max(|analytic|, |numeric|, 1e-6) as the denominator, so components whose
/// true gradient is zero are judged on roundoff-sized absolute error.
inline double grad_check(const TapeFunction& f, std::vector<Tensor> params, double eps = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.param(p));
  Var out = f(tape, leaves);
  if (!std::isfinite(out.value()[0])) throw Error(Errc::NonFinite, "grad_check: function value is not finite");
  tape.backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor analytic = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + eps;
      const double up = evaluate_scalar(f, params);
      params[k][i] = saved - eps;
      const double down = evaluate_scalar(f, params);
      params[k][i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace otter::num
