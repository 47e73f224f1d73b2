#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "hyperkkl/error.hpp"
#include "hyperkkl/param_store.hpp"
#include "hyperkkl/tape.hpp"

namespace hyperkkl {

/// Records a scalar loss of `params` on the tape (binding them with Tape::param).
using TapeLoss = std::function<Tape::Var(Tape&, const ParamStore&)>;

inline double eval_loss(const TapeLoss& loss, const ParamStore& params) {
  Tape t;
  const double v = t.scalar(loss(t, params));
  if (!std::isfinite(v)) throw NumericDomainError("grad_check: non-finite loss");
  return v;
}

/// Reverse-mode gradient of the loss.
inline ParamStore tape_gradient(const TapeLoss& loss, const ParamStore& params, double* value = nullptr) {
  Tape t;
  const Tape::Var out = loss(t, params);
  if (value) *value = t.scalar(out);
  t.backward(out);
  return t.gradients_for(params);
}

/// Max over coordinates of |a - b| / (|a| + |b| + 1e-12), a the tape gradient
/// and b the central difference (L(p+e) - L(p-e)) / 2e.
inline double grad_check(const TapeLoss& loss, const ParamStore& params, double eps) {
  require(eps > 0.0, "grad_check needs eps > 0");
  double base = 0.0;
  const ParamStore g = tape_gradient(loss, params, &base);
  if (!std::isfinite(base)) throw NumericDomainError("grad_check: non-finite loss");
  ParamStore probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double up = eval_loss(loss, probe);
    probe.data()[i] = orig - eps;
    const double dn = eval_loss(loss, probe);
    probe.data()[i] = orig;
    const double fd = (up - dn) / (2.0 * eps);
    const double a = g.data()[i];
    worst = std::max(worst, std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-12));
  }
  return worst;
}

}  // namespace hyperkkl
