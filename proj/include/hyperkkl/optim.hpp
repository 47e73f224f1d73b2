#pragma once

#include <cmath>
#include <vector>

#include "hyperkkl/error.hpp"
#include "hyperkkl/param_store.hpp"

namespace hyperkkl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(AdamState& st, ParamStore& params, const ParamStore& grads, const AdamConfig& cfg) {
  if (!params.same_layout(grads)) throw ContractViolation("adam_step: gradient layout differs from parameters");
  const std::size_t n = params.size();
  if (st.m.empty()) {
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
  }
  require(st.m.size() == n, "adam_step: optimizer state size differs from parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  auto& p = params.data();
  const auto& g = grads.data();
  for (std::size_t i = 0; i < n; ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mh = st.m[i] / c1;
    const double vh = st.v[i] / c2;
    p[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

inline double global_norm(const ParamStore& g) { return g.flat().norm(); }

/// Rescales `grads` so the global L2 norm is at most max_norm. Returns the norm
/// before clipping.
inline double clip_grad_norm(ParamStore& grads, double max_norm) {
  require(max_norm > 0.0, "clip norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) grads *= max_norm / norm;
  return norm;
}

}  // namespace hyperkkl
