#pragma once

// Small fixtures shared by the unit and acceptance tests.

#include <cstdint>
#include <string>

#include <cmath>

#include "hyperkkl/dynamics.hpp"
#include "hyperkkl/hypernet.hpp"
#include "hyperkkl/kkl.hpp"
#include "hyperkkl/model.hpp"
#include "hyperkkl/rng.hpp"

namespace hktest {

using namespace hyperkkl;

/// Untrained autonomous model with random maps of the given width.
inline ObserverModel tiny_model(const std::string& system, int width = 8, std::uint64_t seed = 3, int layers = 2) {
  ObserverModel m;
  const SystemSpec sys = systems::by_name(system);
  m.system = sys.name;
  m.obs = build_observer_matrices(sys.n_x, sys.n_y);
  m.maps = make_maps(sys, m.obs.n_z, width, layers);
  m.maps.latent_scale = 0.5;
  m.theta = make_encoder_params(m.maps);
  m.phi = make_decoder_params(m.maps);
  CounterRng r0(seed, Channel::init_weights, 0), r1(seed, Channel::init_weights, 1);
  init_mlp(m.theta, kEnc, m.maps.encoder, r0);
  init_mlp(m.phi, kDec, m.maps.decoder, r1);
  return m;
}

inline HyperNetSpec tiny_hyper(const ObserverModel& m, int window = 6, int hidden = 4, int rank = 3, int chunk = 40) {
  HyperNetSpec h;
  h.lstm = {1, hidden};
  h.window = window;
  h.rank = rank;
  h.chunk_size = chunk;
  h.enc_target = m.maps.encoder;
  h.dec_target = m.maps.decoder;
  return h;
}

/// Overwrites every entry with U(-scale, scale).
inline void randomize(ParamStore& p, std::uint64_t seed, double scale) {
  CounterRng r(seed, Channel::init_weights, 99);
  for (double& v : p.data()) v = r.uniform(-scale, scale);
}

/// Random model with a dynamic hypernetwork whose heads are non-zero.
inline ObserverModel tiny_dynamic(const std::string& system, std::uint64_t seed = 5, double head_scale = 0.05) {
  ObserverModel m = tiny_model(system, 8, seed);
  m.variant = Variant::dynamic_hyper;
  HyperNetSpec h = tiny_hyper(m);
  m.psi = make_hypernet_params(h);
  CounterRng r(seed, Channel::init_weights, 2);
  init_hypernet(m.psi, h, r);
  CounterRng u(seed, Channel::init_weights, 7);
  for (std::size_t c = 0; m.psi.contains(chunk_name(true, c)); ++c) m.psi.fill_uniform(chunk_name(true, c), head_scale, u);
  for (std::size_t c = 0; m.psi.contains(chunk_name(false, c)); ++c) m.psi.fill_uniform(chunk_name(false, c), head_scale, u);
  m.hyper = h;
  return m;
}

/// Random model with a static injection whose output layer is non-zero.
inline ObserverModel tiny_static(const std::string& system, std::uint64_t seed = 6, double scale = 0.1) {
  ObserverModel m = tiny_model(system, 8, seed);
  m.variant = Variant::static_hyper;
  InjectionSpec s = make_injection_spec(m.obs.n_z, 4, 8, 6, 1e-2);
  m.xi = make_injection_params(s);
  randomize(m.xi, seed, scale);
  m.injection = s;
  return m;
}

}  // namespace hktest

namespace hktest {

/// Endpoint of a noise-free forced run integrated with step dt.
inline Vec endpoint(const SystemSpec& sys, const Vec& x0, const InputSignal& s, double dt, double horizon) {
  return simulate(sys, x0, s, dt, horizon, 0.0, 0).states.bottomRows(1).transpose();
}

/// log2 of the global error ratio between dt and dt/2, against a dt/64 reference.
inline double rk4_order(const SystemSpec& sys, const Vec& x0, const InputSignal& s, double dt, double horizon) {
  const Vec ref = endpoint(sys, x0, s, dt / 64.0, horizon);
  const double e1 = (endpoint(sys, x0, s, dt, horizon) - ref).norm();
  const double e2 = (endpoint(sys, x0, s, dt / 2.0, horizon) - ref).norm();
  return std::log2(e1 / e2);
}

}  // namespace hktest

namespace hktest {

/// x' = -4x, y = x. With A = diag(-1, -2, -3) and B = 1 the immersion is
/// linear, T(x) = c x with c_i = 1 / (k_i - 4).
inline SystemSpec fast_linear() {
  SystemSpec s;
  s.name = "linear";
  s.n_x = 1, s.n_y = 1, s.m = 1;
  s.domain = {{-1, 1}};
  s.forced_coord = 0;
  s.drift = [](const Vec& x) { return Vec(-4.0 * x); };
  s.output = [](const Vec& x) { return Vec(x); };
  return s;
}

inline Vec fast_linear_gain() {
  Vec c(3);
  c << -1.0 / 3.0, -1.0 / 2.0, -1.0;
  return c;
}

/// Identity-activation maps realizing T(x) = c x and its least-squares inverse.
inline ObserverModel fast_linear_model() {
  const SystemSpec sys = fast_linear();
  ObserverModel m;
  m.system = sys.name;
  m.obs = build_observer_matrices(1, 1);
  m.maps = make_maps(sys, 3, 3, 1);
  m.maps.encoder.hidden = Activation::identity;
  m.maps.decoder.hidden = Activation::identity;
  m.maps.state_scale = Vec::Ones(1);
  m.maps.latent_scale = 1.0;
  m.theta = make_encoder_params(m.maps);
  m.phi = make_decoder_params(m.maps);
  const Vec c = fast_linear_gain();
  m.theta.view(weight_name(kEnc, 0)) = c;
  m.theta.view(weight_name(kEnc, 1)) = RowMat::Identity(3, 3);
  m.phi.view(weight_name(kDec, 0)) = RowMat::Identity(3, 3);
  m.phi.view(weight_name(kDec, 1)) = c.transpose() / c.squaredNorm();
  return m;
}

}  // namespace hktest
