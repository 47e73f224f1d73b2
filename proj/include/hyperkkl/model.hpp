#pragma once

// A trained observer: system, latent pair, maps and optional conditioning
// networks, with conversion to and from HKKP checkpoints.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hyperkkl/checkpoint.hpp"
#include "hyperkkl/dynamics.hpp"
#include "hyperkkl/hypernet.hpp"
#include "hyperkkl/kkl.hpp"

namespace hyperkkl {

enum class Variant : int { autonomous = 0, static_hyper = 1, dynamic_hyper = 2, curriculum = 3 };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::autonomous: return "autonomous";
    case Variant::static_hyper: return "static";
    case Variant::dynamic_hyper: return "dynamic";
    case Variant::curriculum: return "curriculum";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "autonomous") return Variant::autonomous;
  if (s == "static") return Variant::static_hyper;
  if (s == "dynamic") return Variant::dynamic_hyper;
  if (s == "curriculum") return Variant::curriculum;
  throw ConfigError("unknown variant '" + s + "' (expected static|dynamic|autonomous|curriculum)");
}

inline constexpr const char* kSystemNames[] = {"duffing", "vanderpol", "rossler", "lorenz"};

inline int system_code(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == kSystemNames[i]) return i;
  throw ConfigError("unknown system '" + name + "'");
}

struct SeedRange {
  std::uint64_t lo = 0, hi = 0;
  bool intersects(const SeedRange& o) const { return lo <= o.hi && o.lo <= hi; }
  friend bool operator==(const SeedRange&, const SeedRange&) = default;
};

struct ObserverModel {
  std::string system;
  Variant variant = Variant::autonomous;
  ObserverMatrices obs;
  KklMaps maps;
  ParamStore theta;  // encoder
  ParamStore phi;    // decoder
  double vf_scale = 1.0;
  std::optional<HyperNetSpec> hyper;
  ParamStore psi;
  std::optional<InjectionSpec> injection;
  ParamStore xi;
  std::vector<SeedRange> train_seeds;

  SystemSpec system_spec() const { return systems::by_name(system); }
};

namespace detail {

inline ParamStore scalars(const std::vector<std::pair<std::string, double>>& kv) {
  ParamStore p;
  for (const auto& [k, v] : kv) {
    p.add(k, 1, 1);
    p.view(k)(0, 0) = v;
  }
  return p;
}

inline void put_row(ParamStore& p, const std::string& name, const std::vector<double>& v) {
  p.add(name, 1, static_cast<Eigen::Index>(v.size()));
  auto m = p.view(name);
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
}

inline std::vector<int> get_ints(const ParamStore& p, const std::string& name) {
  const auto m = p.view(name);
  std::vector<int> out;
  for (Eigen::Index i = 0; i < m.cols(); ++i) out.push_back(static_cast<int>(m(0, i)));
  return out;
}

inline double get1(const ParamStore& p, const std::string& name) { return p.view(name)(0, 0); }

inline std::vector<double> widths_row(const MlpSpec& s) { return {s.widths.begin(), s.widths.end()}; }

}  // namespace detail

inline Checkpoint to_checkpoint(const ObserverModel& m) {
  using namespace detail;
  Checkpoint ck;
  ParamStore meta = scalars({{"system", system_code(m.system)},
                             {"variant", static_cast<int>(m.variant)},
                             {"activation", m.maps.encoder.hidden == Activation::tanh ? 0.0 : 1.0},
                             {"latent_scale", m.maps.latent_scale},
                             {"vf_scale", m.vf_scale}});
  put_row(meta, "enc_widths", widths_row(m.maps.encoder));
  put_row(meta, "dec_widths", widths_row(m.maps.decoder));
  put_row(meta, "state_scale", {m.maps.state_scale.data(), m.maps.state_scale.data() + m.maps.state_scale.size()});
  if (!m.train_seeds.empty()) {
    meta.add("train_seeds", static_cast<Eigen::Index>(m.train_seeds.size()), 2);
    auto s = meta.view("train_seeds");
    for (std::size_t i = 0; i < m.train_seeds.size(); ++i) {
      s(static_cast<Eigen::Index>(i), 0) = static_cast<double>(m.train_seeds[i].lo);
      s(static_cast<Eigen::Index>(i), 1) = static_cast<double>(m.train_seeds[i].hi);
    }
  }
  if (m.hyper)
    put_row(meta, "hyper", {static_cast<double>(m.hyper->lstm.hidden), static_cast<double>(m.hyper->window),
                            static_cast<double>(m.hyper->rank), static_cast<double>(m.hyper->chunk_size), m.hyper->tau});
  if (m.injection) {
    put_row(meta, "injection", {static_cast<double>(m.injection->lstm.hidden), static_cast<double>(m.injection->window),
                                m.injection->tau});
    put_row(meta, "injection_widths", widths_row(m.injection->mlp));
  }
  ck["meta"] = std::move(meta);
  ParamStore obs;
  obs.add("A", m.obs.A.rows(), m.obs.A.cols());
  obs.add("B", m.obs.B.rows(), m.obs.B.cols());
  obs.view("A") = m.obs.A;
  obs.view("B") = m.obs.B;
  ck["obs"] = std::move(obs);
  ck["theta"] = m.theta;
  ck["phi"] = m.phi;
  if (m.hyper) ck["psi"] = m.psi;
  if (m.injection) ck["xi"] = m.xi;
  return ck;
}

inline ObserverModel from_checkpoint(const Checkpoint& ck) {
  using namespace detail;
  const ParamStore& meta = ck.at("meta");
  ObserverModel m;
  const int code = static_cast<int>(get1(meta, "system"));
  if (code < 0 || code > 3) throw IoError("checkpoint names an unknown system");
  m.system = kSystemNames[code];
  m.variant = static_cast<Variant>(static_cast<int>(get1(meta, "variant")));
  const Activation act = get1(meta, "activation") == 0.0 ? Activation::tanh : Activation::identity;
  m.maps.encoder = {get_ints(meta, "enc_widths"), act};
  m.maps.decoder = {get_ints(meta, "dec_widths"), act};
  const auto ss = meta.view("state_scale");
  m.maps.state_scale = ss.row(0).transpose();
  m.maps.latent_scale = get1(meta, "latent_scale");
  m.maps.validate();
  m.vf_scale = get1(meta, "vf_scale");
  if (meta.contains("train_seeds")) {
    const auto s = meta.view("train_seeds");
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      m.train_seeds.push_back({static_cast<std::uint64_t>(s(i, 0)), static_cast<std::uint64_t>(s(i, 1))});
  }
  const ParamStore& obs = ck.at("obs");
  m.obs.A = obs.view("A");
  m.obs.B = obs.view("B");
  m.obs.n_z = static_cast<int>(m.obs.A.rows());
  m.theta = ck.at("theta");
  m.phi = ck.at("phi");
  check_mlp_layout(m.theta, kEnc, m.maps.encoder);
  check_mlp_layout(m.phi, kDec, m.maps.decoder);
  if (meta.contains("hyper")) {
    const auto h = meta.view("hyper");
    HyperNetSpec hs;
    hs.lstm = {1, static_cast<int>(h(0, 0))};
    hs.window = static_cast<int>(h(0, 1));
    hs.rank = static_cast<int>(h(0, 2));
    hs.chunk_size = static_cast<int>(h(0, 3));
    hs.tau = h(0, 4);
    hs.enc_target = m.maps.encoder;
    hs.dec_target = m.maps.decoder;
    m.hyper = hs;
    m.psi = ck.at("psi");
    if (!m.psi.same_layout(make_hypernet_params(hs))) throw IoError("hypernetwork parameters do not match their spec");
  }
  if (meta.contains("injection")) {
    const auto h = meta.view("injection");
    InjectionSpec is;
    is.lstm = {1, static_cast<int>(h(0, 0))};
    is.window = static_cast<int>(h(0, 1));
    is.tau = h(0, 2);
    is.mlp.widths = get_ints(meta, "injection_widths");
    is.validate(m.obs.n_z);
    m.injection = is;
    m.xi = ck.at("xi");
    if (!m.xi.same_layout(make_injection_params(is))) throw IoError("injection parameters do not match their spec");
  }
  return m;
}

}  // namespace hyperkkl
