#pragma once

// Input-conditioned parameter generation.
//
// Dynamic variant: a shared LSTM summarizes the input window into h_t and two
// heads emit weight perturbations for the encoder and decoder. Each head has a
// shared rank-r projection V and one readout block U_c per chunk of at most
// `chunk_size` target weights, so chunk c receives U_c (V h_t).
//
// Static variant: an LSTM context plus the latent state feed a small MLP whose
// output is added to the latent dynamics.
//
// Both outputs are multiplied by g(u) = 1 - exp(-|u_window|^2 / tau), which is
// exactly zero for an all-zero window.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hyperkkl/error.hpp"
#include "hyperkkl/nn.hpp"
#include "hyperkkl/param_store.hpp"
#include "hyperkkl/tape.hpp"

namespace hyperkkl {

inline double input_gate(const Mat& window, double tau) {
  require(tau > 0.0, "gate time constant must be positive");
  return 1.0 - std::exp(-window.squaredNorm() / tau);
}

/// Rows oldest to newest: samples k-w+1 .. k of `inputs`, indices clamped at 0.
inline Mat window_at(const Mat& inputs, long k, int w) {
  require(w >= 1, "window length must be positive");
  require(k >= 0 && k < inputs.rows(), "window end index out of range");
  Mat out(w, inputs.cols());
  for (int j = 0; j < w; ++j) out.row(j) = inputs.row(std::max<long>(0, k - (w - 1) + j));
  return out;
}

/// Transposes a list of equally shaped w x m windows into w step matrices (n x m).
inline std::vector<Mat> windows_to_steps(const std::vector<Mat>& windows) {
  require(!windows.empty(), "no windows given");
  const auto w = windows.front().rows(), m = windows.front().cols();
  std::vector<Mat> steps(static_cast<std::size_t>(w), Mat(static_cast<Eigen::Index>(windows.size()), m));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    require(windows[i].rows() == w && windows[i].cols() == m, "windows differ in shape");
    for (Eigen::Index s = 0; s < w; ++s) steps[static_cast<std::size_t>(s)].row(static_cast<Eigen::Index>(i)) = windows[i].row(s);
  }
  return steps;
}

/// Final hidden state of one sequence, evaluated with matrix-vector products
/// only so the result does not depend on how many windows are processed together.
inline Vec lstm_final_state(const ParamStore& p, const std::string& prefix, const LstmSpec& spec, const Mat& window) {
  require(window.rows() >= 1, "LSTM sequence must be non-empty");
  require(window.cols() == spec.input, "LSTM input width mismatch");
  const auto wx = p.view(prefix + ".Wx");
  const auto wh = p.view(prefix + ".Wh");
  const Vec b = p.view(prefix + ".b").row(0).transpose();
  const Eigen::Index d = spec.hidden;
  Vec h = Vec::Zero(d), c = Vec::Zero(d), gates(4 * d);
  for (Eigen::Index s = 0; s < window.rows(); ++s) {
    gates = b;
    gates.noalias() += wx * window.row(s).transpose();
    if (s > 0) gates.noalias() += wh * h;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double i = 1.0 / (1.0 + std::exp(-gates[j]));
      const double f = 1.0 / (1.0 + std::exp(-gates[d + j]));
      const double g = std::tanh(gates[2 * d + j]);
      const double o = 1.0 / (1.0 + std::exp(-gates[3 * d + j]));
      c[j] = (s > 0 ? f * c[j] : 0.0) + i * g;
      h[j] = o * std::tanh(c[j]);
    }
  }
  return h;
}

// ---- chunk plan -------------------------------------------------------------------

struct ChunkSpan {
  int layer = 0;
  std::size_t start = 0;   // offset in the weights-only index space
  std::size_t length = 0;
};

/// Splits every weight matrix of `target` into consecutive blocks of at most
/// `chunk_size` entries; blocks never straddle layers.
inline std::vector<ChunkSpan> chunk_plan(const MlpSpec& target, int chunk_size) {
  require(chunk_size >= 1, "chunk size must be positive");
  std::vector<ChunkSpan> plan;
  for (int l = 0; l < target.layers(); ++l) {
    const std::size_t base = target.weight_offset(l);
    const std::size_t n = static_cast<std::size_t>(target.widths[l]) * static_cast<std::size_t>(target.widths[l + 1]);
    for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(chunk_size))
      plan.push_back({l, base + s, std::min<std::size_t>(static_cast<std::size_t>(chunk_size), n - s)});
  }
  return plan;
}

/// Expands a weights-only vector into a full delta store matching `prefix`'s
/// MLP layout; bias slices stay zero.
inline ParamStore expand_weight_delta(const MlpSpec& spec, const std::string& prefix, const Vec& weights) {
  require(static_cast<std::size_t>(weights.size()) == spec.weight_count(), "weight delta has wrong length");
  ParamStore d;
  add_mlp_params(d, prefix, spec);
  for (int l = 0; l < spec.layers(); ++l) {
    auto w = d.view(weight_name(prefix, l));
    w = Eigen::Map<const RowMat>(weights.data() + spec.weight_offset(l), w.rows(), w.cols());
  }
  return d;
}

/// Elementwise base + delta; the base store is not modified.
inline ParamStore conditioned_params(const ParamStore& base, const ParamStore& delta) {
  if (!base.same_layout(delta)) throw ContractViolation("conditioned_params: delta layout differs from base");
  return base + delta;
}

// ---- dynamic hypernetwork -------------------------------------------------------------

struct HyperNetSpec {
  LstmSpec lstm{1, 64};
  int window = 100;
  int rank = 32;
  int chunk_size = 256;
  double tau = 1e-2;
  MlpSpec enc_target;
  MlpSpec dec_target;

  void validate() const {
    lstm.validate();
    require(window >= 1, "window must be positive");
    require(rank >= 1, "head rank must be positive");
    require(chunk_size >= 1, "chunk size must be positive");
    require(tau > 0.0, "tau must be positive");
    enc_target.validate();
    dec_target.validate();
  }
};

inline const std::string kHyperLstm = "lstm";

inline std::string head_prefix(bool encoder) { return encoder ? "enc_head" : "dec_head"; }
inline std::string chunk_name(bool encoder, std::size_t c) {
  return head_prefix(encoder) + ".c" + std::to_string(c) + ".U";
}

inline ParamStore make_hypernet_params(const HyperNetSpec& spec) {
  spec.validate();
  ParamStore p;
  add_lstm_params(p, kHyperLstm, spec.lstm);
  for (bool enc : {true, false}) {
    const MlpSpec& target = enc ? spec.enc_target : spec.dec_target;
    p.add(head_prefix(enc) + ".V", spec.rank, spec.lstm.hidden);
    const auto plan = chunk_plan(target, spec.chunk_size);
    for (std::size_t c = 0; c < plan.size(); ++c)
      p.add(chunk_name(enc, c), static_cast<Eigen::Index>(plan[c].length), spec.rank);
  }
  return p;
}

/// LSTM and projections get fan-in uniform init; chunk readouts start at zero
/// so training begins exactly at the frozen base maps.
inline void init_hypernet(ParamStore& p, const HyperNetSpec& spec, CounterRng& rng) {
  init_lstm(p, kHyperLstm, spec.lstm, rng);
  for (bool enc : {true, false}) p.fill_uniform(head_prefix(enc) + ".V", std::sqrt(1.0 / spec.lstm.hidden), rng);
}

/// Offset of the first chunk of a head; all chunks of a head are contiguous,
/// forming one P x rank matrix.
inline std::size_t head_block_offset(const ParamStore& p, bool encoder) { return p.slice(chunk_name(encoder, 0)).offset; }

/// h_t for one window.
inline Vec encode_context(const ParamStore& psi, const HyperNetSpec& spec, const Mat& u_window) {
  require(u_window.rows() == spec.window, "context window has wrong length");
  return lstm_final_state(psi, kHyperLstm, spec.lstm, u_window);
}

/// Weights-only perturbation of one head for context h, before gating.
inline Vec head_output(const ParamStore& psi, const HyperNetSpec& spec, bool encoder, const Vec& h) {
  require(h.size() == spec.lstm.hidden, "context has wrong length");
  const MlpSpec& target = encoder ? spec.enc_target : spec.dec_target;
  const Vec v = psi.view(head_prefix(encoder) + ".V") * h;
  const auto plan = chunk_plan(target, spec.chunk_size);
  Vec out(static_cast<Eigen::Index>(target.weight_count()));
  for (std::size_t c = 0; c < plan.size(); ++c)
    out.segment(static_cast<Eigen::Index>(plan[c].start), static_cast<Eigen::Index>(plan[c].length)) =
        psi.view(chunk_name(encoder, c)) * v;
  return out;
}

struct Deltas {
  ParamStore encoder;  // layout of the base encoder
  ParamStore decoder;  // layout of the base decoder
};

/// Gated perturbations for both maps. An all-zero window yields exact zeros.
inline Deltas generate_deltas(const ParamStore& psi, const HyperNetSpec& spec, const Vec& h, const Mat& u_window,
                              const std::string& enc_prefix, const std::string& dec_prefix) {
  const double g = input_gate(u_window, spec.tau);
  auto make = [&](bool enc) {
    const MlpSpec& target = enc ? spec.enc_target : spec.dec_target;
    const std::string& prefix = enc ? enc_prefix : dec_prefix;
    if (g == 0.0) return expand_weight_delta(target, prefix, Vec::Zero(static_cast<Eigen::Index>(target.weight_count())));
    return expand_weight_delta(target, prefix, g * head_output(psi, spec, enc, h));
  };
  return {make(true), make(false)};
}

/// LSTM contexts (n x d_h) for a batch of windows.
inline Tape::Var hyper_context(Tape& t, const ParamStore& psi, const HyperNetSpec& spec, const std::vector<Mat>& windows) {
  for (const auto& w : windows) require(w.rows() == spec.window, "context window has wrong length");
  return lstm_forward(t, psi, kHyperLstm, spec.lstm, windows_to_steps(windows), true);
}

inline Vec window_gates(const std::vector<Mat>& windows, double tau) {
  Vec g(static_cast<Eigen::Index>(windows.size()));
  for (std::size_t i = 0; i < windows.size(); ++i) g[static_cast<Eigen::Index>(i)] = input_gate(windows[i], tau);
  return g;
}

/// Gated weights-only deltas of one head, P x n (columns are samples).
inline Tape::Var hyper_head(Tape& t, const ParamStore& psi, const HyperNetSpec& spec, bool encoder, Tape::Var context,
                            const Vec& gates) {
  const MlpSpec& target = encoder ? spec.enc_target : spec.dec_target;
  require(gates.size() == t.value(context).rows(), "one gate per context row required");
  const Tape::Var v = t.matmul_nt(t.param(psi, head_prefix(encoder) + ".V"), context);  // r x n
  const Tape::Var u = t.param_range(psi, head_block_offset(psi, encoder),
                                    static_cast<Eigen::Index>(target.weight_count()), spec.rank);
  return t.scale_cols(t.matmul(u, v), gates);
}

// ---- static injection --------------------------------------------------------------

struct InjectionSpec {
  LstmSpec lstm{1, 64};
  int window = 100;
  MlpSpec mlp;  // (n_z + d_h) -> ... -> n_z
  double tau = 1e-2;

  void validate(int n_z) const {
    lstm.validate();
    mlp.validate();
    require(mlp.input() == n_z + lstm.hidden, "injection MLP input must be n_z + context size");
    require(mlp.output() == n_z, "injection output dimension must equal n_z");
    require(window >= 1 && tau > 0.0, "injection window and tau must be positive");
  }
};

inline const std::string kInjLstm = "lstm";
inline const std::string kInjMlp = "mlp";

inline InjectionSpec make_injection_spec(int n_z, int context, int width, int window, double tau) {
  InjectionSpec s;
  s.lstm = {1, context};
  s.window = window;
  s.mlp.widths = {n_z + context, width, width, n_z};
  s.tau = tau;
  return s;
}

inline ParamStore make_injection_params(const InjectionSpec& spec) {
  ParamStore p;
  add_lstm_params(p, kInjLstm, spec.lstm);
  add_mlp_params(p, kInjMlp, spec.mlp);
  return p;
}

/// Fan-in init with the output layer zeroed, so the untrained injection is zero.
inline void init_injection(ParamStore& p, const InjectionSpec& spec, CounterRng& rng) {
  init_lstm(p, kInjLstm, spec.lstm, rng);
  init_mlp(p, kInjMlp, spec.mlp, rng);
  const int last = spec.mlp.layers() - 1;
  p.view(weight_name(kInjMlp, last)).setZero();
  p.view(bias_name(kInjMlp, last)).setZero();
}

/// Gated injection scale * g(u) * mlp([z / scale, ctx]) for one latent state.
inline Vec static_injection(const ParamStore& xi, const InjectionSpec& spec, const Vec& z, const Vec& ctx, double gate,
                            double latent_scale = 1.0) {
  require(z.size() == spec.mlp.output(), "injection latent has wrong length");
  require(ctx.size() == spec.lstm.hidden, "injection context has wrong length");
  if (gate == 0.0) return Vec::Zero(z.size());
  Vec in(z.size() + ctx.size());
  in << z / latent_scale, ctx;
  return (gate * latent_scale) * mlp_forward(xi, kInjMlp, spec.mlp, in);
}

inline Vec static_injection(const ParamStore& xi, const InjectionSpec& spec, const Vec& z, const Mat& u_window,
                            double latent_scale = 1.0) {
  require(u_window.rows() == spec.window, "injection window has wrong length");
  const double g = input_gate(u_window, spec.tau);
  if (g == 0.0) return Vec::Zero(z.size());
  return static_injection(xi, spec, z, lstm_final_state(xi, kInjLstm, spec.lstm, u_window), g, latent_scale);
}

/// Tape version: z (n x n_z) and ctx (n x d_h) rows, gates per row.
inline Tape::Var static_injection(Tape& t, const MlpVars& mlp, const InjectionSpec& spec, Tape::Var z, Tape::Var ctx,
                                  const Vec& gates, double latent_scale = 1.0) {
  const Tape::Var in = t.concat_cols(t.scale(z, 1.0 / latent_scale), ctx);
  const Tape::Var out = mlp_forward(t, spec.mlp, mlp, in).y;
  return t.scale(t.scale_rows(out, gates), latent_scale);
}

}  // namespace hyperkkl
