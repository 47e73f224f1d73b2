#pragma once

// MLP and LSTM building blocks, both as plain forward passes and as tape
// recordings. Weights are stored out x in, biases 1 x out.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hyperkkl/error.hpp"
#include "hyperkkl/param_store.hpp"
#include "hyperkkl/rng.hpp"
#include "hyperkkl/tape.hpp"

namespace hyperkkl {

enum class Activation { tanh, identity };

struct MlpSpec {
  std::vector<int> widths;  // input, hidden..., output
  Activation hidden = Activation::tanh;

  int layers() const { return static_cast<int>(widths.size()) - 1; }
  int input() const { return widths.front(); }
  int output() const { return widths.back(); }

  void validate() const {
    require(widths.size() >= 3, "MLP needs at least one hidden layer");
    for (int w : widths) require(w > 0, "MLP widths must be positive");
  }

  /// Number of weight-matrix entries (biases excluded).
  std::size_t weight_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layers(); ++l) n += static_cast<std::size_t>(widths[l]) * static_cast<std::size_t>(widths[l + 1]);
    return n;
  }

  /// Offset of layer l's weights inside the weights-only index space.
  std::size_t weight_offset(int l) const {
    std::size_t n = 0;
    for (int k = 0; k < l; ++k) n += static_cast<std::size_t>(widths[k]) * static_cast<std::size_t>(widths[k + 1]);
    return n;
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

inline std::string weight_name(const std::string& prefix, int l) { return prefix + ".L" + std::to_string(l) + ".W"; }
inline std::string bias_name(const std::string& prefix, int l) { return prefix + ".L" + std::to_string(l) + ".b"; }

inline void add_mlp_params(ParamStore& store, const std::string& prefix, const MlpSpec& spec) {
  spec.validate();
  for (int l = 0; l < spec.layers(); ++l) {
    store.add(weight_name(prefix, l), spec.widths[l + 1], spec.widths[l]);
    store.add(bias_name(prefix, l), 1, spec.widths[l + 1]);
  }
}

/// Uniform(+-sqrt(1/fan_in)) for weights and biases.
inline void init_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec, CounterRng& rng) {
  for (int l = 0; l < spec.layers(); ++l) {
    const double bound = std::sqrt(1.0 / spec.widths[l]);
    store.fill_uniform(weight_name(prefix, l), bound, rng);
    store.fill_uniform(bias_name(prefix, l), bound, rng);
  }
}

inline void check_mlp_layout(const ParamStore& p, const std::string& prefix, const MlpSpec& spec) {
  for (int l = 0; l < spec.layers(); ++l) {
    const Slice& w = p.slice(weight_name(prefix, l));
    const Slice& b = p.slice(bias_name(prefix, l));
    if (w.rows != spec.widths[l + 1] || w.cols != spec.widths[l] || b.cols != spec.widths[l + 1])
      throw ContractViolation("parameter layout of '" + prefix + "' does not match its MLP spec");
  }
}

/// Batched forward pass: rows of x are samples.
inline Eigen::MatrixXd mlp_forward(const ParamStore& p, const std::string& prefix, const MlpSpec& spec,
                                   const Eigen::MatrixXd& x) {
  require(x.cols() == spec.input(), "MLP input width mismatch");
  check_mlp_layout(p, prefix, spec);
  Eigen::MatrixXd h = x;
  for (int l = 0; l < spec.layers(); ++l) {
    Eigen::MatrixXd a = h * p.view(weight_name(prefix, l)).transpose();
    a.rowwise() += p.view(bias_name(prefix, l)).row(0);
    if (l + 1 < spec.layers() && spec.hidden == Activation::tanh) a = a.array().tanh().matrix();
    h = std::move(a);
  }
  return h;
}

inline Eigen::VectorXd mlp_forward(const ParamStore& p, const std::string& prefix, const MlpSpec& spec,
                                   const Eigen::VectorXd& x) {
  return mlp_forward(p, prefix, spec, Eigen::MatrixXd(x.transpose())).row(0).transpose();
}

/// Tape inputs for one MLP evaluation. `delta` (optional) is a P x n matrix of
/// per-sample weight perturbations in the weights-only index space.
struct MlpVars {
  std::vector<Tape::Var> w, b;
  std::optional<Tape::Var> delta;
};

/// Registers the MLP slices on the tape, trainable or frozen.
inline MlpVars mlp_vars(Tape& tape, const ParamStore& p, const std::string& prefix, const MlpSpec& spec,
                        bool trainable) {
  check_mlp_layout(p, prefix, spec);
  MlpVars v;
  for (int l = 0; l < spec.layers(); ++l) {
    v.w.push_back(trainable ? tape.param(p, weight_name(prefix, l)) : tape.frozen(p, weight_name(prefix, l)));
    v.b.push_back(trainable ? tape.param(p, bias_name(prefix, l)) : tape.frozen(p, bias_name(prefix, l)));
  }
  return v;
}

struct MlpOut {
  Tape::Var y;
  std::optional<Tape::Var> y_dot;
};

/// Records the forward pass; with `x_dot` it also propagates the tangent
/// J(x) * x_dot, which keeps the spatial Jacobian-vector product differentiable.
inline MlpOut mlp_forward(Tape& t, const MlpSpec& spec, const MlpVars& v, Tape::Var x,
                          std::optional<Tape::Var> x_dot = std::nullopt) {
  require(t.value(x).cols() == spec.input(), "MLP input width mismatch");
  Tape::Var h = x;
  std::optional<Tape::Var> hd = x_dot;
  for (int l = 0; l < spec.layers(); ++l) {
    const Eigen::Index out = spec.widths[l + 1], in = spec.widths[l];
    Tape::Var a = t.add_row(t.matmul_nt(h, v.w[l]), v.b[l]);
    std::optional<Tape::Var> ad;
    if (hd) ad = t.matmul_nt(*hd, v.w[l]);
    if (v.delta) {
      const std::size_t off = spec.weight_offset(l);
      a = t.add(a, t.batched_matvec(*v.delta, h, off, out, in));
      if (hd) ad = t.add(*ad, t.batched_matvec(*v.delta, *hd, off, out, in));
    }
    if (l + 1 < spec.layers() && spec.hidden == Activation::tanh) {
      h = t.tanh(a);
      if (ad) ad = t.tanh_jvp(h, *ad);
    } else {
      h = a;
    }
    hd = ad;
  }
  return {h, hd};
}

// ---- LSTM ---------------------------------------------------------------------

/// Standard four-gate cell (input, forget, cell, output gate order).
struct LstmSpec {
  int input = 1;
  int hidden = 64;

  void validate() const {
    require(input > 0, "LSTM input size must be positive");
    require(hidden > 0, "LSTM hidden size must be positive");
  }
  friend bool operator==(const LstmSpec&, const LstmSpec&) = default;
};

inline void add_lstm_params(ParamStore& store, const std::string& prefix, const LstmSpec& spec) {
  spec.validate();
  store.add(prefix + ".Wx", 4 * spec.hidden, spec.input);
  store.add(prefix + ".Wh", 4 * spec.hidden, spec.hidden);
  store.add(prefix + ".b", 1, 4 * spec.hidden);
}

inline void init_lstm(ParamStore& store, const std::string& prefix, const LstmSpec& spec, CounterRng& rng) {
  const double bound = std::sqrt(1.0 / spec.hidden);
  store.fill_uniform(prefix + ".Wx", bound, rng);
  store.fill_uniform(prefix + ".Wh", bound, rng);
  store.fill_uniform(prefix + ".b", bound, rng);
}

/// Runs a batch of sequences from zero state. `steps[s]` is the n x input
/// matrix of all sequences at step s; returns the n x hidden final state.
inline Eigen::MatrixXd lstm_forward(const ParamStore& p, const std::string& prefix, const LstmSpec& spec,
                                    const std::vector<Eigen::MatrixXd>& steps) {
  require(!steps.empty(), "LSTM sequence must be non-empty");
  const auto wx = p.view(prefix + ".Wx");
  const auto wh = p.view(prefix + ".Wh");
  const auto b = p.view(prefix + ".b");
  require(wx.cols() == spec.input && wh.cols() == spec.hidden, "LSTM layout does not match spec");
  const Eigen::Index n = steps.front().rows(), d = spec.hidden;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, d), c = Eigen::MatrixXd::Zero(n, d);
  const Eigen::MatrixXd wxt = wx.transpose(), wht = wh.transpose();
  Eigen::MatrixXd gates(n, 4 * d);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    require(steps[s].rows() == n && steps[s].cols() == spec.input, "LSTM step shape mismatch");
    gates.noalias() = steps[s] * wxt;
    if (s > 0) gates.noalias() += h * wht;
    gates.rowwise() += b.row(0);
    auto sig = [](const auto& m) { return (1.0 / (1.0 + (-m.array()).exp())).matrix(); };
    const Eigen::MatrixXd i = sig(gates.leftCols(d));
    const Eigen::MatrixXd f = sig(gates.middleCols(d, d));
    const Eigen::MatrixXd g = gates.middleCols(2 * d, d).array().tanh().matrix();
    const Eigen::MatrixXd o = sig(gates.rightCols(d));
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    h = o.cwiseProduct(c.array().tanh().matrix());
  }
  return h;
}

inline Tape::Var lstm_forward(Tape& t, const ParamStore& p, const std::string& prefix, const LstmSpec& spec,
                              const std::vector<Eigen::MatrixXd>& steps, bool trainable) {
  require(!steps.empty(), "LSTM sequence must be non-empty");
  auto bind = [&](const std::string& n) { return trainable ? t.param(p, n) : t.frozen(p, n); };
  const Tape::Var wx = bind(prefix + ".Wx"), wh = bind(prefix + ".Wh"), b = bind(prefix + ".b");
  require(t.value(wx).cols() == spec.input && t.value(wh).cols() == spec.hidden, "LSTM layout does not match spec");
  const Eigen::Index d = spec.hidden;
  Tape::Var h{}, c{};
  for (std::size_t s = 0; s < steps.size(); ++s) {
    Tape::Var gates = t.matmul_nt(t.constant(steps[s]), wx);
    if (s > 0) gates = t.add(gates, t.matmul_nt(h, wh));
    gates = t.add_row(gates, b);
    const Tape::Var i = t.sigmoid(t.slice_cols(gates, 0, d));
    const Tape::Var f = t.sigmoid(t.slice_cols(gates, d, d));
    const Tape::Var g = t.tanh(t.slice_cols(gates, 2 * d, d));
    const Tape::Var o = t.sigmoid(t.slice_cols(gates, 3 * d, d));
    c = s > 0 ? t.add(t.mul(f, c), t.mul(i, g)) : t.mul(i, g);
    h = t.mul(o, t.tanh(c));
  }
  return h;
}

}  // namespace hyperkkl
