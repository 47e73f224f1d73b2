#include <gtest/gtest.h>

#include <cmath>

#include "hyperkkl/grad_check.hpp"
#include "hyperkkl/hypernet.hpp"
#include "support.hpp"

using namespace hyperkkl;

namespace {

Mat ramp_window(int w, double amp, double phase = 0.0) {
  Mat u(w, 1);
  for (int j = 0; j < w; ++j) u(j, 0) = amp * std::sin(0.7 * j + phase);
  return u;
}

}  // namespace

TEST(Gate, ZeroWindowGivesExactZero) {
  EXPECT_EQ(input_gate(Mat::Zero(10, 1), 1e-2), 0.0);
  const Mat u = ramp_window(10, 0.3);
  EXPECT_DOUBLE_EQ(input_gate(u, 1e-2), 1.0 - std::exp(-u.squaredNorm() / 1e-2));
  EXPECT_GT(input_gate(u, 1e-2), 0.999);
  EXPECT_THROW(input_gate(u, 0.0), ContractViolation);
}

TEST(Window, ClampsBeforeTheStart) {
  Mat u(5, 1);
  u << 1, 2, 3, 4, 5;
  const Mat w = window_at(u, 1, 4);
  EXPECT_EQ(w(0, 0), 1);
  EXPECT_EQ(w(1, 0), 1);
  EXPECT_EQ(w(2, 0), 1);
  EXPECT_EQ(w(3, 0), 2);
  EXPECT_EQ(window_at(u, 4, 2)(1, 0), 5);
  EXPECT_THROW(window_at(u, 5, 2), ContractViolation);
}

TEST(Chunks, PlanTilesEveryLayerWithoutStraddling) {
  const MlpSpec spec{{2, 7, 5, 3}, Activation::tanh};
  for (int size : {1, 4, 13, 35, 1000}) {
    const auto plan = chunk_plan(spec, size);
    std::size_t next = 0;
    for (const auto& c : plan) {
      EXPECT_EQ(c.start, next);
      EXPECT_LE(c.length, static_cast<std::size_t>(size));
      EXPECT_GE(c.start, spec.weight_offset(c.layer));
      EXPECT_LE(c.start + c.length,
                spec.weight_offset(c.layer) + static_cast<std::size_t>(spec.widths[c.layer] * spec.widths[c.layer + 1]));
      next += c.length;
    }
    EXPECT_EQ(next, spec.weight_count());
  }
}

TEST(Chunks, HeadBlocksAreContiguous) {
  const ObserverModel m = hktest::tiny_model("duffing");
  const HyperNetSpec h = hktest::tiny_hyper(m);
  const ParamStore p = make_hypernet_params(h);
  for (bool enc : {true, false}) {
    const MlpSpec& target = enc ? h.enc_target : h.dec_target;
    std::size_t off = head_block_offset(p, enc), total = 0;
    for (std::size_t c = 0; p.contains(chunk_name(enc, c)); ++c) {
      EXPECT_EQ(p.slice(chunk_name(enc, c)).offset, off + total * static_cast<std::size_t>(h.rank));
      total += static_cast<std::size_t>(p.slice(chunk_name(enc, c)).rows);
    }
    EXPECT_EQ(total, target.weight_count());
  }
}

TEST(Heads, FreshInitProducesZeroDeltas) {
  const ObserverModel m = hktest::tiny_model("vanderpol");
  const HyperNetSpec h = hktest::tiny_hyper(m);
  ParamStore p = make_hypernet_params(h);
  CounterRng r(1, Channel::init_weights, 2);
  init_hypernet(p, h, r);
  const Mat u = ramp_window(h.window, 0.5);
  const Deltas d = generate_deltas(p, h, encode_context(p, h, u), u, kEnc, kDec);
  for (double v : d.encoder.data()) EXPECT_EQ(v, 0.0);
  for (double v : d.decoder.data()) EXPECT_EQ(v, 0.0);
}

TEST(Heads, ZeroWindowProducesZeroDeltasForAnyWeights) {
  const ObserverModel m = hktest::tiny_dynamic("vanderpol");
  const Mat u = Mat::Zero(m.hyper->window, 1);
  const Deltas d = generate_deltas(m.psi, *m.hyper, encode_context(m.psi, *m.hyper, u), u, kEnc, kDec);
  for (double v : d.encoder.data()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(d.encoder.same_layout(m.theta));
  EXPECT_TRUE(d.decoder.same_layout(m.phi));
}

TEST(Heads, LowRankFactorization) {
  const ObserverModel m = hktest::tiny_dynamic("duffing");
  const HyperNetSpec& h = *m.hyper;
  const Vec ctx = encode_context(m.psi, h, ramp_window(h.window, 0.2));
  const Vec out = head_output(m.psi, h, true, ctx);
  const Vec v = m.psi.view(head_prefix(true) + ".V") * ctx;
  Eigen::Index row = 0;
  for (std::size_t c = 0; m.psi.contains(chunk_name(true, c)); ++c) {
    const auto u = m.psi.view(chunk_name(true, c));
    EXPECT_LT((out.segment(row, u.rows()) - u * v).norm(), 1e-14);
    row += u.rows();
  }
}

TEST(Heads, TapeBatchMatchesPerWindowPath) {
  const ObserverModel m = hktest::tiny_dynamic("duffing");
  const HyperNetSpec& h = *m.hyper;
  std::vector<Mat> windows = {ramp_window(h.window, 0.4), Mat::Zero(h.window, 1), ramp_window(h.window, 0.01, 1.0)};
  Tape t;
  const Tape::Var ctx = hyper_context(t, m.psi, h, windows);
  const Vec gates = window_gates(windows, h.tau);
  const Tape::Var d = hyper_head(t, m.psi, h, false, ctx, gates);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Vec c = encode_context(m.psi, h, windows[i]);
    EXPECT_LT((t.value(ctx).row(static_cast<Eigen::Index>(i)).transpose() - c).norm(), 1e-14);
    const Vec expect = input_gate(windows[i], h.tau) * head_output(m.psi, h, false, c);
    EXPECT_LT((t.value(d).col(static_cast<Eigen::Index>(i)) - expect).norm(), 1e-14);
  }
  EXPECT_EQ(t.value(d).col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Heads, GradientsMatchFiniteDifferences) {
  const ObserverModel m = hktest::tiny_dynamic("duffing", 5, 0.2);
  const HyperNetSpec& h = *m.hyper;
  std::vector<Mat> windows = {ramp_window(h.window, 0.4), ramp_window(h.window, 0.3, 2.0)};
  const double e = grad_check(
      [&](Tape& t, const ParamStore& p) {
        const Tape::Var ctx = hyper_context(t, p, h, windows);
        const Vec g = window_gates(windows, h.tau);
        return t.add(t.sum_squares(hyper_head(t, p, h, true, ctx, g)), t.sum_squares(hyper_head(t, p, h, false, ctx, g)));
      },
      m.psi, 1e-6);
  EXPECT_LT(e, 1e-5);
}

TEST(Injection, ZeroGateAndZeroInit) {
  const ObserverModel m = hktest::tiny_static("duffing");
  const InjectionSpec& s = *m.injection;
  const Vec z = Vec::LinSpaced(m.obs.n_z, -1, 1);
  EXPECT_EQ(static_injection(m.xi, s, z, Mat(Mat::Zero(s.window, 1))).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(static_injection(m.xi, s, z, ramp_window(s.window, 0.5)).norm(), 0.0);
  ParamStore fresh = make_injection_params(s);
  CounterRng r(3, Channel::init_weights, 3);
  init_injection(fresh, s, r);
  EXPECT_EQ(static_injection(fresh, s, z, ramp_window(s.window, 0.5)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Injection, TapeMatchesPlainPath) {
  const ObserverModel m = hktest::tiny_static("vanderpol");
  const InjectionSpec& s = *m.injection;
  const Mat w = ramp_window(s.window, 0.3);
  Mat z(2, m.obs.n_z);
  z.row(0) = Vec::LinSpaced(m.obs.n_z, -1, 1).transpose();
  z.row(1) = Vec::LinSpaced(m.obs.n_z, 0.5, -0.2).transpose();
  const Vec ctx = lstm_final_state(m.xi, kInjLstm, s.lstm, w);
  Mat c(2, ctx.size());
  c.row(0) = ctx.transpose();
  c.row(1) = ctx.transpose();
  const Vec gates = Vec::Constant(2, input_gate(w, s.tau));
  Tape t;
  const Tape::Var out = static_injection(t, mlp_vars(t, m.xi, kInjMlp, s.mlp, false), s, t.constant(z), t.constant(c),
                                         gates, 0.5);
  for (int i = 0; i < 2; ++i)
    EXPECT_LT((t.value(out).row(i).transpose() - static_injection(m.xi, s, Vec(z.row(i).transpose()), w, 0.5)).norm(),
              1e-14);
}
