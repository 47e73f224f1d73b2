// Acceptance checks. Run one with --criterion N (1..10) or all without arguments.
// Each prints "criterion N: PASS|FAIL ..." and the exit status is non-zero on failure.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hyperkkl/app.hpp"
#include "hyperkkl/eval.hpp"
#include "hyperkkl/grad_check.hpp"
#include "hyperkkl/training.hpp"
#include "support.hpp"

using namespace hyperkkl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// 1: reverse-mode gradients of the full Phase 2 objectives against central differences.
// eps = 1e-4 keeps round-off below the tolerance for coordinates with gradients near 1e-7.
Outcome gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemSpec sys = systems::duffing();
  const TrajectorySet set = generate_dataset(sys, SignalKind::sinusoid, 2, 77, 0.05, 5.0, 0.01);
  const ObserverModel dyn = hktest::tiny_dynamic("duffing", 5, 0.2);
  const ObserverModel stat = hktest::tiny_static("duffing", 4, 0.3);
  std::vector<TrajData> td;
  for (const auto& tr : set.trajectories) td.push_back({&tr, latent_labels(dyn.obs, sys, tr)});
  const std::vector<SampleRef> refs = {{0, 12}, {0, 40}, {1, 25}, {1, 60}};

  DynamicBatch db;
  db.x = gather_rows(td, refs, false);
  db.u = gather_inputs(td, refs);
  db.z = gather_rows(td, refs, true);
  db.win_prev = gather_windows(td, refs, dyn.hyper->window);
  db.win_next = gather_windows(td, refs, dyn.hyper->window, 1);
  const double e_dyn = grad_check(
      [&](Tape& t, const ParamStore& p) {
        return dynamic_total_loss(t, dyn, p, *dyn.hyper, db, 0.1, 0.05, 1.0).total;
      },
      dyn.psi, 1e-4);

  StaticBatch sb;
  sb.x0 = gather_rows(td, refs, false);
  sb.u0 = gather_inputs(td, refs);
  for (long j = 0; j < 3; ++j) {
    Mat y(static_cast<Eigen::Index>(refs.size()), 1);
    for (std::size_t i = 0; i < refs.size(); ++i)
      y.row(static_cast<Eigen::Index>(i)) = set.trajectories[static_cast<std::size_t>(refs[i].traj)].outputs.row(refs[i].k + j);
    sb.y.push_back(y);
    sb.x_next.push_back(gather_rows(td, refs, false, j + 1));
    sb.windows.push_back(gather_windows(td, refs, stat.injection->window, j));
  }
  const double e_stat = grad_check(
      [&](Tape& t, const ParamStore& p) { return static_total_loss(t, stat, p, *stat.injection, sb, 0.1, 0.05).total; },
      stat.xi, 1e-4);
  const double secs = seconds_since(t0);
  return {e_dyn < 1e-5 && e_stat < 1e-5 && secs < 30.0,
          "dynamic max rel err " + fmt(e_dyn) + ", static " + fmt(e_stat) + " (< 1e-5), " + std::to_string(dyn.psi.size()) +
              "+" + std::to_string(stat.xi.size()) + " params, " + fmt(secs) + " s (< 30)"};
}

// 2: global error order of RK4 on forced Van der Pol.
Outcome rk4_order() {
  const auto t0 = std::chrono::steady_clock::now();
  Vec x0(2);
  x0 << 1.2, -0.4;
  const double p = hktest::rk4_order(systems::van_der_pol(), x0, InputSignal::sinusoid(0.5, 1.0, 0.0), 0.05, 5.0);
  const double secs = seconds_since(t0);
  return {p >= 3.5 && p <= 4.5 && secs < 10.0, "order " + fmt(p) + " (in [3.5, 4.5]), " + fmt(secs) + " s (< 10)"};
}

// 3: initial-condition error of the latent observer follows e^{-t}.
Outcome contraction() {
  const auto t0 = std::chrono::steady_clock::now();
  const ObserverMatrices obs = build_observer_matrices(2, 1);
  Mat want = Mat::Zero(5, 5);
  for (int i = 0; i < 5; ++i) want(i, i) = -(i + 1.0);
  const bool diag = obs.A == want;
  const double dt = 0.05;
  const int n = 201;
  Mat y(n, 1);
  for (int k = 0; k < n; ++k) y(k, 0) = std::sin(0.1 * k) + 0.3 * std::cos(0.37 * k);
  Vec z1(5);
  z1 << 0.4, -1.0, 2.0, 0.3, -0.7;
  const Mat d = simulate_latent(obs, y, dt, nullptr, z1) - simulate_latent(obs, y, dt, nullptr, Vec::Zero(5));
  double over = 0.0, slow = 0.0;
  for (int k = 0; k < n; ++k) {
    const double env = std::exp(-k * dt);
    over = std::max(over, d.row(k).norm() / (env * z1.norm()) - 1.0);
    slow = std::max(slow, std::abs(d(k, 0) / (z1(0) * env) - 1.0));
  }
  const double secs = seconds_since(t0);
  return {diag && over <= 0.01 && slow <= 0.01 && secs < 5.0,
          std::string(diag ? "A = diag(-1..-5)" : "A is not diag(-1..-5)") + ", envelope excess " + fmt(over) +
              ", slowest-mode deviation " + fmt(slow) + " (<= 0.01), " + fmt(secs) + " s (< 5)"};
}

// 4: conditioned variants reproduce the autonomous observer bit for bit on zero input.
Outcome zero_input_recovery() {
  int checked = 0, mismatched = 0;
  for (const std::string name : {"duffing", "vanderpol", "rossler", "lorenz"}) {
    const SystemSpec sys = systems::by_name(name);
    const TrajectorySet set = generate_dataset(sys, SignalKind::zero, 10, 100, 0.05, 50.0, 0.01);
    for (const ObserverModel& m : {hktest::tiny_dynamic(name), hktest::tiny_static(name)}) {
      ObserverModel a = m;
      a.variant = Variant::autonomous;
      a.hyper.reset();
      a.injection.reset();
      a.psi = ParamStore();
      a.xi = ParamStore();
      for (const auto& tr : set.trajectories) {
        const Estimate e = run_observer(m, tr), ea = run_observer(a, tr);
        const bool same = e.x.size() == ea.x.size() &&
                          std::memcmp(e.x.data(), ea.x.data(), sizeof(double) * static_cast<std::size_t>(e.x.size())) == 0 &&
                          std::memcmp(e.z.data(), ea.z.data(), sizeof(double) * static_cast<std::size_t>(e.z.size())) == 0;
        ++checked;
        if (!same) ++mismatched;
      }
    }
  }
  return {mismatched == 0, std::to_string(checked - mismatched) + "/" + std::to_string(checked) +
                               " dynamic and static runs bitwise equal to autonomous (4 systems x 10 trajectories)"};
}

// 5: scalar linear system with a known immersion.
Outcome manufactured_solution() {
  const auto t0 = std::chrono::steady_clock::now();
  const ObserverModel m = hktest::fast_linear_model();
  const SystemSpec sys = hktest::fast_linear();
  Mat xs(41, 1);
  for (int i = 0; i < 41; ++i) xs(i, 0) = -1.0 + 0.05 * i;
  const double res = autonomous_pde_residual(m.maps, m.theta, m.obs, sys, xs);

  const double dt = 0.01;
  const int n = 1001;
  Mat y(n, 1);
  for (int k = 0; k < n; ++k) y(k, 0) = 0.8 * std::exp(-4.0 * k * dt);
  const Mat xh = decode(m.maps, m.phi, simulate_latent(m.obs, y, dt));
  auto err = [&](int k) { return std::abs(xh(k, 0) - y(k, 0)); };
  const double rate = (std::log(err(1000)) - std::log(err(600))) / 4.0;
  double flat = 0.0;
  for (int k = 600; k < n; k += 50) flat = std::max(flat, std::abs(err(k) * std::exp(k * dt) / (err(1000) * std::exp(10.0)) - 1.0));
  const double secs = seconds_since(t0);
  return {res < 1e-10 && std::abs(rate + 1.0) < 0.01 && flat < 0.01 && secs < 5.0,
          "residual " + fmt(res) + " (< 1e-10), log-error slope " + fmt(rate) + " (-1 +- 0.01), err e^t spread " +
              fmt(flat) + ", " + fmt(secs) + " s (< 5)"};
}

// 6: desk-scale Phase 1 on Duffing.
Outcome phase1_duffing() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemSpec sys = systems::duffing();
  const TrajectorySet data = generate_dataset(sys, SignalKind::zero, 100, 1, 0.05, 50.0, 0.01);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.seed = 7;
  const TrainResult res = phase1_train(data, cfg);
  BenchmarkConfig bc;
  bc.regimes = {SignalKind::zero};
  const EvalReport rep = benchmark({&res.model}, bc);
  const double r = rep.cells.front().rmse;
  const double secs = seconds_since(t0);
  return {r <= 0.15 && secs <= 600.0, "held-out zero-input RMSE " + fmt(r) + " (<= 0.15) over " +
                                          std::to_string(rep.cells.front().n) + " trajectories, " + fmt(secs) +
                                          " s (<= 600)"};
}

// 7: Van der Pol direction of the variant comparison.
Outcome vdp_directions() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemSpec sys = systems::van_der_pol();
  const TrajectorySet zero = generate_dataset(sys, SignalKind::zero, 100, 1, 0.05, 50.0, 0.01);
  TrainConfig cfg;
  cfg.epochs = 2000;
  cfg.seed = 7;
  const ObserverModel base = phase1_train(zero, cfg).model;

  std::vector<TrajectorySet> forced;
  std::uint64_t seed = 1000;
  for (SignalKind k : {SignalKind::constant, SignalKind::sinusoid, SignalKind::square, SignalKind::mixture}) {
    forced.push_back(generate_dataset(sys, k, 25, seed, 0.05, 50.0, 0.01));
    seed += 1000;
  }
  std::vector<const TrajectorySet*> ptrs;
  for (const auto& s : forced) ptrs.push_back(&s);

  TrainConfig c2 = cfg;
  c2.epochs = 150;
  c2.batch = 64;
  const ObserverModel dyn = phase2_dynamic(base, ptrs, c2).model;
  const ObserverModel cur = curriculum_train(base, ptrs, cfg, CurriculumConfig{}).model;

  BenchmarkConfig bc;
  bc.regimes = {SignalKind::zero, SignalKind::sinusoid};
  const TrajectorySet zero_test = test_set(sys, bc, 0), sin_test = test_set(sys, bc, 1);
  const double a_zero = evaluate_cell(base, zero_test, SignalKind::zero, bc.transient).rmse;
  const double a_sin = evaluate_cell(base, sin_test, SignalKind::sinusoid, bc.transient).rmse;
  const double d_sin = evaluate_cell(dyn, sin_test, SignalKind::sinusoid, bc.transient).rmse;
  const double c_zero = evaluate_cell(cur, zero_test, SignalKind::zero, bc.transient).rmse;
  const double gain = 1.0 - d_sin / a_sin;
  const double secs = seconds_since(t0);
  return {gain >= 0.10 && c_zero > a_zero && secs <= 1800.0,
          "sin RMSE dynamic " + fmt(d_sin) + " vs autonomous " + fmt(a_sin) + " (" + fmt(100 * gain) +
              "% lower, need >= 10%); zero RMSE curriculum " + fmt(c_zero) + " vs autonomous " + fmt(a_zero) +
              " (need >); " + fmt(secs) + " s (<= 1800)"};
}

// 8: metric and plateau oracles.
Outcome metric_oracles() {
  double worst = 0.0;
  auto near = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  Mat x = Mat::Zero(4, 2), xh(4, 2);
  xh << 0, 0, 1, 0, 0, 1, 1, 1;
  near(rmse(x, xh, 0.0), 1.0);  // sqrt((0 + 1 + 1 + 2) / 4)
  near(rmse(x, x, 0.0), 0.0);
  Mat off = x;
  off.col(0).array() += 0.25;
  near(rmse(x, off, 0.0), 0.25);
  const Mat one = Mat::Ones(4, 1);
  near(smape(one, one, 0.0), 0.0);
  near(smape(one, Mat::Zero(4, 1), 0.0), 200.0 / (1.0 + 1e-8));
  near(smape(one, Mat::Constant(4, 1, 3.0), 0.0), 100.0 * 4.0 / (4.0 + 1e-8));
  const bool plateau = plateau_detect({1.0, 0.5, 0.499, 0.4989, 0.49889}, 0.01, 3) &&
                       !plateau_detect({1.0, 0.5, 0.25, 0.125, 0.0625}, 0.01, 3);
  return {worst <= 1e-12 && plateau, "max metric deviation " + fmt(worst) + " (<= 1e-12), plateau example " +
                                         (plateau ? "matches" : "differs")};
}

struct CliRun {
  int code;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hyperkkl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = app::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, err.str()};
}

// 9: every manifest entry replays to byte-identical outputs.
Outcome manifest_replay() {
  const fs::path root = fs::temp_directory_path() / ("hyperkkl_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string w = (root / "run").string();
  const std::vector<std::vector<std::string>> steps = {
      {"gen", "--system", "vanderpol", "--regime", "zero", "--n", "4", "--horizon", "5", "--out", w},
      {"gen", "--system", "vanderpol", "--regime", "square", "--n", "3", "--horizon", "5", "--seed", "40", "--out", w},
      {"train", "--phase", "1", "--data", w + "/vanderpol_zero_s1_n4.hkkl", "--epochs", "20", "--batch", "32", "--width",
       "16", "--collocation", "32", "--out", w},
      {"train", "--phase", "2", "--variant", "static", "--base", w + "/vanderpol_autonomous.hkkp", "--data",
       w + "/vanderpol_square_s40_n3.hkkl", "--epochs", "5", "--batch", "16", "--window", "10", "--lstm-hidden", "4",
       "--injection-width", "8", "--out", w},
      {"eval", "--ckpt", w + "/vanderpol_autonomous.hkkp," + w + "/vanderpol_static.hkkp", "--regimes", "zero,square",
       "--n-test", "3", "--horizon", "5", "--out", w},
  };
  for (const auto& s : steps)
    if (const CliRun r = cli(s); r.code != 0) {
      fs::remove_all(root);
      return {false, "pipeline step '" + s[0] + "' failed: " + r.err};
    }
  const auto runs = read_manifest(w + "/MANIFEST.ini");
  int files = 0, same = 0;
  std::set<std::string> kinds;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string again = (root / ("replay" + std::to_string(i + 1))).string();
    if (cli({"replay", w + "/MANIFEST.ini", "--run", std::to_string(i + 1), "--out", again}).code != 0) continue;
    for (const auto& [name, hash] : runs[i].outputs) {
      ++files;
      if (fs::exists(again + "/" + name) && file_hash(again + "/" + name) == hash) {
        ++same;
        kinds.insert(fs::path(name).extension().string());
      }
    }
  }
  fs::remove_all(root);
  const bool all_kinds = kinds.count(".hkkl") && kinds.count(".hkkp") && kinds.count(".csv");
  return {runs.size() == steps.size() && files > 0 && same == files && all_kinds,
          std::to_string(same) + "/" + std::to_string(files) + " outputs of " + std::to_string(runs.size()) +
              " replayed runs byte-identical (datasets, checkpoints, logs, reports)"};
}

// 10: forward difference in time of an encoder with linearly drifting first-layer weights.
Outcome temporal_consistency() {
  const ObserverModel m = hktest::tiny_model("duffing", 6, 9);
  const MlpSpec& spec = m.maps.encoder;
  Mat x(1, 2);
  x << 0.3, -0.6;
  const Eigen::Index in = spec.widths[0], h1 = spec.widths[1];
  RowMat d(h1, in);
  CounterRng r(2, 1);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = r.uniform(-1, 1);
  // d/dt T at t = 0 by the chain rule through the tanh layers
  const Vec xs = x.row(0).transpose().cwiseQuotient(m.maps.state_scale);
  const auto w0 = m.theta.view(weight_name(kEnc, 0));
  const auto w1 = m.theta.view(weight_name(kEnc, 1));
  const auto w2 = m.theta.view(weight_name(kEnc, 2));
  const Vec g0 = (w0 * xs + m.theta.view(bias_name(kEnc, 0)).row(0).transpose()).array().tanh();
  const Vec a1 = w1 * g0 + m.theta.view(bias_name(kEnc, 1)).row(0).transpose();
  const Vec dg0 = (1 - g0.array().square()).matrix().cwiseProduct(d * xs);
  const Vec dg1 = (1 - a1.array().tanh().square()).matrix().cwiseProduct(w1 * dg0);
  const Vec analytic = m.maps.latent_scale * (w2 * dg1);

  auto fd_error = [&](double dt) {
    Tape t;
    Mat delta = Mat::Zero(static_cast<Eigen::Index>(spec.weight_count()), 1);
    for (Eigen::Index i = 0; i < d.size(); ++i) delta(i, 0) = dt * d.data()[i];
    const MlpVars prev = mlp_vars(t, m.theta, kEnc, spec, false);
    MlpVars next = prev;
    next.delta = t.constant(delta);
    const Mat zp = t.value(encode(t, m.maps, prev, x).z);
    const Mat zn = t.value(encode(t, m.maps, next, x).z);
    return ((zn - zp).row(0).transpose() / dt - analytic).norm();
  };
  const double e1 = fd_error(0.02), e2 = fd_error(0.01);
  const double ratio = e1 / e2;
  return {ratio >= 1.7 && ratio <= 2.3,
          "error " + fmt(e1) + " at dt 0.02, " + fmt(e2) + " at dt 0.01, ratio " + fmt(ratio) + " (in [1.7, 2.3])"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HyperKKL acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> checks = {
      gradient_integrity, rk4_order,      contraction,    zero_input_recovery, manufactured_solution,
      phase1_duffing,     vdp_directions, metric_oracles, manifest_replay,     temporal_consistency};
  bool ok = true;
  for (int i = 1; i <= 10; ++i) {
    if (only && i != only) continue;
    Outcome o;
    try {
      o = checks[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << "criterion " << i << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    ok = ok && o.pass;
  }
  return ok ? 0 : 1;
}
