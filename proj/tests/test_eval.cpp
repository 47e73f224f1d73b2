#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <sstream>

#include "hyperkkl/eval.hpp"
#include "support.hpp"

using namespace hyperkkl;

namespace {

Trajectory prefix(const Trajectory& tr, Eigen::Index k) {
  Trajectory p = tr;
  p.times = tr.times.head(k);
  p.states = tr.states.topRows(k);
  p.inputs = tr.inputs.topRows(k);
  p.outputs = tr.outputs.topRows(k);
  return p;
}

ObserverModel as_autonomous(ObserverModel m) {
  m.variant = Variant::autonomous;
  m.hyper.reset();
  m.injection.reset();
  m.psi = ParamStore();
  m.xi = ParamStore();
  return m;
}

BenchmarkConfig small_bench() {
  BenchmarkConfig c;
  c.regimes = {SignalKind::zero, SignalKind::sinusoid};
  c.n_test = 3;
  c.horizon = 4.0;
  return c;
}

}  // namespace

TEST(Metrics, RmseHandExample) {
  Mat x = Mat::Zero(4, 2), xh(4, 2);
  xh << 0, 0, 1, 0, 0, 1, 1, 1;
  // sqrt(mean(0, 1, 1, 2)) = 1
  EXPECT_NEAR(rmse(x, xh, 0.0), 1.0, 1e-12);
  EXPECT_EQ(rmse(x, x, 0.0), 0.0);
  Mat off = x;
  off.col(1).array() += -0.3;
  EXPECT_NEAR(rmse(x, off, 0.0), 0.3, 1e-12);
}

TEST(Metrics, SmapeHandExamples) {
  const Mat one = Mat::Ones(4, 1);
  EXPECT_EQ(smape(one, one, 0.0), 0.0);
  EXPECT_NEAR(smape(one, Mat::Zero(4, 1), 0.0), 200.0 / (1.0 + 1e-8), 1e-12);
  EXPECT_NEAR(smape(one, Mat::Constant(4, 1, 3.0), 0.0), 100.0 * 4.0 / (4.0 + 1e-8), 1e-12);
  EXPECT_NEAR(smape(one, Mat::Constant(4, 1, 3.0), 0.0), 100.0, 1e-6);
}

TEST(Metrics, TransientDiscard) {
  Mat x = Mat::Random(100, 2), xh = x;
  xh.row(0).setConstant(5.0);
  xh.row(4).setConstant(-5.0);  // ceil(0.05 * 100) = 5 rows are dropped
  EXPECT_EQ(rmse(x, xh), 0.0);
  EXPECT_EQ(smape(x, xh), 0.0);
  xh.row(5).array() += 1.0;
  EXPECT_GT(rmse(x, xh), 0.0);
  EXPECT_EQ(transient_skip(21, 0.05), 2);
  EXPECT_THROW(rmse(Mat::Zero(1, 1), Mat::Zero(1, 1), 0.5), ContractViolation);
  EXPECT_THROW(rmse(Mat::Zero(3, 1), Mat::Zero(4, 1)), ContractViolation);
}

TEST(Observer, ZeroInputRecoversAutonomousBitwise) {
  const SystemSpec sys = systems::duffing();
  const TrajectorySet set = generate_dataset(sys, SignalKind::zero, 2, 50, 0.05, 5.0, 0.01);
  for (const ObserverModel& m : {hktest::tiny_dynamic("duffing"), hktest::tiny_static("duffing")}) {
    const ObserverModel a = as_autonomous(m);
    for (const auto& tr : set.trajectories) {
      const Estimate e = run_observer(m, tr), ea = run_observer(a, tr);
      EXPECT_EQ(std::memcmp(e.x.data(), ea.x.data(), e.x.size() * sizeof(double)), 0);
      EXPECT_EQ(std::memcmp(e.z.data(), ea.z.data(), e.z.size() * sizeof(double)), 0);
    }
    // with input the conditioning is active
    const TrajectorySet forced = generate_dataset(sys, SignalKind::sinusoid, 1, 60, 0.05, 5.0, 0.01);
    EXPECT_GT((run_observer(m, forced.trajectories[0]).x - run_observer(a, forced.trajectories[0]).x).norm(), 0.0);
  }
}

TEST(Observer, EstimatesAreCausal) {
  const TrajectorySet set = generate_dataset(systems::van_der_pol(), SignalKind::square, 1, 70, 0.05, 5.0, 0.01);
  const Trajectory& tr = set.trajectories[0];
  for (const ObserverModel& m : {hktest::tiny_model("vanderpol"), hktest::tiny_dynamic("vanderpol"),
                                 hktest::tiny_static("vanderpol")}) {
    const Mat full = run_observer(m, tr).x;
    const Mat part = run_observer(m, prefix(tr, 37)).x;
    for (Eigen::Index k = 0; k < 37; ++k)
      for (Eigen::Index j = 0; j < 2; ++j) EXPECT_EQ(full(k, j), part(k, j));
  }
}

TEST(Observer, RejectsMismatchedTrajectory) {
  const TrajectorySet set = generate_dataset(systems::lorenz(), SignalKind::zero, 1, 1, 0.05, 1.0, 0.0);
  EXPECT_THROW(run_observer(hktest::tiny_model("duffing"), set.trajectories[0]), ContractViolation);
}

TEST(Benchmark, RefusesOverlappingSeeds) {
  ObserverModel m = hktest::tiny_model("duffing");
  const BenchmarkConfig c = small_bench();
  m.train_seeds = {{0, 99}, {c.seed + 4, c.seed + 4}};
  EXPECT_THROW(benchmark({&m}, c), ConfigError);
  m.train_seeds = {{0, 99}};
  EXPECT_NO_THROW(benchmark({&m}, c));
}

TEST(Benchmark, CellsAreIndependentAndReproducible) {
  const ObserverModel d = hktest::tiny_dynamic("duffing");
  const ObserverModel a = as_autonomous(d);
  const BenchmarkConfig c = small_bench();
  const EvalReport alone = benchmark({&a}, c);
  const EvalReport grid = benchmark({&d, &a}, c);
  ASSERT_EQ(alone.cells.size(), 2u);
  ASSERT_EQ(grid.cells.size(), 4u);
  EXPECT_EQ(grid.cells[0].variant, Variant::autonomous);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(grid.cells[i].rmse, alone.cells[i].rmse);
    EXPECT_EQ(grid.cells[i].smape, alone.cells[i].smape);
  }
  EXPECT_EQ(grid.cells[0].rmse, grid.cells[2].rmse);  // zero regime: dynamic equals autonomous
  EXPECT_EQ(grid.cells[1].seed_lo, c.seed + 3);
  EXPECT_EQ(grid.cells[1].seed_hi, c.seed + 5);
  std::ostringstream s1, s2;
  write_report_csv(s1, grid);
  write_report_csv(s2, benchmark({&a, &d}, c));
  EXPECT_EQ(s1.str(), s2.str());
  EXPECT_EQ(s1.str().substr(0, s1.str().find('\n')), "system,variant,regime,rmse,smape,n,seed_lo,seed_hi");
  for (const auto& cell : grid.cells) {
    EXPECT_GE(cell.rmse, 0.0);
    EXPECT_GE(cell.smape, 0.0);
    EXPECT_LE(cell.smape, 200.0);
  }
  EXPECT_THROW(benchmark({&a, &a}, c), ConfigError);
}

TEST(Benchmark, MissingVariantIsListed) {
  const ObserverModel a = hktest::tiny_model("duffing");
  try {
    require_variants({{Variant::autonomous, &a}}, {Variant::autonomous, Variant::dynamic_hyper, Variant::curriculum});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("dynamic, curriculum"), std::string::npos);
  }
}

TEST(Plot, SvgIsWellFormedWithOnePolylinePerSeries) {
  const TrajectorySet set = generate_dataset(systems::rossler(), SignalKind::sinusoid, 1, 9, 0.05, 2.0, 0.01);
  const Trajectory& tr = set.trajectories[0];
  std::ostringstream os;
  write_svg(os, tr, Mat(tr.states * 0.9), "rossler dynamic sin");
  std::istringstream in(os.str());
  boost::property_tree::ptree pt;
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, pt));
  int groups = 0, lines = 0;
  for (const auto& [tag, g] : pt.get_child("svg")) {
    if (tag != "g") continue;
    ++groups;
    int here = 0;
    for (const auto& [t2, child] : g)
      if (t2 == "polyline") {
        ++here;
        const std::string pts = child.get<std::string>("<xmlattr>.points");
        EXPECT_EQ(std::count(pts.begin(), pts.end(), ','), tr.length());
      }
    EXPECT_EQ(here, groups <= 3 ? 2 : 1);
    lines += here;
  }
  EXPECT_EQ(groups, 4);
  EXPECT_EQ(lines, 7);
  EXPECT_EQ(plot_name("rossler", Variant::dynamic_hyper, SignalKind::sinusoid), "rossler_dynamic_sin.svg");
}
