#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hyperkkl/signals.hpp"

using namespace hyperkkl;

TEST(Signals, ZeroRegimeIgnoresSeed) {
  for (std::uint64_t s : {0ull, 1ull, 99ull}) {
    const InputSignal z = sample_signal(SignalKind::zero, s);
    EXPECT_EQ(z.kind, SignalKind::zero);
    EXPECT_EQ(eval_signal(z, 3.7), 0.0);
  }
}

TEST(Signals, SameSeedSameParameters) {
  for (auto k : {SignalKind::constant, SignalKind::sinusoid, SignalKind::square, SignalKind::mixture}) {
    EXPECT_EQ(sample_signal(k, 42), sample_signal(k, 42));
    EXPECT_FALSE(sample_signal(k, 42) == sample_signal(k, 43));
  }
}

TEST(Signals, SampledRangesHold) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto c = sample_signal(SignalKind::constant, s);
    EXPECT_GE(c.offset, -1.0);
    EXPECT_LE(c.offset, 1.0);
    const auto sn = sample_signal(SignalKind::sinusoid, s);
    ASSERT_EQ(sn.components.size(), 1u);
    EXPECT_GE(sn.components[0].amplitude, 0.2);
    EXPECT_LE(sn.components[0].amplitude, 1.0);
    EXPECT_GE(sn.components[0].omega, 0.2);
    EXPECT_LE(sn.components[0].omega, 2.0);
    const auto mx = sample_signal(SignalKind::mixture, s);
    EXPECT_GE(mx.components.size(), 2u);
    EXPECT_LE(mx.components.size(), 4u);
  }
}

TEST(Signals, PointValues) {
  const auto s = InputSignal::sinusoid(0.5, 2.0, 0.25, 0.1);
  EXPECT_DOUBLE_EQ(eval_signal(s, 1.5), 0.5 * std::sin(3.0 + 0.25) + 0.1);
  EXPECT_EQ(eval_signal(InputSignal::constant(-0.3), 100.0), -0.3);
  const auto mx = InputSignal::mixture({{0.2, 1.0, 0.0}, {0.3, 3.0, 1.0}});
  EXPECT_DOUBLE_EQ(eval_signal(mx, 0.7), 0.2 * std::sin(0.7) + 0.3 * std::sin(3.0 * 0.7 + 1.0));
}

TEST(Signals, SquareWaveAtZeroCrossingIsPositive) {
  const auto sq = InputSignal::square(0.7, 1.0, 0.0);
  EXPECT_EQ(eval_signal(sq, 0.0), 0.7);
  EXPECT_EQ(eval_signal(sq, 1.0), 0.7);
  EXPECT_EQ(eval_signal(sq, std::numbers::pi + 0.5), -0.7);
}

TEST(Signals, MixtureNeedsDistinctFrequencies) {
  EXPECT_THROW(InputSignal::mixture({{0.1, 1.0, 0.0}}), ContractViolation);
  EXPECT_THROW(InputSignal::mixture({{0.1, 1.0, 0.0}, {0.2, 1.0, 0.5}}), ContractViolation);
}

TEST(Signals, WindowClampsNegativeTimes) {
  const auto s = InputSignal::sinusoid(1.0, 1.0, 0.3);
  const auto w = signal_window(s, 0.1, 5, 0.05);
  ASSERT_EQ(w.size(), 5u);
  EXPECT_EQ(w[0], eval_signal(s, 0.0));
  EXPECT_EQ(w[1], eval_signal(s, 0.0));
  EXPECT_DOUBLE_EQ(w[4], eval_signal(s, 0.1));
}

TEST(Signals, DifficultyLevels) {
  EXPECT_EQ(difficulty(InputSignal::zero(), 0.05, 10).level, 0);
  EXPECT_EQ(difficulty(InputSignal::constant(0.5), 0.05, 10).level, 1);
  EXPECT_EQ(difficulty(InputSignal::sinusoid(1, 0.5, 0), 0.05, 10).level, 2);
  EXPECT_EQ(difficulty(InputSignal::sinusoid(1, 1.5, 0), 0.05, 10).level, 3);
  EXPECT_EQ(difficulty(InputSignal::square(1, 0.5, 0), 0.05, 10).level, 3);
  EXPECT_EQ(difficulty(InputSignal::mixture({{0.1, 1, 0}, {0.1, 2, 0}}), 0.05, 10).level, 4);
  EXPECT_EQ(difficulty(InputSignal::constant(0.5), 0.05, 10).mean_rate, 0.0);
  EXPECT_GT(difficulty(InputSignal::sinusoid(1, 1.5, 0), 0.05, 10).mean_rate,
            difficulty(InputSignal::sinusoid(1, 0.5, 0), 0.05, 10).mean_rate);
}

TEST(Signals, ParseRegime) {
  EXPECT_EQ(parse_regime("sin"), SignalKind::sinusoid);
  EXPECT_EQ(parse_regime("square"), SignalKind::square);
  EXPECT_EQ(parse_regime("mixture"), SignalKind::mixture);
  EXPECT_THROW(parse_regime("chirp"), ConfigError);
}
