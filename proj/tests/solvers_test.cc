// Copyright 2026 The herd-mfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "herd_mfg/solvers.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "herd_mfg/core.h"
#include "herd_mfg/environment.h"
#include "herd_mfg/oracle.h"
#include "test_util.h"

namespace herd_mfg {
namespace {

using testing::ConstantGame;

SolverConfig SmallConfig(int n_s, std::int64_t iters, std::uint64_t seed = 0) {
  SolverConfig c = SolverConfig::ForStates(n_s);
  c.max_iters = iters;
  c.metric_every = 100;
  c.seed = seed;
  return c;
}

TEST(AsacInitTest, StartingIterates) {
  auto env = MakeBeachBarEnv();
  const AsacState s = AsacInit(*env, SmallConfig(5, 10, 3));
  EXPECT_EQ(s.theta.theta(), RowMatrix::Zero(5, 3));
  EXPECT_EQ(s.mu_hat, MeanField::Uniform(5));
  EXPECT_EQ(s.value.v, Vector::Zero(5));
  EXPECT_EQ(s.value.j, 0.5);
  EXPECT_EQ(s.ops.f, Vector::Zero(15));
  EXPECT_EQ(s.ops.g_v, Vector::Zero(5));
  EXPECT_EQ(s.ops.g_j, 0.0);
  EXPECT_EQ(s.ops.h, Vector::Zero(5));
  EXPECT_EQ(s.k, 0);
  EXPECT_EQ(s.samples_drawn, 0);
  EXPECT_GE(s.current_state, 0);
  EXPECT_LT(s.current_state, 5);
  EXPECT_EQ(AsacInit(*env, SmallConfig(5, 10, 3)).current_state, s.current_state);

  SolverConfig bad = SmallConfig(5, 10);
  bad.b_v = 0.0;
  EXPECT_THROW(AsacInit(*env, bad), std::invalid_argument);
}

TEST(AsacStepTest, LambdaOneCopiesTheSampleOperator) {
  auto env = MakeTwoStateEnv();
  const SolverConfig config = SmallConfig(2, 10, 4);
  const AsacState s0 = AsacInit(*env, config);
  const StepSizes steps{1.0, 0.7, 0.3, 0.2};

  // Replay the draw with a copy of the generator.
  Rng replay = s0.rng;
  const Vector half = Vector::Constant(2, 0.5);
  const SampleStep x = SampleTransitionFromRow(*env, s0.current_state, half,
                                               s0.mu_hat, replay);

  const AsacState s1 = AsacStepWith(*env, s0, config, steps);
  // Operators were zero, so the iterates do not move on the first step.
  EXPECT_EQ(s1.theta.theta(), s0.theta.theta());
  EXPECT_EQ(s1.mu_hat, s0.mu_hat);
  EXPECT_EQ(s1.value.v, s0.value.v);
  EXPECT_EQ(s1.value.j, 0.5);
  EXPECT_EQ(s1.current_state, x.s_next);
  EXPECT_EQ(s1.k, 1);
  EXPECT_EQ(s1.samples_drawn, 1);

  Vector f = Vector::Zero(4);
  f(2 * x.s + x.a) += x.r;
  f.segment(2 * x.s, 2) -= x.r * half;
  EXPECT_LE((s1.ops.f - f).norm(), 1e-15);
  Vector g = Vector::Zero(2);
  g(x.s) = x.r - 0.5;
  EXPECT_LE((s1.ops.g_v - g).norm(), 1e-15);
  EXPECT_NEAR(s1.ops.g_j, config.c_j * (x.r - 0.5), 1e-15);
  Vector h = -s0.mu_hat.probs();
  h(x.s) += 1.0;
  EXPECT_LE((s1.ops.h - h).norm(), 1e-15);

  // The second step moves each iterate along the stored operator.
  const AsacState s2 = AsacStepWith(*env, s1, config, steps);
  EXPECT_LE((s2.theta.flat() - steps.alpha * f).norm(), 1e-15);
  EXPECT_LE((s2.mu_hat.probs() - ProjectSimplex(s1.mu_hat.probs() + steps.xi * h).probs()).norm(),
            1e-15);
  EXPECT_LE((s2.value.v - steps.beta * g).norm(), 1e-15);
  EXPECT_NEAR(s2.value.j, ClampUnit(0.5 + steps.beta * s1.ops.g_j), 1e-15);
}

TEST(AsacStepTest, LambdaZeroFreezesIterates) {
  auto env = MakeExample2Env();
  const SolverConfig config = SmallConfig(2, 10, 5);
  AsacState s = AsacInit(*env, config);
  for (int i = 0; i < 1000; ++i) s = AsacStepWith(*env, s, config, {0.0, 10.0, 1.0, 1.0});
  EXPECT_EQ(s.theta.theta(), RowMatrix::Zero(2, 2));
  EXPECT_EQ(s.mu_hat, MeanField::Uniform(2));
  EXPECT_EQ(s.value.v, Vector::Zero(2));
  EXPECT_EQ(s.value.j, 0.5);
  EXPECT_EQ(s.k, 1000);
  EXPECT_EQ(s.samples_drawn, 1000);
}

TEST(AsacStepTest, OneSamplePerStepAndBoundedDrift) {
  std::vector<std::unique_ptr<TabularMfg>> envs;
  envs.push_back(MakeTwoStateEnv());
  envs.push_back(MakeExample2Env());
  envs.push_back(MakeSyntheticEnv(SyntheticKind::kEnv1, 6, 2));
  envs.push_back(MakeSyntheticEnv(SyntheticKind::kEnv3, 6, 2));
  envs.push_back(MakeBeachBarEnv());
  for (const auto& env : envs) {
    const int n = env->num_states();
    const SolverConfig config = SmallConfig(n, 0, 6);
    const OperatorBounds b = ComputeOperatorBounds(config.b_v, config.c_j);
    AsacState s = AsacInit(*env, config);
    for (int i = 0; i < 20000; ++i) {
      const StepSizes st = config.schedule.At(s.k);
      const AsacState next = AsacStep(*env, s, config);
      ASSERT_EQ(next.samples_drawn, next.k);
      ASSERT_TRUE(CheckIterateInvariants(next, config).empty());
      ASSERT_LE((next.theta.flat() - s.theta.flat()).norm(), st.alpha * b.b_f * (1 + 1e-9));
      ASSERT_LE((next.mu_hat.probs() - s.mu_hat.probs()).norm(), st.xi * b.b_h * (1 + 1e-9));
      ASSERT_LE((next.value.v - s.value.v).norm(), st.beta * b.b_g * (1 + 1e-9));
      ASSERT_LE(std::abs(next.value.j - s.value.j), st.beta * b.b_g * (1 + 1e-9));
      s = next;
    }
  }
}

TEST(AsacStepTest, AbortsOnNonFiniteOrViolatedBounds) {
  auto env = MakeTwoStateEnv();
  const SolverConfig config = SmallConfig(2, 10);
  AsacState s = AsacInit(*env, config);
  s.value.v(0) = std::numeric_limits<double>::quiet_NaN();
  s.value.v(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(AsacStep(*env, s, config), SolverAbort);

  AsacState t = AsacInit(*env, config);
  t.ops.h = Vector::Constant(2, 10.0);
  EXPECT_FALSE(CheckIterateInvariants(t, config).empty());
  EXPECT_THROW(AsacStepWith(*env, t, config, {0.0, 1.0, 1.0, 0.0}), SolverAbort);

  AsacState u = AsacInit(*env, config);
  EXPECT_THROW(AsacStep(*MakeBeachBarEnv(), u, config), std::invalid_argument);
}

TEST(AsacRunTest, TraceGridAndDeterminism) {
  auto env = MakeSyntheticEnv(SyntheticKind::kEnv1, 5, 1);
  SolverConfig config = SmallConfig(5, 2000, 9);
  config.metric_every = 250;
  const RunResult a = AsacRun(*env, config);
  const RunResult b = AsacRun(*env, config);
  ASSERT_EQ(a.trace.size(), 8u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].k, 250 * static_cast<std::int64_t>(i + 1));
  }
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.final_state.theta.theta(), b.final_state.theta.theta());

  config.seed = 10;
  EXPECT_NE(AsacRun(*env, config).trace, a.trace);
}

TEST(AsacRunTest, ZeroIterationsIsEmpty) {
  auto env = MakeTwoStateEnv();
  const RunResult r = AsacRun(*env, SmallConfig(2, 0));
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.final_state.k, 0);
  EXPECT_EQ(r.final_state.theta.theta(), RowMatrix::Zero(2, 2));
}

TEST(AsacRunTest, TwoStateReachesAnEquilibrium) {
  auto env = MakeTwoStateEnv();
  const RunResult r = AsacRun(*env, SmallConfig(2, 200000, 1), nullptr);
  EXPECT_TRUE(r.trace.empty());
  const PolicyTable pi = SoftmaxTable(r.final_state.theta);
  const MeanField induced = InducedMeanField(*env, pi);
  EXPECT_LE(BestResponseGap(*env, pi, induced), 5e-3);
  EXPECT_LE((r.final_state.mu_hat.probs() - induced.probs()).norm(), 5e-2);
}

TEST(AsacRunTest, DegenerateGameTracksStationaryLaw) {
  // On an MDP the mean-field estimate should settle on the induced law.
  auto env = MakeRandomMdp(5, 3, 2);
  SolverConfig config = SmallConfig(5, 100000, 2);
  config.metric_every = 100000;
  const RunResult r = AsacRun(*env, config);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_LE(r.trace[0].eps_mu, 1e-3);
}

TEST(MdpAcTest, RejectsMeanFieldGames) {
  auto env = MakeTwoStateEnv();
  const SolverConfig config = SmallConfig(2, 10);
  EXPECT_THROW(MdpAcStep(*env, AsacInit(*env, config), config), std::invalid_argument);
  EXPECT_THROW(MdpAcRun(*env, config), std::invalid_argument);
}

TEST(MdpAcTest, ConstantRewardHasZeroGradient) {
  ConstantGame env(3, 2, 0.4);
  SolverConfig config = SmallConfig(3, 5000, 1);
  config.metric_every = 500;
  const RunResult r = MdpAcRun(env, config);
  ASSERT_EQ(r.trace.size(), 10u);
  for (const MetricRecord& m : r.trace) {
    EXPECT_LE(m.eps_pi, 1e-20);
    EXPECT_EQ(m.eps_mu, 0.0);
  }
  EXPECT_EQ(r.final_state.mu_hat, MeanField::Uniform(3));
  EXPECT_EQ(r.final_state.ops.h, Vector::Zero(3));
}

TEST(MdpAcTest, LambdaOneUsesRewardPlusNextValue) {
  auto env = MakeRandomMdp(3, 2, 5);
  const SolverConfig config = SmallConfig(3, 10, 3);
  AsacState s = AsacInit(*env, config);
  s.value.v << 0.3, -0.1, -0.2;
  Rng replay = s.rng;
  const Vector half = Vector::Constant(2, 0.5);
  const SampleStep x =
      SampleTransitionFromRow(*env, s.current_state, half, s.mu_hat, replay);
  const AsacState t = MdpAcStepWith(*env, s, config, {1.0, 1.0, 1.0, 1.0});
  Vector f = Vector::Zero(6);
  const double factor = x.r + s.value.v(x.s_next);
  f(2 * x.s + x.a) += factor;
  f.segment(2 * x.s, 2) -= factor * half;
  EXPECT_LE((t.ops.f - f).norm(), 1e-15);
}

TEST(MdpAcTest, FindsNearStationaryPoint) {
  auto env = MakeRandomMdp(5, 3, 3);
  SolverConfig config = SmallConfig(5, 200000, 0);
  config.metric_every = 1000;
  const RunResult r = MdpAcRun(*env, config);
  double best = std::numeric_limits<double>::infinity();
  for (const MetricRecord& m : r.trace) best = std::min(best, m.eps_pi);
  EXPECT_LE(best, 1e-4);
  const double j = AverageReward(*env, SoftmaxTable(r.final_state.theta), MeanField::Uniform(5));
  EXPECT_NEAR(j, BestResponseValue(*env, MeanField::Uniform(5)).value, 5e-3);
}

TEST(BaselineTest, ConfigValidation) {
  BaselineConfig c;
  EXPECT_NO_THROW(c.Validate());
  BaselineConfig bad = c;
  bad.tau = -1.0;
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
  bad = c;
  bad.outer_iters = 0;
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
  bad = c;
  bad.mu_step = 0.0;
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
  bad = c;
  bad.q_step = 0.0;
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
}

TEST(BaselineTest, NoInnerStepsLeavesPolicyUnchanged) {
  auto env = MakeTwoStateEnv();
  BaselineConfig c;
  c.inner_iters = 0;
  c.outer_iters = 5;
  const BaselineResult r = BaselineRun(*env, c);
  ASSERT_EQ(r.trace.size(), 5u);
  EXPECT_EQ(r.final_state.q, RowMatrix::Zero(2, 2));
  EXPECT_EQ(r.final_state.mu, MeanField::Uniform(2));
  EXPECT_EQ(r.final_state.samples_drawn, 0);
}

TEST(BaselineTest, DeterministicAndCountsSamples) {
  auto env = MakeBeachBarEnv();
  BaselineConfig c;
  c.inner_iters = 200;
  c.outer_iters = 10;
  c.tau = 0.5;
  c.seed = 4;
  const BaselineResult a = BaselineRun(*env, c);
  const BaselineResult b = BaselineRun(*env, c);
  EXPECT_EQ(a.trace, b.trace);
  ASSERT_EQ(a.trace.size(), 10u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].k, 200 * static_cast<std::int64_t>(i + 1));
  }
  EXPECT_EQ(a.final_state.outer, 10);
}

TEST(BaselineTest, UnregularizedTracksMeanField) {
  auto env = MakeSyntheticEnv(SyntheticKind::kEnv1, 10, 7);
  BaselineConfig c;
  c.seed = 1;
  const BaselineResult r = BaselineRun(*env, c);
  EXPECT_LT(r.trace.back().eps_mu, 0.05);
}

TEST(BaselineTest, DivergenceAborts) {
  auto env = MakeTwoStateEnv();
  BaselineConfig c;
  c.q_step = 50.0;
  c.inner_iters = 100;
  c.outer_iters = 5;
  EXPECT_THROW(BaselineRun(*env, c), SolverAbort);
}

}  // namespace
}  // namespace herd_mfg
