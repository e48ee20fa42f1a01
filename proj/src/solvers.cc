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

#include <cmath>
#include <sstream>
#include <string>
#include <utility>

namespace herd_mfg {
namespace {

// Relative slack on the norm bounds; the bounds are exact in real arithmetic.
constexpr double kBoundSlack = 1e-9;

bool Within(double value, double bound) {
  return value <= bound * (1.0 + kBoundSlack) + kBoundSlack;
}

void AbortIfInvalid(const AsacState& state, const SolverConfig& config) {
  const bool finite = state.theta.theta().allFinite() &&
                      state.mu_hat.probs().allFinite() &&
                      state.value.v.allFinite() && std::isfinite(state.value.j) &&
                      state.ops.f.allFinite() && state.ops.g_v.allFinite() &&
                      std::isfinite(state.ops.g_j) && state.ops.h.allFinite();
  if (!finite) {
    throw SolverAbort("non-finite iterate at k = " + std::to_string(state.k) +
                      " (step sizes too aggressive?)");
  }
  const std::vector<std::string> violations =
      CheckIterateInvariants(state, config);
  if (!violations.empty()) {
    throw SolverAbort("invariant violated at k = " + std::to_string(state.k) +
                      ": " + violations.front());
  }
}

void CheckSizes(const TabularMfg& env, const AsacState& state) {
  if (state.theta.num_states() != env.num_states() ||
      state.theta.num_actions() != env.num_actions()) {
    throw std::invalid_argument("solver state does not match environment");
  }
}

}  // namespace

AsacState AsacInit(const TabularMfg& env, const SolverConfig& config) {
  config.Validate();
  const int n_s = env.num_states();
  const int n_a = env.num_actions();
  Rng rng(config.seed, kSolverStream);
  const int s0 = rng.UniformInt(n_s);
  return AsacState{SoftmaxPolicy::Zeros(n_s, n_a),
                   MeanField::Uniform(n_s),
                   ValueEstimate{Vector::Zero(n_s), 0.5},
                   OperatorEstimates::Zeros(n_s, n_a),
                   s0,
                   0,
                   0,
                   rng};
}

std::vector<std::string> CheckIterateInvariants(const AsacState& state,
                                                const SolverConfig& config) {
  std::vector<std::string> out;
  const Vector& mu = state.mu_hat.probs();
  if ((mu.array() < 0.0).any() ||
      std::abs(mu.sum() - 1.0) > kSimplexTolerance) {
    out.push_back("mu_hat left the simplex");
  }
  if (!Within(state.value.v.norm(), config.b_v)) {
    out.push_back("||V|| = " + std::to_string(state.value.v.norm()) +
                  " exceeds B_V");
  }
  if (!(state.value.j >= 0.0 && state.value.j <= 1.0)) {
    out.push_back("J outside [0, 1]");
  }
  const OperatorBounds bounds = ComputeOperatorBounds(config.b_v, config.c_j);
  if (!Within(state.ops.f.norm(), bounds.b_f)) {
    out.push_back("||f|| = " + std::to_string(state.ops.f.norm()) +
                  " exceeds B_F");
  }
  const double g_norm = std::sqrt(state.ops.g_v.squaredNorm() +
                                  state.ops.g_j * state.ops.g_j);
  if (!Within(g_norm, bounds.b_g)) {
    out.push_back("||(g_v, g_j)|| = " + std::to_string(g_norm) +
                  " exceeds B_G");
  }
  if (!Within(state.ops.h.norm(), bounds.b_h)) {
    out.push_back("||h|| = " + std::to_string(state.ops.h.norm()) +
                  " exceeds B_H");
  }
  return out;
}

AsacState AsacStepWith(const TabularMfg& env, AsacState state,
                       const SolverConfig& config, const StepSizes& steps) {
  CheckSizes(env, state);
  const int n_a = env.num_actions();
  const int s = state.current_state;

  Vector probs(n_a);
  SoftmaxRow(state.theta, s, probs);
  const SampleStep sample =
      SampleTransitionFromRow(env, s, probs, state.mu_hat, state.rng);
  ++state.samples_drawn;

  // Index-k iterates feed the operator updates below.
  const Vector v_k = state.value.v;
  const double j_k = state.value.j;
  const Vector mu_k = state.mu_hat.probs();

  state.theta.mutable_flat() += steps.alpha * state.ops.f;
  state.mu_hat = ProjectSimplex(mu_k + steps.xi * state.ops.h);
  state.value.v = ProjectL2Ball(v_k + steps.beta * state.ops.g_v, config.b_v);
  state.value.j = ClampUnit(j_k + steps.beta * state.ops.g_j);

  const double lambda = steps.lambda;
  const double td = sample.r + v_k(sample.s_next) - v_k(s);
  OperatorEstimates& ops = state.ops;

  ops.f *= 1.0 - lambda;
  Vector score = -probs;
  score(sample.a) += 1.0;
  ops.f.segment(static_cast<Eigen::Index>(s) * n_a, n_a) += lambda * td * score;

  ops.g_v *= 1.0 - lambda;
  ops.g_v(s) += lambda * (td - j_k);
  ops.g_j = (1.0 - lambda) * ops.g_j + lambda * config.c_j * (sample.r - j_k);

  ops.h = (1.0 - lambda) * ops.h - lambda * mu_k;
  ops.h(s) += lambda;

  state.current_state = sample.s_next;
  ++state.k;
  AbortIfInvalid(state, config);
  return state;
}

AsacState AsacStep(const TabularMfg& env, AsacState state,
                   const SolverConfig& config) {
  const StepSizes steps = config.schedule.At(state.k);
  return AsacStepWith(env, std::move(state), config, steps);
}

MetricRecord AsacMetrics(const TabularMfg& env, const AsacState& state) {
  return ComputeMetrics(env, state.View());
}

RunResult AsacRun(const TabularMfg& env, const SolverConfig& config,
                  const MetricHook& hook) {
  AsacState state = AsacInit(env, config);
  std::vector<MetricRecord> trace;
  trace.reserve(static_cast<std::size_t>(config.max_iters / config.metric_every));
  for (std::int64_t i = 0; i < config.max_iters; ++i) {
    state = AsacStep(env, std::move(state), config);
    if (hook && state.k % config.metric_every == 0) {
      trace.push_back(hook(env, state));
    }
  }
  return {std::move(trace), std::move(state)};
}

AsacState MdpAcStepWith(const TabularMfg& env, AsacState state,
                        const SolverConfig& config, const StepSizes& steps) {
  if (!env.IsMdp()) {
    throw std::invalid_argument(
        "MdpAcStep: environment depends on the mean field");
  }
  CheckSizes(env, state);
  const int n_a = env.num_actions();
  const int s = state.current_state;

  Vector probs(n_a);
  SoftmaxRow(state.theta, s, probs);
  const SampleStep sample =
      SampleTransitionFromRow(env, s, probs, state.mu_hat, state.rng);
  ++state.samples_drawn;

  const Vector v_k = state.value.v;
  const double j_k = state.value.j;

  state.theta.mutable_flat() += steps.alpha * state.ops.f;
  state.value.v = ProjectL2Ball(v_k + steps.beta * state.ops.g_v, config.b_v);
  state.value.j = ClampUnit(j_k + steps.beta * state.ops.g_j);

  const double lambda = steps.lambda;
  OperatorEstimates& ops = state.ops;

  // No -V(s) baseline in the actor's TD factor for this variant.
  ops.f *= 1.0 - lambda;
  Vector score = -probs;
  score(sample.a) += 1.0;
  ops.f.segment(static_cast<Eigen::Index>(s) * n_a, n_a) +=
      lambda * (sample.r + v_k(sample.s_next)) * score;

  ops.g_v *= 1.0 - lambda;
  ops.g_v(s) += lambda * (sample.r - j_k + v_k(sample.s_next) - v_k(s));
  ops.g_j = (1.0 - lambda) * ops.g_j + lambda * config.c_j * (sample.r - j_k);

  state.current_state = sample.s_next;
  ++state.k;
  AbortIfInvalid(state, config);
  return state;
}

AsacState MdpAcStep(const TabularMfg& env, AsacState state,
                    const SolverConfig& config) {
  const StepSizes steps = config.schedule.At(state.k);
  return MdpAcStepWith(env, std::move(state), config, steps);
}

MetricRecord MdpMetrics(const TabularMfg& env, const AsacState& state) {
  const PolicyTable pi = SoftmaxTable(state.theta);
  const DifferentialValueResult dv =
      SolveDifferentialValue(env, pi, state.mu_hat);
  const Vector grad = ExactPolicyGradient(env, state.theta, state.mu_hat);
  MetricRecord m;
  m.k = state.k;
  m.eps_pi = grad.squaredNorm();
  m.eps_v = ProjectOutConstant(state.value.v - dv.v).squaredNorm();
  m.eps_j = (state.value.j - dv.j) * (state.value.j - dv.j);
  m.grad_proxy = grad.norm();
  m.j_hat = state.value.j;
  return m;
}

RunResult MdpAcRun(const TabularMfg& env, const SolverConfig& config,
                   const MetricHook& hook) {
  AsacState state = AsacInit(env, config);
  std::vector<MetricRecord> trace;
  for (std::int64_t i = 0; i < config.max_iters; ++i) {
    state = MdpAcStep(env, std::move(state), config);
    if (hook && state.k % config.metric_every == 0) {
      trace.push_back(hook(env, state));
    }
  }
  return {std::move(trace), std::move(state)};
}

void BaselineConfig::Validate() const {
  if (!(tau >= 0.0) || !(tau_floor > 0.0)) {
    throw std::invalid_argument("BaselineConfig: need tau >= 0, tau_floor > 0");
  }
  if (inner_iters < 0 || outer_iters < 1) {
    throw std::invalid_argument(
        "BaselineConfig: need inner_iters >= 0 and outer_iters >= 1");
  }
  if (!(q_step > 0.0) || !(mu_step > 0.0) || mu_step > 1.0) {
    throw std::invalid_argument(
        "BaselineConfig: need q_step > 0 and mu_step in (0, 1]");
  }
}

double BaselineState::Temperature(double tau, double tau_floor) const {
  return std::max(tau, tau_floor);
}

SoftmaxPolicy BaselineState::Policy(const BaselineConfig& config) const {
  return SoftmaxPolicy(q / Temperature(config.tau, config.tau_floor));
}

MetricRecord BaselineMetrics(const TabularMfg& env, const BaselineState& state,
                             const BaselineConfig& config) {
  const SoftmaxPolicy theta = state.Policy(config);
  const PolicyTable pi = SoftmaxTable(theta);
  // Critic view of the Q table: V(s) = E_{a ~ pi} Q(s, a).
  const Vector v_hat = (pi.probs().cwiseProduct(state.q)).rowwise().sum();
  return ComputeMetrics(
      env, IterateView{state.samples_drawn, theta, state.mu, v_hat, state.j_hat});
}

BaselineResult BaselineRun(const TabularMfg& env, const BaselineConfig& config,
                           const BaselineHook& hook) {
  config.Validate();
  const int n_s = env.num_states();
  const int n_a = env.num_actions();
  Rng rng(config.seed, kSolverStream);
  const int s0 = rng.UniformInt(n_s);
  BaselineState state{RowMatrix::Zero(n_s, n_a), MeanField::Uniform(n_s), 0.5,
                      s0, 0, 0, rng};
  const double temperature = state.Temperature(config.tau, config.tau_floor);

  // Soft state value of the Q table: tau log sum exp(Q / tau), or the max when
  // unregularized.
  const auto soft_value = [&](int s) {
    const auto row = state.q.row(s);
    const double top = row.maxCoeff();
    if (config.tau == 0.0) return top;
    return top + config.tau * std::log((((row.array() - top) / config.tau).exp()).sum());
  };

  std::vector<MetricRecord> trace;
  double gain = 0.0;  // differential Q-learning reference
  Vector probs(n_a);
  for (std::int64_t outer = 0; outer < config.outer_iters; ++outer) {
    Vector occupancy = Vector::Zero(n_s);
    for (std::int64_t t = 0; t < config.inner_iters; ++t) {
      const int s = state.current_state;
      const auto row = state.q.row(s);
      probs = ((row.array() - row.maxCoeff()) / temperature).exp().matrix().transpose();
      probs /= probs.sum();
      const SampleStep x = SampleTransitionFromRow(env, s, probs, state.mu, state.rng);
      ++state.samples_drawn;
      occupancy(s) += 1.0;

      const double delta = x.r - gain + soft_value(x.s_next) - state.q(s, x.a);
      state.q(s, x.a) += config.q_step * delta;
      gain += config.q_step * delta;
      state.j_hat += config.q_step * (x.r - state.j_hat);
      state.current_state = x.s_next;
    }
    if (!state.q.allFinite() || state.q.cwiseAbs().maxCoeff() > 1e6) {
      std::ostringstream msg;
      msg << "baseline Q table diverged at outer iteration " << outer;
      throw SolverAbort(msg.str());
    }
    if (config.inner_iters > 0) {
      occupancy /= occupancy.sum();
      Vector next = (1.0 - config.mu_step) * state.mu.probs() +
                    config.mu_step * occupancy;
      next /= next.sum();
      state.mu = MeanField(std::move(next));
    }
    state.outer = outer + 1;
    if (hook) trace.push_back(hook(env, state, config));
  }
  return {std::move(trace), std::move(state)};
}

}  // namespace herd_mfg
