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

#ifndef HERD_MFG_SOLVERS_H_
#define HERD_MFG_SOLVERS_H_

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "herd_mfg/core.h"
#include "herd_mfg/environment.h"
#include "herd_mfg/oracle.h"
#include "herd_mfg/rng.h"

namespace herd_mfg {

// A run stopped because an iterate became non-finite or left its bounds.
class SolverAbort : public std::runtime_error {
 public:
  explicit SolverAbort(const std::string& what) : std::runtime_error(what) {}
};

// Iterates of the single-loop actor-critic. The MDP variant reuses this
// bundle and leaves mu_hat and ops.h untouched.
struct AsacState {
  SoftmaxPolicy theta;
  MeanField mu_hat;
  ValueEstimate value;
  OperatorEstimates ops;
  int current_state = 0;
  std::int64_t k = 0;
  // Environment transitions drawn so far; equals k after every step.
  std::int64_t samples_drawn = 0;
  Rng rng;

  IterateView View() const {
    return {k, theta, mu_hat, value.v, value.j};
  }
};

// theta = 0, mu_hat uniform, V = 0, J = 0.5, operator estimates zero, s0
// uniform from the solver stream of config.seed.
AsacState AsacInit(const TabularMfg& env, const SolverConfig& config);

// One iteration: a single sample under (pi_{theta_k}, mu_hat_k), then
//   theta += alpha f,  mu_hat = Proj_simplex(mu_hat + xi h),
//   V = Proj_ball(V + beta g_v),  J = clamp(J + beta g_j),
// then the smoothed operator updates from the sample and the pre-update
// iterates. Throws SolverAbort on non-finite values or a bound violation.
AsacState AsacStep(const TabularMfg& env, AsacState state,
                   const SolverConfig& config);

// Same with explicit step sizes (used to pin lambda in tests).
AsacState AsacStepWith(const TabularMfg& env, AsacState state,
                       const SolverConfig& config, const StepSizes& steps);

// Checks simplex feasibility, the critic ball and interval, and the operator
// bounds on one state. Empty result means every invariant holds.
std::vector<std::string> CheckIterateInvariants(const AsacState& state,
                                                const SolverConfig& config);

using MetricHook =
    std::function<MetricRecord(const TabularMfg&, const AsacState&)>;

// The exact-oracle metrics of an ASAC iterate.
MetricRecord AsacMetrics(const TabularMfg& env, const AsacState& state);

struct RunResult {
  std::vector<MetricRecord> trace;
  AsacState final_state;
};

// Runs config.max_iters steps, calling `hook` after every step whose new
// counter is a multiple of config.metric_every.
RunResult AsacRun(const TabularMfg& env, const SolverConfig& config,
                  const MetricHook& hook = AsacMetrics);

// Actor-critic for an average-reward MDP: AsacStep without the mean-field
// estimate, and with the f update using (r + V(s')) grad log pi.
// Throws std::invalid_argument if env is not an MDP.
AsacState MdpAcStep(const TabularMfg& env, AsacState state,
                    const SolverConfig& config);
AsacState MdpAcStepWith(const TabularMfg& env, AsacState state,
                        const SolverConfig& config, const StepSizes& steps);

// Metrics for the MDP variant: eps_pi is ||grad J_MDP||^2 and the mean-field
// entries are zero.
MetricRecord MdpMetrics(const TabularMfg& env, const AsacState& state);

RunResult MdpAcRun(const TabularMfg& env, const SolverConfig& config,
                   const MetricHook& hook = MdpMetrics);

// Reconstructed nested baseline: an inner loop of entropy-regularized
// relative Q-learning under a frozen mean field, and an outer loop moving
// the mean field toward the inner trajectory's state occupancy.
struct BaselineConfig {
  double tau = 0.0;         // entropy weight
  double tau_floor = 0.05;  // softmax temperature floor
  std::int64_t inner_iters = 1000;
  std::int64_t outer_iters = 200;
  double q_step = 0.05;
  double mu_step = 0.1;
  std::uint64_t seed = 0;

  void Validate() const;
  bool operator==(const BaselineConfig&) const = default;
};

struct BaselineState {
  RowMatrix q;
  MeanField mu;
  double j_hat = 0.0;
  int current_state = 0;
  std::int64_t outer = 0;
  std::int64_t samples_drawn = 0;
  Rng rng;

  double Temperature(double tau, double tau_floor) const;
  SoftmaxPolicy Policy(const BaselineConfig& config) const;
};

struct BaselineResult {
  std::vector<MetricRecord> trace;  // k counts samples drawn
  BaselineState final_state;
};

using BaselineHook = std::function<MetricRecord(
    const TabularMfg&, const BaselineState&, const BaselineConfig&)>;

MetricRecord BaselineMetrics(const TabularMfg& env, const BaselineState& state,
                             const BaselineConfig& config);

BaselineResult BaselineRun(const TabularMfg& env, const BaselineConfig& config,
                           const BaselineHook& hook = BaselineMetrics);

}  // namespace herd_mfg

#endif  // HERD_MFG_SOLVERS_H_
