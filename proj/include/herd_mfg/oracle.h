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

// Model-based computations: stationary distributions, induced mean fields,
// average rewards, differential values, exact gradients, best responses and
// numerical checks of the structural assumptions. Everything here is a pure
// function of its inputs.

#ifndef HERD_MFG_ORACLE_H_
#define HERD_MFG_ORACLE_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "herd_mfg/core.h"
#include "herd_mfg/environment.h"
#include "herd_mfg/rng.h"

namespace herd_mfg {

// Raised when an exact computation cannot certify its result (reducible or
// periodic chain, fixed-point iteration that does not settle, ...).
class OracleError : public std::runtime_error {
 public:
  explicit OracleError(const std::string& what) : std::runtime_error(what) {}
};

struct StationaryResult {
  MeanField dist;
  double residual;  // ||P nu - nu||_2
};

// P(s', s) = sum_a P^mu(s'|s,a) pi(a|s). Columns index the source state.
Matrix TransitionMatrix(const TabularMfg& env, const PolicyTable& policy,
                        const MeanField& mu);

// True iff the directed graph of positive entries is strongly connected and
// has period one.
bool IsIrreducibleAperiodic(const Matrix& column_stochastic);

// nu = P nu. Direct solve with the normalization row appended for up to
// kDirectSolveLimit states, power iteration beyond. Throws OracleError on
// reducible or periodic chains.
inline constexpr int kDirectSolveLimit = 200;
StationaryResult StationaryDistribution(const Matrix& column_stochastic);

struct InducedMeanFieldOptions {
  double tol = 1e-10;
  int max_iters = 10000;
};

// Fixed point mu = nu^{pi, mu}, iterated from the uniform mean field; retries
// with 0.5 damping if the plain iteration does not settle.
MeanField InducedMeanField(const TabularMfg& env, const PolicyTable& policy,
                           InducedMeanFieldOptions options = {});

// J(pi, mu) = E_{s ~ nu^{pi,mu}, a ~ pi}[r(s, a, mu)].
double AverageReward(const TabularMfg& env, const PolicyTable& policy,
                     const MeanField& mu);

// Expected one-step reward under pi in each state.
Vector PolicyReward(const TabularMfg& env, const PolicyTable& policy,
                    const MeanField& mu);

struct DifferentialValueResult {
  Vector v;  // sums to zero
  double j;
  MeanField nu;
  double bellman_residual;  // max-norm of V - (r_pi - J 1 + P^T V)
};

DifferentialValueResult SolveDifferentialValue(const TabularMfg& env,
                                               const PolicyTable& policy,
                                               const MeanField& mu);
Vector DifferentialValue(const TabularMfg& env, const PolicyTable& policy,
                         const MeanField& mu);

// grad_theta J(pi_theta, mu) with mu held fixed, flat state-major.
Vector ExactPolicyGradient(const TabularMfg& env, const SoftmaxPolicy& theta,
                           const MeanField& mu);

struct BestResponse {
  double value;
  PolicyTable policy;
  int iterations;
};

// Relative value iteration on the frozen-mu MDP after the aperiodicity
// transform P -> (I + P) / 2, which leaves gains and optimal policies
// unchanged. Stops once span(T h - h) <= tol; value is the midpoint of the
// resulting gain bracket. Greedy ties within `tol` go to the lowest action.
BestResponse BestResponseValue(const TabularMfg& env, const MeanField& mu,
                               double tol = 1e-10, int max_iters = 1000000);

// max_pi' J(pi', mu) - J(pi, mu).
double BestResponseGap(const TabularMfg& env, const PolicyTable& policy,
                       const MeanField& mu);

// Pi_{E_perp} v = v - mean(v) 1.
Vector ProjectOutConstant(const Vector& v);

// The iterate bundle the metrics are evaluated on. Solvers expose this view of
// their state.
struct IterateView {
  std::int64_t k;
  const SoftmaxPolicy& theta;
  const MeanField& mu_hat;
  const Vector& v_hat;
  double j_hat;
};

struct MetricRecord {
  std::int64_t k = 0;
  double eps_pi = 0.0;
  double eps_mu = 0.0;
  double eps_v = 0.0;
  double eps_j = 0.0;
  double grad_proxy = 0.0;         // ||grad J(pi_k, mu_hat_k)||
  double mu_residual_proxy = 0.0;  // ||mu_hat_k - nu^{pi_k, mu_hat_k}||
  double j_hat = 0.0;

  double EpsSum() const { return eps_pi + eps_mu + eps_v + eps_j; }
  bool operator==(const MetricRecord&) const = default;
};

MetricRecord ComputeMetrics(const TabularMfg& env, const IterateView& iterate);

struct HerdingReport {
  double rho;
  double kappa_hat;
  int n_pairs;           // pairs evaluated
  int n_skipped;         // identical or oracle-failing pairs
  RowMatrix worst_pi;    // pair attaining kappa_hat (empty if none positive)
  RowMatrix worst_pi_prime;
};

// l(pi) - l(pi') - rho (J(pi, mu*(pi)) - J(pi', mu*(pi))).
double HerdingDefect(const TabularMfg& env, const PolicyTable& pi,
                     const PolicyTable& pi_prime, double rho);

// Samples pairs of softmax policies with theta ~ N(0, theta_scale^2) and
// measures the herding defect
//   l(pi) - l(pi') - rho (J(pi, mu*(pi)) - J(pi', mu*(pi))),
// l(pi) = J(pi, mu*(pi)); kappa_hat = max(0, max defect / ||pi - pi'||_F).
HerdingReport HerdingCheck(const TabularMfg& env, double rho, int n_pairs,
                           Rng& rng, double theta_scale = 2.0);

// max over sampled (pi, mu1, mu2) of ||nu^{pi,mu1} - nu^{pi,mu2}|| /
// ||mu1 - mu2||. Policies are softmax with theta ~ N(0, theta_scale^2), mean
// fields are flat-Dirichlet draws.
double EstimateContractionDelta(const TabularMfg& env, int n_policies,
                                int n_mu_pairs, Rng& rng,
                                double theta_scale = 2.0);

// Smallest k >= 0 with max_s d_TV(P^k e_s, nu) <= c. Throws OracleError if
// `cap` steps are not enough.
int EstimateMixingTime(const TabularMfg& env, const PolicyTable& policy,
                       const MeanField& mu, double c, int cap = 100000);

// Minimum eigenvalue of E_{s ~ mu*(pi), a ~ pi}[g g^T], g = grad log pi(a|s),
// restricted to the orthogonal complement of the per-state all-ones
// directions. Returns 0 when |A| = 1.
double FisherMinEigenvalue(const TabularMfg& env, const SoftmaxPolicy& theta);

// The full (unrestricted) Fisher matrix.
Matrix FisherMatrix(const TabularMfg& env, const SoftmaxPolicy& theta);

}  // namespace herd_mfg

#endif  // HERD_MFG_ORACLE_H_
