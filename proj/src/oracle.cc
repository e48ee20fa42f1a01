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

#include "herd_mfg/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

namespace herd_mfg {
namespace {

constexpr double kStochasticTolerance = 1e-9;
constexpr double kPowerIterationTolerance = 1e-12;
constexpr int kPowerIterationCap = 1000000;
// Accepted ||P nu - nu||_2 for a returned stationary distribution.
constexpr double kStationaryResidualLimit = 1e-9;

std::string FormatVector(const Vector& v) {
  std::ostringstream out;
  out.precision(17);
  out << "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out << ", ";
    out << v(i);
  }
  out << "]";
  return out.str();
}

void CheckColumnStochastic(const Matrix& p) {
  if (p.rows() != p.cols() || p.rows() == 0) {
    throw std::invalid_argument("transition matrix must be square, non-empty");
  }
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    if ((p.col(c).array() < 0.0).any() || !p.col(c).allFinite() ||
        std::abs(p.col(c).sum() - 1.0) > kStochasticTolerance) {
      throw std::invalid_argument("column " + std::to_string(c) +
                                  " of the transition matrix is not a "
                                  "distribution");
    }
  }
}

// BFS reachability over edges u -> v with p(v, u) > 0 (or the reverse graph).
std::vector<int> BfsLevels(const Matrix& p, bool reverse) {
  const int n = static_cast<int>(p.rows());
  std::vector<int> level(n, -1);
  std::queue<int> frontier;
  level[0] = 0;
  frontier.push(0);
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int v = 0; v < n; ++v) {
      const double w = reverse ? p(u, v) : p(v, u);
      if (w > 0.0 && level[v] < 0) {
        level[v] = level[u] + 1;
        frontier.push(v);
      }
    }
  }
  return level;
}

MeanField StationaryFromMatrix(const Matrix& p) {
  return StationaryDistribution(p).dist;
}

// Frozen-mean-field tables for one (env, mu): r(s, a) and P(.|s,a).
struct FrozenModel {
  RowMatrix reward;
  std::vector<Vector> kernel;
};

FrozenModel Freeze(const TabularMfg& env, const MeanField& mu) {
  FrozenModel m;
  m.reward.resize(env.num_states(), env.num_actions());
  m.kernel.reserve(static_cast<std::size_t>(env.num_states()) *
                   env.num_actions());
  for (int s = 0; s < env.num_states(); ++s) {
    for (int a = 0; a < env.num_actions(); ++a) {
      m.reward(s, a) = env.Reward(s, a, mu);
      m.kernel.push_back(env.Transition(s, a, mu));
    }
  }
  return m;
}

Vector GradientFromValue(const TabularMfg& env, const PolicyTable& pi,
                         const MeanField& mu,
                         const DifferentialValueResult& dv) {
  const int n_s = env.num_states();
  const int n_a = env.num_actions();
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(n_s) * n_a);
  for (int s = 0; s < n_s; ++s) {
    for (int a = 0; a < n_a; ++a) {
      const double weight = dv.nu(s) * pi(s, a);
      if (weight == 0.0) continue;
      const Vector next = env.Transition(s, a, mu);
      const double r = env.Reward(s, a, mu);
      // E_{s'}[r + V(s') - V(s)] for this (s, a).
      double td = 0.0;
      for (int t = 0; t < n_s; ++t) td += next(t) * (r + dv.v(t) - dv.v(s));
      for (int b = 0; b < n_a; ++b) {
        const double score = (a == b ? 1.0 : 0.0) - pi(s, b);
        grad(FlatIndex(s, b, n_a)) += weight * td * score;
      }
    }
  }
  return grad;
}

SoftmaxPolicy RandomSoftmax(int n_s, int n_a, double scale, Rng& rng) {
  RowMatrix theta(n_s, n_a);
  for (int s = 0; s < n_s; ++s) {
    for (int a = 0; a < n_a; ++a) theta(s, a) = scale * rng.Normal();
  }
  return SoftmaxPolicy(std::move(theta));
}

}  // namespace

Matrix TransitionMatrix(const TabularMfg& env, const PolicyTable& policy,
                        const MeanField& mu) {
  const int n_s = env.num_states();
  if (policy.num_states() != n_s || policy.num_actions() != env.num_actions()) {
    throw std::invalid_argument("TransitionMatrix: policy shape mismatch");
  }
  Matrix p = Matrix::Zero(n_s, n_s);
  for (int s = 0; s < n_s; ++s) {
    for (int a = 0; a < env.num_actions(); ++a) {
      if (policy(s, a) == 0.0) continue;
      p.col(s) += policy(s, a) * env.Transition(s, a, mu);
    }
  }
  return p;
}

bool IsIrreducibleAperiodic(const Matrix& p) {
  const std::vector<int> forward = BfsLevels(p, /*reverse=*/false);
  const std::vector<int> backward = BfsLevels(p, /*reverse=*/true);
  const auto unreached = [](int level) { return level < 0; };
  if (std::any_of(forward.begin(), forward.end(), unreached) ||
      std::any_of(backward.begin(), backward.end(), unreached)) {
    return false;
  }
  // The period is the gcd of level(u) + 1 - level(v) over all edges u -> v.
  const int n = static_cast<int>(p.rows());
  int period = 0;
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      if (p(v, u) > 0.0) {
        period = std::gcd(period, std::abs(forward[u] + 1 - forward[v]));
        if (period == 1) return true;
      }
    }
  }
  return period == 1;
}

StationaryResult StationaryDistribution(const Matrix& p) {
  CheckColumnStochastic(p);
  const Eigen::Index n = p.rows();
  if (!IsIrreducibleAperiodic(p)) {
    throw OracleError(
        "stationary distribution: chain is reducible or periodic (ergodicity "
        "violated); n = " + std::to_string(n));
  }
  Vector nu;
  if (n <= kDirectSolveLimit) {
    // Any one row of (P - I) is redundant for an irreducible chain; replace
    // the last with the normalization sum(nu) = 1.
    Matrix a = p - Matrix::Identity(n, n);
    a.row(n - 1).setOnes();
    Vector b = Vector::Zero(n);
    b(n - 1) = 1.0;
    nu = a.partialPivLu().solve(b);
  } else {
    nu = Vector::Constant(n, 1.0 / static_cast<double>(n));
    bool converged = false;
    for (int it = 0; it < kPowerIterationCap; ++it) {
      Vector next = p * nu;
      next /= next.sum();
      const double change = (next - nu).lpNorm<1>();
      nu = std::move(next);
      if (change <= kPowerIterationTolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw OracleError("stationary distribution: power iteration did not "
                        "converge");
    }
  }
  nu = nu.cwiseMax(0.0);
  nu /= nu.sum();
  const double residual = (p * nu - nu).norm();
  if (!(residual <= kStationaryResidualLimit)) {
    throw OracleError("stationary distribution: residual " +
                      std::to_string(residual) + " too large");
  }
  return {MeanField(std::move(nu)), residual};
}

MeanField InducedMeanField(const TabularMfg& env, const PolicyTable& policy,
                           InducedMeanFieldOptions options) {
  MeanField mu = MeanField::Uniform(env.num_states());
  if (env.KernelIndependentOfMeanField()) {
    return StationaryFromMatrix(TransitionMatrix(env, policy, mu));
  }
  MeanField previous = mu;
  for (const double damping : {1.0, 0.5}) {
    mu = MeanField::Uniform(env.num_states());
    for (int it = 0; it < options.max_iters; ++it) {
      const MeanField nu = StationaryFromMatrix(TransitionMatrix(env, policy, mu));
      const double residual = (nu.probs() - mu.probs()).norm();
      if (residual <= options.tol) return mu;
      previous = mu;
      Vector next = (1.0 - damping) * mu.probs() + damping * nu.probs();
      next /= next.sum();
      mu = MeanField(std::move(next));
    }
  }
  throw OracleError("induced mean field: no fixed point within " +
                    std::to_string(options.max_iters) +
                    " iterations (contraction factor may be >= 1); last "
                    "iterates " + FormatVector(previous.probs()) + " and " +
                    FormatVector(mu.probs()));
}

Vector PolicyReward(const TabularMfg& env, const PolicyTable& policy,
                    const MeanField& mu) {
  Vector r = Vector::Zero(env.num_states());
  for (int s = 0; s < env.num_states(); ++s) {
    for (int a = 0; a < env.num_actions(); ++a) {
      if (policy(s, a) == 0.0) continue;
      r(s) += policy(s, a) * env.Reward(s, a, mu);
    }
  }
  return r;
}

double AverageReward(const TabularMfg& env, const PolicyTable& policy,
                     const MeanField& mu) {
  const MeanField nu = StationaryFromMatrix(TransitionMatrix(env, policy, mu));
  return nu.probs().dot(PolicyReward(env, policy, mu));
}

DifferentialValueResult SolveDifferentialValue(const TabularMfg& env,
                                               const PolicyTable& policy,
                                               const MeanField& mu) {
  const Matrix p = TransitionMatrix(env, policy, mu);
  MeanField nu = StationaryFromMatrix(p);
  const Vector r = PolicyReward(env, policy, mu);
  const double j = nu.probs().dot(r);
  const Eigen::Index n = p.rows();
  const Vector ones = Vector::Ones(n);

  // (I - P^T + 1 nu^T) is invertible for an ergodic chain; its solution
  // satisfies the Bellman equation with nu^T V = 0, then we recentre.
  const Matrix system =
      Matrix::Identity(n, n) - p.transpose() + ones * nu.probs().transpose();
  Vector v = system.partialPivLu().solve(r - j * ones);
  v.array() -= v.mean();

  const Vector residual = v - (r - j * ones + p.transpose() * v);
  const double bellman = residual.lpNorm<Eigen::Infinity>();
  if (!std::isfinite(bellman) || bellman > 1e-8) {
    throw OracleError("differential value: Bellman residual " +
                      std::to_string(bellman) + " (system near singular)");
  }
  return {std::move(v), j, std::move(nu), bellman};
}

Vector DifferentialValue(const TabularMfg& env, const PolicyTable& policy,
                         const MeanField& mu) {
  return SolveDifferentialValue(env, policy, mu).v;
}

Vector ExactPolicyGradient(const TabularMfg& env, const SoftmaxPolicy& theta,
                           const MeanField& mu) {
  const PolicyTable pi = SoftmaxTable(theta);
  return GradientFromValue(env, pi, mu, SolveDifferentialValue(env, pi, mu));
}

BestResponse BestResponseValue(const TabularMfg& env, const MeanField& mu,
                               double tol, int max_iters) {
  const int n_s = env.num_states();
  const int n_a = env.num_actions();
  const FrozenModel model = Freeze(env, mu);

  // Q(s, a) = r(s, a) + sum_s' Ptilde(s'|s,a) h(s'), Ptilde = (e_s + P) / 2.
  const auto q_value = [&](const Vector& h, int s, int a) {
    return model.reward(s, a) +
           0.5 * (h(s) + model.kernel[FlatIndex(s, a, n_a)].dot(h));
  };

  Vector h = Vector::Zero(n_s);
  Vector th(n_s);
  double lo = 0.0, hi = 0.0;
  int it = 0;
  for (; it < max_iters; ++it) {
    for (int s = 0; s < n_s; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < n_a; ++a) best = std::max(best, q_value(h, s, a));
      th(s) = best;
    }
    const Vector diff = th - h;
    lo = diff.minCoeff();
    hi = diff.maxCoeff();
    h = th.array() - th(0);
    if (hi - lo <= tol) break;
  }
  if (hi - lo > tol) {
    throw OracleError("best response: span " + std::to_string(hi - lo) +
                      " after " + std::to_string(max_iters) + " iterations");
  }

  RowMatrix greedy = RowMatrix::Zero(n_s, n_a);
  for (int s = 0; s < n_s; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n_a; ++a) best = std::max(best, q_value(h, s, a));
    for (int a = 0; a < n_a; ++a) {
      if (q_value(h, s, a) >= best - tol) {
        greedy(s, a) = 1.0;
        break;
      }
    }
  }
  return {0.5 * (lo + hi), PolicyTable(std::move(greedy)), it + 1};
}

double BestResponseGap(const TabularMfg& env, const PolicyTable& policy,
                       const MeanField& mu) {
  return BestResponseValue(env, mu).value - AverageReward(env, policy, mu);
}

Vector ProjectOutConstant(const Vector& v) {
  return (v.array() - v.mean()).matrix();
}

MetricRecord ComputeMetrics(const TabularMfg& env, const IterateView& it) {
  const PolicyTable pi = SoftmaxTable(it.theta);
  MetricRecord m;
  m.k = it.k;
  m.j_hat = it.j_hat;

  const MeanField induced = InducedMeanField(env, pi);
  const Vector grad_induced = GradientFromValue(
      env, pi, induced, SolveDifferentialValue(env, pi, induced));
  m.eps_pi = grad_induced.squaredNorm();
  m.eps_mu = (it.mu_hat.probs() - induced.probs()).squaredNorm();

  const DifferentialValueResult at_estimate =
      SolveDifferentialValue(env, pi, it.mu_hat);
  m.eps_v = ProjectOutConstant(it.v_hat - at_estimate.v).squaredNorm();
  m.eps_j = (it.j_hat - at_estimate.j) * (it.j_hat - at_estimate.j);
  m.grad_proxy = GradientFromValue(env, pi, it.mu_hat, at_estimate).norm();
  m.mu_residual_proxy = (it.mu_hat.probs() - at_estimate.nu.probs()).norm();
  return m;
}

double HerdingDefect(const TabularMfg& env, const PolicyTable& pi,
                     const PolicyTable& pi_prime, double rho) {
  const MeanField mu_pi = InducedMeanField(env, pi);
  const MeanField mu_pi_prime = InducedMeanField(env, pi_prime);
  const double ell_pi = AverageReward(env, pi, mu_pi);
  const double ell_pi_prime = AverageReward(env, pi_prime, mu_pi_prime);
  const double deviation = AverageReward(env, pi_prime, mu_pi);
  return ell_pi - ell_pi_prime - rho * (ell_pi - deviation);
}

HerdingReport HerdingCheck(const TabularMfg& env, double rho, int n_pairs,
                           Rng& rng, double theta_scale) {
  if (!(rho > 0.0)) throw std::invalid_argument("HerdingCheck: rho must be > 0");
  HerdingReport report{rho, 0.0, 0, 0, {}, {}};
  const int n_s = env.num_states();
  const int n_a = env.num_actions();
  for (int i = 0; i < n_pairs; ++i) {
    const PolicyTable pi = SoftmaxTable(RandomSoftmax(n_s, n_a, theta_scale, rng));
    const PolicyTable pi_prime =
        SoftmaxTable(RandomSoftmax(n_s, n_a, theta_scale, rng));
    const double distance = (pi.probs() - pi_prime.probs()).norm();
    if (distance == 0.0) {
      ++report.n_skipped;
      continue;
    }
    double defect;
    try {
      defect = HerdingDefect(env, pi, pi_prime, rho);
    } catch (const OracleError&) {
      ++report.n_skipped;
      continue;
    }
    ++report.n_pairs;
    const double ratio = defect / distance;
    if (ratio > report.kappa_hat) {
      report.kappa_hat = ratio;
      report.worst_pi = pi.probs();
      report.worst_pi_prime = pi_prime.probs();
    }
  }
  return report;
}

double EstimateContractionDelta(const TabularMfg& env, int n_policies,
                                int n_mu_pairs, Rng& rng, double theta_scale) {
  const int n_s = env.num_states();
  double worst = 0.0;
  for (int i = 0; i < n_policies; ++i) {
    const PolicyTable pi =
        SoftmaxTable(RandomSoftmax(n_s, env.num_actions(), theta_scale, rng));
    for (int j = 0; j < n_mu_pairs; ++j) {
      Vector mu1, mu2;
      do {
        mu1 = rng.SimplexPoint(n_s);
        mu2 = rng.SimplexPoint(n_s);
      } while ((mu1 - mu2).norm() < 1e-12);
      const MeanField m1(mu1), m2(mu2);
      const MeanField nu1 = StationaryFromMatrix(TransitionMatrix(env, pi, m1));
      const MeanField nu2 = StationaryFromMatrix(TransitionMatrix(env, pi, m2));
      worst = std::max(worst,
                       (nu1.probs() - nu2.probs()).norm() / (mu1 - mu2).norm());
    }
  }
  return worst;
}

int EstimateMixingTime(const TabularMfg& env, const PolicyTable& policy,
                       const MeanField& mu, double c, int cap) {
  const Matrix p = TransitionMatrix(env, policy, mu);
  const Vector nu = StationaryFromMatrix(p).probs();
  const Eigen::Index n = p.rows();
  Matrix dist = Matrix::Identity(n, n);  // column s: law of s_k given s_0 = s
  for (int k = 0; k <= cap; ++k) {
    double worst = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) {
      worst = std::max(worst, 0.5 * (dist.col(s) - nu).lpNorm<1>());
    }
    if (worst <= c) return k;
    dist = p * dist;
  }
  throw OracleError("mixing time exceeds cap " + std::to_string(cap));
}

Matrix FisherMatrix(const TabularMfg& env, const SoftmaxPolicy& theta) {
  const PolicyTable pi = SoftmaxTable(theta);
  const MeanField induced = InducedMeanField(env, pi);
  const Eigen::Index dim =
      static_cast<Eigen::Index>(env.num_states()) * env.num_actions();
  Matrix fisher = Matrix::Zero(dim, dim);
  for (int s = 0; s < env.num_states(); ++s) {
    for (int a = 0; a < env.num_actions(); ++a) {
      const double weight = induced(s) * pi(s, a);
      if (weight == 0.0) continue;
      const Vector g = LogPolicyGradient(theta, s, a);
      fisher.noalias() += weight * g * g.transpose();
    }
  }
  return fisher;
}

double FisherMinEigenvalue(const TabularMfg& env, const SoftmaxPolicy& theta) {
  const int n_s = env.num_states();
  const int n_a = env.num_actions();
  if (n_a == 1) return 0.0;
  const Matrix fisher = FisherMatrix(env, theta);

  // Helmert basis of the complement of 1 in R^{|A|}, one block per state.
  Matrix helmert = Matrix::Zero(n_a, n_a - 1);
  for (int j = 1; j < n_a; ++j) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(j) * (j + 1));
    helmert.col(j - 1).head(j).setConstant(scale);
    helmert(j, j - 1) = -j * scale;
  }
  Matrix basis = Matrix::Zero(static_cast<Eigen::Index>(n_s) * n_a,
                              static_cast<Eigen::Index>(n_s) * (n_a - 1));
  for (int s = 0; s < n_s; ++s) {
    basis.block(static_cast<Eigen::Index>(s) * n_a,
                static_cast<Eigen::Index>(s) * (n_a - 1), n_a, n_a - 1) = helmert;
  }
  const Matrix restricted = basis.transpose() * fisher * basis;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(restricted,
                                               Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw OracleError("Fisher eigenvalue: eigen-solver failed");
  }
  return solver.eigenvalues().minCoeff();
}

}  // namespace herd_mfg
