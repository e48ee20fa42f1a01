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

#ifndef HERD_MFG_CORE_H_
#define HERD_MFG_CORE_H_

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace herd_mfg {

// Tables indexed by (state, action) are stored row-major so that the flat
// parameter vector is state-major, action-minor: index = s * |A| + a.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kSimplexTolerance = 1e-9;

inline int FlatIndex(int s, int a, int num_actions) {
  return s * num_actions + a;
}

// A point on the probability simplex over states.
class MeanField {
 public:
  // Validates nonnegativity and unit sum (absolute tolerance `tol`).
  explicit MeanField(Vector probs, double tol = kSimplexTolerance);

  static MeanField Uniform(int num_states);
  static MeanField Vertex(int num_states, int s);

  const Vector& probs() const { return probs_; }
  int size() const { return static_cast<int>(probs_.size()); }
  double operator()(int s) const { return probs_(s); }

  bool operator==(const MeanField& other) const {
    return probs_ == other.probs_;
  }

 private:
  Vector probs_;
};

// Row-stochastic |S| x |A| table pi(a|s).
class PolicyTable {
 public:
  explicit PolicyTable(RowMatrix probs, double tol = kSimplexTolerance);

  static PolicyTable Uniform(int num_states, int num_actions);
  // Plays `action` with probability one in every state.
  static PolicyTable Deterministic(int num_states, int num_actions,
                                   int action);

  const RowMatrix& probs() const { return probs_; }
  int num_states() const { return static_cast<int>(probs_.rows()); }
  int num_actions() const { return static_cast<int>(probs_.cols()); }
  double operator()(int s, int a) const { return probs_(s, a); }

 private:
  RowMatrix probs_;
};

// Softmax parameter table theta(s, a).
class SoftmaxPolicy {
 public:
  explicit SoftmaxPolicy(RowMatrix theta) : theta_(std::move(theta)) {}
  static SoftmaxPolicy Zeros(int num_states, int num_actions) {
    return SoftmaxPolicy(RowMatrix::Zero(num_states, num_actions));
  }

  const RowMatrix& theta() const { return theta_; }
  RowMatrix& mutable_theta() { return theta_; }
  int num_states() const { return static_cast<int>(theta_.rows()); }
  int num_actions() const { return static_cast<int>(theta_.cols()); }

  // Flat, state-major view of the parameters.
  Eigen::Map<const Vector> flat() const {
    return Eigen::Map<const Vector>(theta_.data(), theta_.size());
  }
  Eigen::Map<Vector> mutable_flat() {
    return Eigen::Map<Vector>(theta_.data(), theta_.size());
  }

 private:
  RowMatrix theta_;
};

// Critic iterates: differential values and the average-reward estimate.
struct ValueEstimate {
  Vector v;
  double j = 0.5;
};

// Smoothed operator estimates maintained alongside the iterates.
struct OperatorEstimates {
  Vector f;    // |S||A|, state-major
  Vector g_v;  // |S|
  double g_j = 0.0;
  Vector h;    // |S|

  static OperatorEstimates Zeros(int num_states, int num_actions);
};

// Bounds on the operator estimates implied by the critic ball radius.
struct OperatorBounds {
  double b_f;
  double b_g;
  double b_h;
};
OperatorBounds ComputeOperatorBounds(double b_v, double c_j);

enum class ScheduleMode { kPractical, kTheorySafe };

struct StepSizes {
  double lambda;
  double alpha;
  double beta;
  double xi;
};

// Base constants of the four 1/sqrt(k+1) step-size sequences.
class StepSchedule {
 public:
  // Throws std::invalid_argument if any constant is not positive, or if the
  // theory-safe ordering alpha0 <= xi0 <= beta0 <= lambda0 is violated.
  StepSchedule(double lambda0, double alpha0, double beta0, double xi0,
               ScheduleMode mode = ScheduleMode::kPractical);

  // (alpha0, beta0, xi0, lambda0) = (10, 0.1, 0.02, 1).
  static StepSchedule Practical();

  double lambda0() const { return lambda0_; }
  double alpha0() const { return alpha0_; }
  double beta0() const { return beta0_; }
  double xi0() const { return xi0_; }
  ScheduleMode mode() const { return mode_; }

  StepSizes At(std::int64_t k) const;

  bool operator==(const StepSchedule&) const = default;

 private:
  double lambda0_;
  double alpha0_;
  double beta0_;
  double xi0_;
  ScheduleMode mode_;
};

StepSizes ComputeStepSizes(const StepSchedule& schedule, std::int64_t k);

// Problem constants used to derive a schedule that satisfies the sufficient
// conditions of the finite-time analysis. All are user-supplied surrogates;
// nothing here is estimated from an environment.
struct LipschitzSurrogates {
  double l = 1.0;
  double l_f = 1.0;
  double l_g = 1.0;
  double l_h = 1.0;
  double l_v = 1.0;
  double delta = 0.5;  // contraction factor of mu -> nu^{pi,mu}, in (0, 1)
  double gamma = 0.5;  // negative-drift constant of the critic, in (0, 1]
  double rho = 1.0;    // herding constant
  int num_states = 2;
};

struct TheorySafePreset {
  StepSchedule schedule;
  double min_c_j;  // the critic gain must satisfy c_J >= 1 / gamma
};

// Takes every constant at its admissible upper bound (lambda0 = 1/4 first,
// then beta0, xi0, alpha0), then enforces the ordering.
TheorySafePreset MakeTheorySafeSchedule(const LipschitzSurrogates& c);

struct SolverConfig {
  double b_v = 40.0;
  double c_j = 10.0;
  StepSchedule schedule = StepSchedule::Practical();
  std::int64_t max_iters = 200000;
  std::int64_t metric_every = 100;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on b_v <= 0, c_j <= 0, max_iters < 0 or
  // metric_every < 1. A zero iteration budget is a valid empty run.
  void Validate() const;

  // Default critic radius 4|S|.
  static SolverConfig ForStates(int num_states);

  bool operator==(const SolverConfig&) const = default;
};

// pi_theta(.|s) for every s, with row-max subtraction.
PolicyTable SoftmaxTable(const SoftmaxPolicy& theta);

// Softmax of one row of theta, written into `out` (size |A|).
void SoftmaxRow(const SoftmaxPolicy& theta, int s, Eigen::Ref<Vector> out);

// grad_theta log pi_theta(a|s), flat state-major of length |S||A|.
Vector LogPolicyGradient(const SoftmaxPolicy& theta, int s, int a);

// Euclidean projection onto the probability simplex.
MeanField ProjectSimplex(const Vector& v);

Vector ProjectL2Ball(const Vector& v, double radius);

inline double ClampUnit(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace herd_mfg

#endif  // HERD_MFG_CORE_H_
