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

#include "herd_mfg/core.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace herd_mfg {
namespace {

void CheckDistribution(const Eigen::Ref<const Vector>& p, double tol,
                       const char* what) {
  if (p.size() == 0) {
    throw std::invalid_argument(std::string(what) + ": empty distribution");
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p(i)) || p(i) < 0.0) {
      throw std::invalid_argument(std::string(what) + ": entry " +
                                  std::to_string(i) + " is " +
                                  std::to_string(p(i)));
    }
  }
  const double sum = p.sum();
  if (std::abs(sum - 1.0) > tol) {
    throw std::invalid_argument(std::string(what) + ": entries sum to " +
                                std::to_string(sum));
  }
}

}  // namespace

MeanField::MeanField(Vector probs, double tol) : probs_(std::move(probs)) {
  CheckDistribution(probs_, tol, "MeanField");
}

MeanField MeanField::Uniform(int num_states) {
  return MeanField(Vector::Constant(num_states, 1.0 / num_states));
}

MeanField MeanField::Vertex(int num_states, int s) {
  if (s < 0 || s >= num_states) {
    throw std::out_of_range("MeanField::Vertex: state out of range");
  }
  Vector p = Vector::Zero(num_states);
  p(s) = 1.0;
  return MeanField(std::move(p));
}

PolicyTable::PolicyTable(RowMatrix probs, double tol)
    : probs_(std::move(probs)) {
  if (probs_.rows() == 0 || probs_.cols() == 0) {
    throw std::invalid_argument("PolicyTable: empty table");
  }
  for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
    Vector row = probs_.row(s).transpose();
    CheckDistribution(row, tol, "PolicyTable row");
  }
}

PolicyTable PolicyTable::Uniform(int num_states, int num_actions) {
  return PolicyTable(
      RowMatrix::Constant(num_states, num_actions, 1.0 / num_actions));
}

PolicyTable PolicyTable::Deterministic(int num_states, int num_actions,
                                       int action) {
  RowMatrix p = RowMatrix::Zero(num_states, num_actions);
  p.col(action).setOnes();
  return PolicyTable(std::move(p));
}

OperatorEstimates OperatorEstimates::Zeros(int num_states, int num_actions) {
  OperatorEstimates ops;
  ops.f = Vector::Zero(static_cast<Eigen::Index>(num_states) * num_actions);
  ops.g_v = Vector::Zero(num_states);
  ops.g_j = 0.0;
  ops.h = Vector::Zero(num_states);
  return ops;
}

OperatorBounds ComputeOperatorBounds(double b_v, double c_j) {
  return {b_v + 1.0, 2.0 * (b_v + c_j + 2.0), 2.0};
}

StepSchedule::StepSchedule(double lambda0, double alpha0, double beta0,
                           double xi0, ScheduleMode mode)
    : lambda0_(lambda0),
      alpha0_(alpha0),
      beta0_(beta0),
      xi0_(xi0),
      mode_(mode) {
  for (double c : {lambda0, alpha0, beta0, xi0}) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw std::invalid_argument("StepSchedule: base constants must be > 0");
    }
  }
  if (mode == ScheduleMode::kTheorySafe &&
      !(alpha0 <= xi0 && xi0 <= beta0 && beta0 <= lambda0)) {
    throw std::invalid_argument(
        "StepSchedule: theory-safe mode requires alpha0 <= xi0 <= beta0 <= "
        "lambda0");
  }
}

StepSchedule StepSchedule::Practical() {
  return StepSchedule(/*lambda0=*/1.0, /*alpha0=*/10.0, /*beta0=*/0.1,
                      /*xi0=*/0.02, ScheduleMode::kPractical);
}

StepSizes StepSchedule::At(std::int64_t k) const {
  if (k < 0) throw std::invalid_argument("StepSchedule: negative iteration");
  const double root = std::sqrt(static_cast<double>(k) + 1.0);
  return {lambda0_ / root, alpha0_ / root, beta0_ / root, xi0_ / root};
}

StepSizes ComputeStepSizes(const StepSchedule& schedule, std::int64_t k) {
  return schedule.At(k);
}

TheorySafePreset MakeTheorySafeSchedule(const LipschitzSurrogates& c) {
  if (!(c.delta > 0.0 && c.delta < 1.0) || !(c.gamma > 0.0) ||
      !(c.rho > 0.0) || c.num_states < 1) {
    throw std::invalid_argument(
        "MakeTheorySafeSchedule: need delta in (0,1), gamma > 0, rho > 0");
  }
  const double lf2 = c.l_f * c.l_f;
  const double lg2 = c.l_g * c.l_g;
  const double lh2 = c.l_h * c.l_h;
  const double lv2 = c.l_v * c.l_v;
  const double one_minus_delta = 1.0 - c.delta;
  const double n = c.num_states;
  const double lipschitz_sum = lf2 + lg2 + lh2 + lv2 + c.l * c.l / one_minus_delta;

  const double lambda0 = 0.25;

  const double beta0 = std::min({lambda0 / (72.0 * n * lg2 + 36.0 * lf2 +
                                            8.0 / c.gamma),
                                 c.gamma / (4.0 * lg2),
                                 one_minus_delta / (2.0 * lh2)});

  const double xi0 = std::min(
      lambda0 / (64.0 * (lh2 * lf2 + lg2 + lv2 / c.gamma + 1.0 / one_minus_delta)),
      one_minus_delta * c.gamma * beta0 /
          (6912.0 * (lf2 * lf2 * lv2 + lf2 * lg2 * lh2 * lv2 +
                     lf2 * lh2 * lh2 * lv2 + lv2)));

  const double c_xi = std::min(
      {one_minus_delta / (32.0 * c.rho * lf2), one_minus_delta / (4.0 * c.rho),
       c.l_h / (2.0 * c.l_f * c.l_v),
       one_minus_delta / (16.0 * c.l * c.l_f * c.l_v)});
  const double c_beta = std::min(
      {c.gamma / 4.0, c.rho * c.gamma / (512.0 * lipschitz_sum),
       std::sqrt(c.gamma /
                 (3456.0 * n *
                  (lf2 * lf2 * lg2 * lg2 + lf2 * lh2 + c.rho * lf2 +
                   lv2 / c.gamma + c.l * c.l * lf2 * one_minus_delta))),
       c.gamma / (2.0 * c.rho)});

  const double alpha0 =
      std::min({lambda0 / (192.0 * (lipschitz_sum + c.rho)), c_beta * beta0,
                c_xi * xi0});

  // alpha0 <= xi0 <= beta0 is required on top of the individual bounds.
  const double xi_ordered = std::min(xi0, beta0);
  const double alpha_ordered = std::min(alpha0, xi_ordered);
  return {StepSchedule(lambda0, alpha_ordered, beta0, xi_ordered,
                       ScheduleMode::kTheorySafe),
          1.0 / c.gamma};
}

void SolverConfig::Validate() const {
  if (!(b_v > 0.0)) throw std::invalid_argument("SolverConfig: b_v must be > 0");
  if (!(c_j > 0.0)) throw std::invalid_argument("SolverConfig: c_j must be > 0");
  if (max_iters < 0) {
    throw std::invalid_argument("SolverConfig: max_iters must be >= 0");
  }
  if (metric_every < 1) {
    throw std::invalid_argument("SolverConfig: metric_every must be >= 1");
  }
}

SolverConfig SolverConfig::ForStates(int num_states) {
  SolverConfig config;
  config.b_v = 4.0 * num_states;
  return config;
}

void SoftmaxRow(const SoftmaxPolicy& theta, int s, Eigen::Ref<Vector> out) {
  const auto row = theta.theta().row(s);
  const double row_max = row.maxCoeff();
  double total = 0.0;
  for (Eigen::Index a = 0; a < row.size(); ++a) {
    out(a) = std::exp(row(a) - row_max);
    total += out(a);
  }
  out /= total;
}

PolicyTable SoftmaxTable(const SoftmaxPolicy& theta) {
  if (!theta.theta().allFinite()) {
    throw std::invalid_argument("SoftmaxTable: non-finite parameters");
  }
  RowMatrix probs(theta.num_states(), theta.num_actions());
  Vector row(theta.num_actions());
  for (int s = 0; s < theta.num_states(); ++s) {
    SoftmaxRow(theta, s, row);
    probs.row(s) = row.transpose();
  }
  return PolicyTable(std::move(probs));
}

Vector LogPolicyGradient(const SoftmaxPolicy& theta, int s, int a) {
  const int num_states = theta.num_states();
  const int num_actions = theta.num_actions();
  if (s < 0 || s >= num_states || a < 0 || a >= num_actions) {
    throw std::out_of_range("LogPolicyGradient: (s, a) out of range");
  }
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(num_states) * num_actions);
  auto block = grad.segment(static_cast<Eigen::Index>(s) * num_actions,
                            num_actions);
  SoftmaxRow(theta, s, block);
  block = -block;
  block(a) += 1.0;
  return grad;
}

MeanField ProjectSimplex(const Vector& v) {
  const Eigen::Index n = v.size();
  if (n == 0) throw std::invalid_argument("ProjectSimplex: empty vector");
  if (!v.allFinite()) {
    throw std::invalid_argument("ProjectSimplex: non-finite input");
  }
  std::vector<double> sorted(v.data(), v.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  double prefix = 0.0;
  double threshold = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    prefix += sorted[j];
    const double candidate = (prefix - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - candidate > 0.0) threshold = candidate;
  }
  Vector out = (v.array() - threshold).max(0.0).matrix();
  // Rounding in the prefix sums can leave the total a few ulps off one.
  out /= out.sum();
  return MeanField(std::move(out));
}

Vector ProjectL2Ball(const Vector& v, double radius) {
  if (!(radius > 0.0)) {
    throw std::invalid_argument("ProjectL2Ball: radius must be > 0");
  }
  const double norm = v.norm();
  if (norm <= radius) return v;
  return v * (radius / norm);
}

}  // namespace herd_mfg
