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

#include "herd_mfg/environment.h"

#include <cmath>
#include <cstdlib>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace herd_mfg {

TabularMfg::TabularMfg(EnvDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {
  if (descriptor_.n_states < 1 || descriptor_.n_actions < 1) {
    throw std::invalid_argument("TabularMfg: sizes must be positive");
  }
}

void TabularMfg::CheckArgs(int s, int a, const MeanField& mu) const {
  if (s < 0 || s >= num_states() || a < 0 || a >= num_actions()) {
    throw std::out_of_range("TabularMfg: (s, a) = (" + std::to_string(s) +
                            ", " + std::to_string(a) + ") out of range");
  }
  if (mu.size() != num_states()) {
    throw std::invalid_argument("TabularMfg: mean field has dimension " +
                                std::to_string(mu.size()));
  }
}

Vector TabularMfg::Transition(int s, int a, const MeanField& mu) const {
  CheckArgs(s, a, mu);
  return DoTransition(s, a, mu);
}

double TabularMfg::Reward(int s, int a, const MeanField& mu) const {
  CheckArgs(s, a, mu);
  return DoReward(s, a, mu);
}

SampleStep SampleTransitionFromRow(const TabularMfg& env, int s,
                                   const Eigen::Ref<const Vector>& action_probs,
                                   const MeanField& mu, Rng& rng) {
  if (s < 0 || s >= env.num_states()) {
    throw std::out_of_range("SampleTransition: state out of range");
  }
  const int a = rng.Categorical(action_probs);
  const double r = env.Reward(s, a, mu);
  if (!(r >= 0.0 && r <= 1.0)) {
    throw std::logic_error("SampleTransition: reward " + std::to_string(r) +
                           " outside [0, 1]");
  }
  const Vector next = env.Transition(s, a, mu);
  const int s_next = rng.Categorical(next);
  return {s, a, r, s_next};
}

SampleStep SampleTransition(const TabularMfg& env, int s,
                            const PolicyTable& policy, const MeanField& mu,
                            Rng& rng) {
  if (s < 0 || s >= policy.num_states()) {
    throw std::out_of_range("SampleTransition: state out of range");
  }
  const Vector row = policy.probs().row(s).transpose();
  return SampleTransitionFromRow(env, s, row, mu, rng);
}

std::vector<Vector> RandomKernel(int n_states, int n_actions, Rng& rng) {
  std::vector<Vector> kernel;
  kernel.reserve(static_cast<std::size_t>(n_states) * n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      Vector w(n_states);
      for (int t = 0; t < n_states; ++t) w(t) = rng.Uniform();
      kernel.push_back(w / w.sum());
    }
  }
  return kernel;
}

namespace {

// r(s,a,mu) = clamp(q mu(s)^p) over a fixed kernel. Covers the general
// power-reward family and the two-state instance.
class PowerRewardMfg final : public TabularMfg {
 public:
  PowerRewardMfg(EnvDescriptor d, std::vector<Vector> kernel, double q,
                 double p_exp)
      : TabularMfg(std::move(d)), kernel_(std::move(kernel)), q_(q),
        p_exp_(p_exp) {}

  bool KernelIndependentOfMeanField() const override { return true; }

 protected:
  Vector DoTransition(int s, int a, const MeanField&) const override {
    return kernel_[FlatIndex(s, a, num_actions())];
  }
  double DoReward(int s, int, const MeanField& mu) const override {
    return ClampUnit(q_ * std::pow(mu(s), p_exp_));
  }

 private:
  std::vector<Vector> kernel_;
  double q_;
  double p_exp_;
};

class Example2Mfg final : public TabularMfg {
 public:
  explicit Example2Mfg(EnvDescriptor d) : TabularMfg(std::move(d)) {}

  bool KernelIndependentOfMeanField() const override { return false; }

 protected:
  Vector DoTransition(int s, int a, const MeanField& mu) const override {
    Vector next(2);
    if (s == 1) {
      next << 0.5, 0.5;
    } else if (a == kMove) {
      const double m1 = mu(1);
      next << 1.0 / (1.0 + m1), m1 / (1.0 + m1);
    } else {
      next << 1.0, 0.0;
    }
    return next;
  }
  double DoReward(int s, int, const MeanField&) const override {
    return s == 1 ? 1.0 : 0.0;
  }

 private:
  static constexpr int kMove = 0;
};

class SyntheticMfg final : public TabularMfg {
 public:
  SyntheticMfg(EnvDescriptor d, SyntheticKind kind, double noise_scale)
      : TabularMfg(std::move(d)), kind_(kind), noise_scale_(noise_scale) {
    Rng rng(descriptor().seed, kEnvironmentStream);
    const int n = num_states();
    weights_.reserve(static_cast<std::size_t>(n) * num_actions());
    weight_sums_.reserve(static_cast<std::size_t>(n) * num_actions());
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < num_actions(); ++a) {
        Vector w(n);
        for (int t = 0; t < n; ++t) w(t) = rng.Uniform();
        weight_sums_.push_back(w.sum());
        weights_.push_back(std::move(w));
      }
    }
    reward_noise_.resize(n, num_actions());
    for (int s = 0; s < n; ++s) {
      for (int a = 0; a < num_actions(); ++a) reward_noise_(s, a) = rng.Normal();
    }
  }

  bool KernelIndependentOfMeanField() const override {
    return kind_ != SyntheticKind::kEnv3;
  }

  const RowMatrix& reward_noise() const { return reward_noise_; }

 protected:
  Vector DoTransition(int s, int a, const MeanField& mu) const override {
    const int idx = FlatIndex(s, a, num_actions());
    if (kind_ == SyntheticKind::kEnv3) {
      // mu sums to one, so the normalizer is sum(w) + 1.
      return (weights_[idx] + mu.probs()) / (weight_sums_[idx] + mu.probs().sum());
    }
    return weights_[idx] / weight_sums_[idx];
  }
  double DoReward(int s, int a, const MeanField& mu) const override {
    const double noise = noise_scale_ * reward_noise_(s, a);
    if (kind_ == SyntheticKind::kEnv2) return ClampUnit(1.0 - mu(s) + noise);
    return ClampUnit(mu(s) + noise);
  }

 private:
  SyntheticKind kind_;
  double noise_scale_;
  std::vector<Vector> weights_;
  std::vector<double> weight_sums_;
  RowMatrix reward_noise_;
};

class BeachBarMfg final : public TabularMfg {
 public:
  BeachBarMfg(EnvDescriptor d, BeachBarParams params)
      : TabularMfg(std::move(d)), params_(params), bar_(num_states() / 2) {}

  bool KernelIndependentOfMeanField() const override { return true; }

 protected:
  Vector DoTransition(int s, int a, const MeanField&) const override {
    const int n = num_states();
    Vector next = Vector::Zero(n);
    if (a == kStay) {
      next(s) = 1.0;
      return next;
    }
    const int target = (s + (a == kRight ? 1 : n - 1)) % n;
    next(target) += params_.success_prob;
    next(s) += 1.0 - params_.success_prob;
    return next;
  }
  double DoReward(int s, int, const MeanField& mu) const override {
    const int n = num_states();
    const int gap = std::abs(s - bar_);
    const int dist = std::min(gap, n - gap);
    const double max_dist = n / 2;
    const double position = 1.0 - dist / max_dist;
    const double w = params_.crowd_weight;
    return ClampUnit((position - w * mu(s) + w) / (1.0 + w));
  }

 private:
  static constexpr int kStay = 1;
  static constexpr int kRight = 2;
  BeachBarParams params_;
  int bar_;
};

class TableMdp final : public TabularMfg {
 public:
  TableMdp(EnvDescriptor d, std::vector<Vector> kernel, RowMatrix reward)
      : TabularMfg(std::move(d)), kernel_(std::move(kernel)),
        reward_(std::move(reward)) {}

  bool KernelIndependentOfMeanField() const override { return true; }
  bool IsMdp() const override { return true; }

 protected:
  Vector DoTransition(int s, int a, const MeanField&) const override {
    return kernel_[FlatIndex(s, a, num_actions())];
  }
  double DoReward(int s, int a, const MeanField&) const override {
    return reward_(s, a);
  }

 private:
  std::vector<Vector> kernel_;
  RowMatrix reward_;
};

double Override(const EnvDescriptor& d, const std::string& key,
                double fallback) {
  const auto it = d.overrides.find(key);
  return it == d.overrides.end() ? fallback : it->second;
}

void CheckOverrideKeys(const EnvDescriptor& d,
                       const std::set<std::string>& allowed) {
  for (const auto& [key, value] : d.overrides) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("environment '" + d.family +
                                  "': unknown override '" + key + "'");
    }
    if (!std::isfinite(value)) {
      throw std::invalid_argument("environment '" + d.family +
                                  "': override '" + key + "' is not finite");
    }
  }
}

void CheckSizes(const EnvDescriptor& d, int n_states, int n_actions) {
  if (d.n_states != n_states || d.n_actions != n_actions) {
    throw std::invalid_argument(
        "environment '" + d.family + "' requires n_states = " +
        std::to_string(n_states) + ", n_actions = " + std::to_string(n_actions));
  }
}

std::vector<Vector> TwoStateKernel(double p) {
  Vector toward_s1(2), toward_s2(2);
  toward_s1 << p, 1.0 - p;
  toward_s2 << 1.0 - p, p;
  // (s1,a1), (s1,a2), (s2,a1), (s2,a2)
  return {toward_s1, toward_s2, toward_s1, toward_s2};
}

}  // namespace

std::unique_ptr<TabularMfg> MakeExample1Env(int n_states, int n_actions,
                                            double q, double p_exp,
                                            std::uint64_t kernel_seed) {
  EnvDescriptor d{"example1", n_states, n_actions, kernel_seed, {}};
  if (q != 1.0) d.overrides["q"] = q;
  if (p_exp != 1.0) d.overrides["p_exp"] = p_exp;
  return MakeEnvironment(d);
}

std::unique_ptr<TabularMfg> MakeTwoStateEnv(double p) {
  EnvDescriptor d{"twostate", 2, 2, 0, {}};
  if (p != 0.75) d.overrides["p"] = p;
  return MakeEnvironment(d);
}

std::unique_ptr<TabularMfg> MakeExample2Env() {
  return MakeEnvironment({"example2", 2, 2, 0, {}});
}

std::unique_ptr<TabularMfg> MakeSyntheticEnv(SyntheticKind kind, int n,
                                             std::uint64_t seed,
                                             double noise_scale) {
  static const char* kNames[] = {"env1", "env2", "env3"};
  EnvDescriptor d{kNames[static_cast<int>(kind)], n, n, seed, {}};
  if (noise_scale != 0.01) d.overrides["noise_scale"] = noise_scale;
  return MakeEnvironment(d);
}

std::unique_ptr<TabularMfg> MakeBeachBarEnv(int n_states,
                                            BeachBarParams params) {
  EnvDescriptor d{"beach_bar", n_states, 3, 0, {}};
  if (params.success_prob != BeachBarParams{}.success_prob) {
    d.overrides["success_prob"] = params.success_prob;
  }
  if (params.crowd_weight != BeachBarParams{}.crowd_weight) {
    d.overrides["crowd_weight"] = params.crowd_weight;
  }
  return MakeEnvironment(d);
}

std::unique_ptr<TabularMfg> MakeRandomMdp(int n_states, int n_actions,
                                          std::uint64_t seed) {
  return MakeEnvironment({"random_mdp", n_states, n_actions, seed, {}});
}

std::vector<std::string> EnvironmentFamilies() {
  return {"example1", "twostate", "example2", "env1",
          "env2",     "env3",     "beach_bar", "random_mdp"};
}

std::unique_ptr<TabularMfg> MakeEnvironment(const EnvDescriptor& d) {
  if (d.n_states < 1 || d.n_actions < 1) {
    throw std::invalid_argument("environment '" + d.family +
                                "': sizes must be positive");
  }
  if (d.family == "example1") {
    CheckOverrideKeys(d, {"q", "p_exp"});
    const double q = Override(d, "q", 1.0);
    const double p_exp = Override(d, "p_exp", 1.0);
    if (!(q > 0.0) || !(p_exp > 0.0)) {
      throw std::invalid_argument("example1: q and p_exp must be > 0");
    }
    if (q > 1.0) {
      spdlog::warn("example1: q = {} > 1, rewards are clamped near simplex "
                   "vertices", q);
    }
    Rng rng(d.seed, kEnvironmentStream);
    return std::make_unique<PowerRewardMfg>(
        d, RandomKernel(d.n_states, d.n_actions, rng), q, p_exp);
  }
  if (d.family == "twostate") {
    CheckSizes(d, 2, 2);
    CheckOverrideKeys(d, {"p"});
    const double p = Override(d, "p", 0.75);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("twostate: p must lie in [0, 1]");
    }
    return std::make_unique<PowerRewardMfg>(d, TwoStateKernel(p), 1.0, 1.0);
  }
  if (d.family == "example2") {
    CheckSizes(d, 2, 2);
    CheckOverrideKeys(d, {});
    return std::make_unique<Example2Mfg>(d);
  }
  if (d.family == "env1" || d.family == "env2" || d.family == "env3") {
    if (d.n_states < 2) {
      throw std::invalid_argument(d.family + ": need at least 2 states");
    }
    CheckOverrideKeys(d, {"noise_scale"});
    const SyntheticKind kind = d.family == "env1"   ? SyntheticKind::kEnv1
                               : d.family == "env2" ? SyntheticKind::kEnv2
                                                    : SyntheticKind::kEnv3;
    return std::make_unique<SyntheticMfg>(d, kind,
                                          Override(d, "noise_scale", 0.01));
  }
  if (d.family == "beach_bar") {
    CheckSizes(d, 5, 3);
    CheckOverrideKeys(d, {"success_prob", "crowd_weight"});
    BeachBarParams params;
    params.success_prob = Override(d, "success_prob", params.success_prob);
    params.crowd_weight = Override(d, "crowd_weight", params.crowd_weight);
    if (!(params.success_prob >= 0.0 && params.success_prob <= 1.0) ||
        !(params.crowd_weight >= 0.0)) {
      throw std::invalid_argument(
          "beach_bar: need success_prob in [0, 1] and crowd_weight >= 0");
    }
    return std::make_unique<BeachBarMfg>(d, params);
  }
  if (d.family == "random_mdp") {
    CheckOverrideKeys(d, {});
    Rng rng(d.seed, kEnvironmentStream);
    auto kernel = RandomKernel(d.n_states, d.n_actions, rng);
    RowMatrix reward(d.n_states, d.n_actions);
    for (int s = 0; s < d.n_states; ++s) {
      for (int a = 0; a < d.n_actions; ++a) reward(s, a) = rng.Uniform();
    }
    return std::make_unique<TableMdp>(d, std::move(kernel), std::move(reward));
  }
  throw std::invalid_argument("unknown environment family '" + d.family + "'");
}

std::string DescriptorToJson(const EnvDescriptor& d) {
  nlohmann::ordered_json j;
  j["family"] = d.family;
  j["n_states"] = d.n_states;
  j["n_actions"] = d.n_actions;
  j["seed"] = d.seed;
  j["overrides"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : d.overrides) j["overrides"][key] = value;
  return j.dump();
}

EnvDescriptor DescriptorFromJson(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("environment descriptor: ") +
                                e.what());
  }
  if (!j.is_object()) {
    throw std::invalid_argument("environment descriptor: expected an object");
  }
  EnvDescriptor d;
  try {
    d.family = j.at("family").get<std::string>();
    d.n_states = j.at("n_states").get<int>();
    d.n_actions = j.at("n_actions").get<int>();
    d.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("overrides")) {
      for (const auto& [key, value] : j.at("overrides").items()) {
        d.overrides[key] = value.get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("environment descriptor: ") +
                                e.what());
  }
  return d;
}

}  // namespace herd_mfg
