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

#ifndef HERD_MFG_ENVIRONMENT_H_
#define HERD_MFG_ENVIRONMENT_H_

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "herd_mfg/core.h"
#include "herd_mfg/rng.h"

namespace herd_mfg {

// Everything needed to rebuild an environment bit-exactly.
struct EnvDescriptor {
  std::string family;
  int n_states = 0;
  int n_actions = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> overrides;

  bool operator==(const EnvDescriptor&) const = default;
};

// A finite mean field game: transition P^mu(.|s,a) and reward r(s,a,mu) in
// [0, 1]. Implementations are immutable after construction.
class TabularMfg {
 public:
  virtual ~TabularMfg() = default;

  int num_states() const { return descriptor_.n_states; }
  int num_actions() const { return descriptor_.n_actions; }
  const EnvDescriptor& descriptor() const { return descriptor_; }

  // Next-state distribution; throws std::out_of_range on bad indices and
  // std::invalid_argument if mu has the wrong dimension.
  Vector Transition(int s, int a, const MeanField& mu) const;
  double Reward(int s, int a, const MeanField& mu) const;

  // True when P^mu does not depend on mu.
  virtual bool KernelIndependentOfMeanField() const = 0;
  // True when both kernel and reward ignore mu, i.e. the game is an MDP.
  virtual bool IsMdp() const { return false; }

 protected:
  explicit TabularMfg(EnvDescriptor descriptor);

  virtual Vector DoTransition(int s, int a, const MeanField& mu) const = 0;
  virtual double DoReward(int s, int a, const MeanField& mu) const = 0;

 private:
  void CheckArgs(int s, int a, const MeanField& mu) const;

  EnvDescriptor descriptor_;
};

// One transition of the sample path.
struct SampleStep {
  int s;
  int a;
  double r;
  int s_next;
};

// Draws a ~ pi(.|s), then s' ~ P^mu(.|s,a). Throws std::logic_error if the
// environment returns an invalid distribution or reward.
SampleStep SampleTransition(const TabularMfg& env, int s,
                            const PolicyTable& policy, const MeanField& mu,
                            Rng& rng);

// Same as SampleTransition with the action distribution given directly.
SampleStep SampleTransitionFromRow(const TabularMfg& env, int s,
                                   const Eigen::Ref<const Vector>& action_probs,
                                   const MeanField& mu, Rng& rng);

// Row-normalized kernel with i.i.d. standard-uniform weights, laid out as
// kernel[s * |A| + a] = P(.|s,a).
std::vector<Vector> RandomKernel(int n_states, int n_actions, Rng& rng);

// r(s,a,mu) = clamp(q * mu(s)^p) with a mean-field-independent kernel.
std::unique_ptr<TabularMfg> MakeExample1Env(int n_states, int n_actions,
                                            double q, double p_exp,
                                            std::uint64_t kernel_seed);

// Two states, two actions; a1 (a2) leads to s1 (s2) with probability `p`,
// r(s,a,mu) = mu(s). p defaults to 3/4.
std::unique_ptr<TabularMfg> MakeTwoStateEnv(double p = 0.75);

// States {s0, s1}, actions {move = 0, stay = 1}.
std::unique_ptr<TabularMfg> MakeExample2Env();

enum class SyntheticKind { kEnv1, kEnv2, kEnv3 };

// Randomly generated environments with frozen reward noise of scale
// `noise_scale` (0.01 by default).
std::unique_ptr<TabularMfg> MakeSyntheticEnv(SyntheticKind kind, int n,
                                             std::uint64_t seed,
                                             double noise_scale = 0.01);

struct BeachBarParams {
  double success_prob = 0.9;
  double crowd_weight = 0.5;
};

// Ring of `n_states` (5) positions with the bar at the center; actions
// {left, stay, right}.
std::unique_ptr<TabularMfg> MakeBeachBarEnv(int n_states = 5,
                                            BeachBarParams params = {});

// Random average-reward MDP viewed as a mean-field-independent game:
// uniform-normalized kernel and rewards uniform on [0, 1].
std::unique_ptr<TabularMfg> MakeRandomMdp(int n_states, int n_actions,
                                          std::uint64_t seed);

// Families accepted by MakeEnvironment.
std::vector<std::string> EnvironmentFamilies();

// Rebuilds an environment; throws std::invalid_argument on unknown families,
// bad sizes or unknown override keys.
std::unique_ptr<TabularMfg> MakeEnvironment(const EnvDescriptor& descriptor);

// Descriptor <-> JSON text: {"family", "n_states", "n_actions", "seed",
// "overrides"}.
std::string DescriptorToJson(const EnvDescriptor& descriptor);
EnvDescriptor DescriptorFromJson(const std::string& text);

}  // namespace herd_mfg

#endif  // HERD_MFG_ENVIRONMENT_H_
