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

#ifndef HERD_MFG_RNG_H_
#define HERD_MFG_RNG_H_

#include <cstdint>

#include "herd_mfg/core.h"

namespace herd_mfg {

// Counter-based generator. The i-th 64-bit output of a stream with key K is
//
//   Mix64(K + (i + 1) * 0x9E3779B97F4A7C15)
//
// where Mix64 is the SplitMix64 finalizer (Steele, Lea & Flood 2014). This is
// exactly SplitMix64 seeded with K, written so that the output is a pure
// function of (key, counter). The key of a stream is Mix64(seed) xor
// Mix64(Mix64(stream + 1)). Doubles take the top 53 bits, normals use the
// Marsaglia polar method. No std:: distribution is involved, so sequences
// depend only on IEEE-754 arithmetic and the platform's log/sqrt.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t NextU64();
  // Uniform on [0, 1).
  double Uniform();
  // Uniform integer in [0, n).
  int UniformInt(int n);
  double Normal();
  // Index drawn from a finite distribution by inverse CDF. Throws
  // std::logic_error if `probs` has a negative or non-finite entry, or a total
  // that is not 1 within 1e-9.
  int Categorical(const Eigen::Ref<const Vector>& probs);
  // Uniform point on the simplex (flat Dirichlet).
  Vector SimplexPoint(int n);

  std::uint64_t counter() const { return counter_; }
  bool operator==(const Rng&) const = default;

  static std::uint64_t Mix64(std::uint64_t z);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// Stream identifiers, so environment construction and solver sampling never
// share a sequence even when seeded with the same integer.
inline constexpr std::uint64_t kSolverStream = 0;
inline constexpr std::uint64_t kEnvironmentStream = 1;
inline constexpr std::uint64_t kCheckerStream = 2;

}  // namespace herd_mfg

#endif  // HERD_MFG_RNG_H_
