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

#include "herd_mfg/rng.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace herd_mfg {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace

std::uint64_t Rng::Mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(Mix64(seed) ^ Mix64(Mix64(stream + 1))) {}

std::uint64_t Rng::NextU64() {
  ++counter_;
  return Mix64(key_ + counter_ * kGolden);
}

double Rng::Uniform() {
  return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
}

int Rng::UniformInt(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::UniformInt: n must be > 0");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = NextU64();
  } while (x >= limit);
  return static_cast<int>(x % bound);
}

double Rng::Normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u, v, s;
  do {
    u = 2.0 * Uniform() - 1.0;
    v = 2.0 * Uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * scale;
  has_spare_normal_ = true;
  return u * scale;
}

int Rng::Categorical(const Eigen::Ref<const Vector>& probs) {
  double total = 0.0;
  int last_positive = -1;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (!(probs(i) >= 0.0) || !std::isfinite(probs(i))) {
      throw std::logic_error("Rng::Categorical: invalid probability at " +
                             std::to_string(i));
    }
    if (probs(i) > 0.0) last_positive = static_cast<int>(i);
    total += probs(i);
  }
  if (last_positive < 0 || std::abs(total - 1.0) > 1e-9) {
    throw std::logic_error("Rng::Categorical: probabilities sum to " +
                           std::to_string(total));
  }
  const double u = Uniform();
  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    cumulative += probs(i);
    if (u < cumulative) return static_cast<int>(i);
  }
  return last_positive;
}

Vector Rng::SimplexPoint(int n) {
  Vector x(n);
  for (int i = 0; i < n; ++i) {
    // 1 - U is in (0, 1], so the log is finite.
    x(i) = -std::log(1.0 - Uniform());
  }
  return x / x.sum();
}

}  // namespace herd_mfg
