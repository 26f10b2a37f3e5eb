// Copyright 2026 The DarKnight Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "darknight/error.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

// SplitMix64 finalizer: a bijective mix of a 64-bit word.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based SplitMix64 stream: output i is splitmix64(seed + i * golden).
// Stateless in principle, so any draw is reproducible from (seed, counter),
// and independent streams are derived by re-keying.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() { return at(counter_++); }

  std::uint64_t at(std::uint64_t counter) const {
    return splitmix64(seed_ + (counter + 1) * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Standard normal via Box-Muller; the second variate of each pair is
  // cached.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    double u2 = next_unit();
    // Guard against log(0).
    while (u1 <= 0.0) u1 = next_unit();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  double next_gaussian(double mean, double stddev) {
    return mean + stddev * next_gaussian();
  }

  Tensor gaussian_tensor(const std::vector<std::size_t>& shape, double mean,
                         double stddev) {
    Tensor t{std::vector<std::size_t>(shape)};
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = next_gaussian(mean, stddev);
    }
    return t;
  }

  Tensor uniform_tensor(const std::vector<std::size_t>& shape, double lo,
                        double hi) {
    Tensor t{std::vector<std::size_t>(shape)};
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = next_uniform(lo, hi);
    return t;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic sub-seed derivation so that per-layer and per-batch streams
// never overlap.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(root ^ 0x5851f42d4c957f2dULL);
  s = splitmix64(s ^ splitmix64(a ^ 0x14057b7ef767814fULL));
  s = splitmix64(s ^ splitmix64(b ^ 0x27bb2ee687b0b0fdULL));
  s = splitmix64(s ^ splitmix64(c ^ 0xb504f333f9de6484ULL));
  return s;
}

}  // namespace darknight
