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

// Closed-form bound on what the k+1 blinded tensors reveal about any one
// input.
//
// Preconditions: every input is normalized so each scalar lies in [-C1, C1],
// the masking coefficients satisfy alpha_lo <= |alpha| <= alpha_hi, and the
// noise is iid Gaussian with variance sigma^2 (any mean; the bound is
// mean invariant).  Each blinded tensor is, entrywise, a bounded combination
// of inputs plus independent Gaussian noise, and a Gaussian channel argument
// gives per equation
//
//   I(X^j ; Xbar^i)  <=  k^2 C1^2 alpha_hi^2 / (alpha_lo^2 sigma^2)   nats,
//
// because the non-noise part has variance at most k^2 C1^2 alpha_hi^2 and the
// effective noise variance is at least alpha_lo^2 sigma^2, with
// I(X; X + R) <= Var(X) / (2 sigma_R^2) <= Var(X) / sigma_R^2.  Summing the
// k+1 equations:
//
//   I(X^j ; Xbar^1 .. Xbar^{k+1})  <=  k^2 (k+1) C1^2 * (alpha_hi/alpha_lo)^2
//                                      / sigma^2.
//
// The bound is monotone decreasing in sigma^2, so calibration inverts it
// exactly.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "darknight/error.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

struct LeakageParams {
  std::size_t k = 0;          // batch size
  double c1 = 1.0;            // entrywise input bound after normalization
  double alpha_ratio_sq = 1.0;  // (alpha_hi / alpha_lo)^2 >= 1
  double sigma_sq = 0.0;      // noise variance
};

struct LeakageBound {
  double nats = 0.0;
  double bits() const { return nats / std::numbers::ln2; }
};

namespace detail {

inline void validate_leakage(std::size_t k, double c1, double alpha_ratio_sq,
                             double sigma_sq) {
  if (k == 0) throw ParamError("leakage bound needs k >= 1");
  if (!(c1 >= 0.0) || !std::isfinite(c1)) {
    throw ParamError("c1 must be finite and non-negative");
  }
  if (!(alpha_ratio_sq >= 1.0) || !std::isfinite(alpha_ratio_sq)) {
    throw ParamError("alpha ratio squared must be finite and >= 1");
  }
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq)) {
    throw ParamError("sigma^2 must be finite and positive");
  }
}

}  // namespace detail

// k^2 (k+1) C1^2 alpha_ratio_sq / sigma^2, in nats.
inline LeakageBound leakage_bound(const LeakageParams& p) {
  detail::validate_leakage(p.k, p.c1, p.alpha_ratio_sq, p.sigma_sq);
  const double kd = double(p.k);
  const double numerator = kd * kd * (kd + 1.0) * p.c1 * p.c1 * p.alpha_ratio_sq;
  return LeakageBound{numerator / p.sigma_sq};
}

// Smallest sigma^2 whose bound does not exceed target_nats.  Exact inverse of
// leakage_bound in sigma^2.
inline double calibrate_sigma(double target_nats, std::size_t k, double c1,
                              double alpha_ratio_sq) {
  if (!(target_nats > 0.0) || !std::isfinite(target_nats)) {
    throw ParamError("target bound must be finite and positive");
  }
  detail::validate_leakage(k, c1, alpha_ratio_sq, 1.0);
  const double kd = double(k);
  const double numerator = kd * kd * (kd + 1.0) * c1 * c1 * alpha_ratio_sq;
  return numerator / target_nats;
}

enum class NormKind { kL1, kL2 };

struct NormalizedInputs {
  std::vector<Tensor> inputs;
  double c1 = 0.0;  // max |entry| over all scaled inputs, always <= 1
};

// Scales each input to unit norm and reports the resulting entrywise bound.
// A zero tensor cannot be normalized.
inline NormalizedInputs normalize_inputs(const std::vector<Tensor>& inputs,
                                         NormKind kind) {
  if (inputs.empty()) throw ParamError("normalize_inputs: empty batch");
  NormalizedInputs out;
  out.inputs.reserve(inputs.size());
  for (const Tensor& x : inputs) {
    const double norm = kind == NormKind::kL1 ? l1_norm(x) : l2_norm(x);
    if (!(norm > 0.0)) {
      throw NormalizationError("cannot normalize a zero tensor");
    }
    Tensor scaled = scale(x, 1.0 / norm);
    out.c1 = std::max(out.c1, max_abs(scaled));
    out.inputs.push_back(std::move(scaled));
  }
  return out;
}

}  // namespace darknight
