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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "darknight/leakage.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"

namespace {

using darknight::LeakageBound;
using darknight::LeakageParams;
using darknight::NormKind;
using darknight::Tensor;

double rel_err(double got, double want) {
  return std::abs(got - want) / std::abs(want);
}

// Reference operating point used throughout: batches of four, inputs
// normalized to |entry| <= 1, masking coefficient spread (hi/lo)^2 = 10.
LeakageParams reference_point(double sigma_sq) {
  return LeakageParams{4, 1.0, 10.0, sigma_sq};
}

TEST(Bound, PinnedReferenceValues) {
  // k^2 (k+1) c1^2 ratio_sq = 16 * 5 * 1 * 10 = 800 nats * sigma^2.
  EXPECT_LE(rel_err(darknight::leakage_bound(reference_point(1.0e8)).nats,
                    8.0e-6),
            1e-12);
  EXPECT_LE(rel_err(darknight::leakage_bound(reference_point(4.0e8)).nats,
                    2.0e-6),
            1e-12);
  EXPECT_LE(rel_err(darknight::leakage_bound(reference_point(8.0e8)).nats,
                    1.0e-6),
            1e-12);
}

TEST(Bound, LargestSigmaRowAgreesToFifteenPercent) {
  // The published operating table quotes 0.8e-6 nats for sigma^2 = 9e8.  The
  // closed form gives 800 / 9e8 = 8.889e-7, an 11 percent gap consistent with
  // one-significant-figure rounding in the table.  Pin both facts.
  const double got = darknight::leakage_bound(reference_point(9.0e8)).nats;
  EXPECT_LE(rel_err(got, 800.0 / 9.0e8), 1e-12);
  EXPECT_LE(rel_err(got, 0.8e-6), 0.15);
  EXPECT_GT(rel_err(got, 0.8e-6), 0.10);  // the gap is real, not roundoff
}

TEST(Bound, KnownDiscrepantRows) {
  // Two quoted rows with non-zero noise means disagree with the closed form
  // by exactly a factor of ten (a decimal slip in the source table): the
  // formula gives 5e-5 and 3.2e-5 where 5e-4 and 3.2e-4 are quoted.  We pin
  // the computed values and the size of the disagreement rather than
  // reproducing numbers the formula contradicts.  The noise means (4e3 and
  // 1e4) do not enter: the bound is mean invariant.
  const double row_a = darknight::leakage_bound(reference_point(1.6e7)).nats;
  EXPECT_LE(rel_err(row_a, 5.0e-5), 1e-12);
  EXPECT_LE(rel_err(row_a * 10.0, 5.0e-4), 1e-12);

  const double row_b = darknight::leakage_bound(reference_point(2.5e7)).nats;
  EXPECT_LE(rel_err(row_b, 3.2e-5), 1e-12);
  EXPECT_LE(rel_err(row_b * 10.0, 3.2e-4), 1e-12);
}

TEST(Bound, TwoRouteDerivationAgrees) {
  // Route 1: library closed form.  Route 2: sum the per-equation Gaussian
  // channel bounds, k^2 c1^2 ratio_sq / sigma^2 each, over k+1 equations.
  for (std::size_t k = 1; k <= 8; ++k) {
    const LeakageParams p{k, 0.7, 3.5, 2.0e6};
    const double per_eq =
        double(k) * double(k) * p.c1 * p.c1 * p.alpha_ratio_sq / p.sigma_sq;
    const double summed = double(k + 1) * per_eq;
    EXPECT_LE(rel_err(darknight::leakage_bound(p).nats, summed), 1e-12)
        << "k=" << k;
  }
}

TEST(Bound, BitsAreNatsOverLn2) {
  const LeakageBound b = darknight::leakage_bound(reference_point(8.0e8));
  EXPECT_LE(rel_err(b.bits(), b.nats / std::log(2.0)), 1e-12);
}

TEST(Bound, MonotoneInEveryParameter) {
  const LeakageParams base{4, 1.0, 10.0, 1.0e8};
  const double b0 = darknight::leakage_bound(base).nats;

  LeakageParams p = base;
  p.sigma_sq *= 2.0;
  EXPECT_LT(darknight::leakage_bound(p).nats, b0);

  p = base;
  p.k += 1;
  EXPECT_GT(darknight::leakage_bound(p).nats, b0);

  p = base;
  p.c1 *= 2.0;
  EXPECT_GT(darknight::leakage_bound(p).nats, b0);

  p = base;
  p.alpha_ratio_sq *= 2.0;
  EXPECT_GT(darknight::leakage_bound(p).nats, b0);
}

TEST(Bound, RejectsInvalidParameters) {
  EXPECT_THROW(darknight::leakage_bound({0, 1.0, 1.0, 1.0}),
               darknight::ParamError);
  EXPECT_THROW(darknight::leakage_bound({2, -1.0, 1.0, 1.0}),
               darknight::ParamError);
  EXPECT_THROW(darknight::leakage_bound({2, 1.0, 0.5, 1.0}),
               darknight::ParamError);
  EXPECT_THROW(darknight::leakage_bound({2, 1.0, 1.0, 0.0}),
               darknight::ParamError);
  EXPECT_THROW(darknight::leakage_bound({2, 1.0, 1.0, -5.0}),
               darknight::ParamError);
}

TEST(Calibrate, ExactInverseOfBound) {
  for (double target : {1.0e-6, 8.0e-6, 3.3e-4, 0.5}) {
    const double sigma_sq = darknight::calibrate_sigma(target, 4, 1.0, 10.0);
    const LeakageParams p{4, 1.0, 10.0, sigma_sq};
    EXPECT_LE(rel_err(darknight::leakage_bound(p).nats, target), 1e-12);
  }
  // The reference point numbers read back: 1e-6 needs sigma^2 = 8e8.
  EXPECT_LE(rel_err(darknight::calibrate_sigma(1.0e-6, 4, 1.0, 10.0), 8.0e8),
            1e-12);
}

TEST(Calibrate, RejectsInvalidTargets) {
  EXPECT_THROW(darknight::calibrate_sigma(0.0, 4, 1.0, 10.0),
               darknight::ParamError);
  EXPECT_THROW(darknight::calibrate_sigma(-1.0, 4, 1.0, 10.0),
               darknight::ParamError);
  EXPECT_THROW(darknight::calibrate_sigma(1.0, 0, 1.0, 10.0),
               darknight::ParamError);
}

TEST(Normalize, L2GivesUnitNormsAndEntryBound) {
  darknight::CounterRng rng(301);
  std::vector<Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(rng.uniform_tensor({8}, -5.0, 5.0));
  const auto out = darknight::normalize_inputs(xs, NormKind::kL2);
  ASSERT_EQ(out.inputs.size(), 3u);
  for (const Tensor& x : out.inputs) {
    EXPECT_NEAR(darknight::l2_norm(x), 1.0, 1e-12);
  }
  EXPECT_GT(out.c1, 0.0);
  EXPECT_LE(out.c1, 1.0 + 1e-12);
  // c1 is the max entry magnitude over the scaled batch.
  double want = 0.0;
  for (const Tensor& x : out.inputs) {
    want = std::max(want, darknight::max_abs(x));
  }
  EXPECT_DOUBLE_EQ(out.c1, want);
}

TEST(Normalize, L1GivesUnitNorms) {
  darknight::CounterRng rng(302);
  std::vector<Tensor> xs = {rng.uniform_tensor({4, 4}, -2.0, 2.0)};
  const auto out = darknight::normalize_inputs(xs, NormKind::kL1);
  EXPECT_NEAR(darknight::l1_norm(out.inputs[0]), 1.0, 1e-12);
}

TEST(Normalize, ZeroTensorRejected) {
  std::vector<Tensor> xs = {Tensor({3})};
  EXPECT_THROW(darknight::normalize_inputs(xs, NormKind::kL2),
               darknight::NormalizationError);
  EXPECT_THROW(darknight::normalize_inputs({}, NormKind::kL2),
               darknight::ParamError);
}

}  // namespace
