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

// Acceptance gate.  One test per acceptance criterion; each prints a single
//   [ACCEPT] <criterion>: PASS|FAIL
// line whatever happens inside, so the gate can be read off the log directly.
// Tolerances and runtime budgets are pinned here and must not be loosened.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "darknight/darknight.hpp"

namespace {

using darknight::BilinearOp;
using darknight::BlindingKey;
using darknight::BoundaryObserver;
using darknight::CodedBatch;
using darknight::CounterRng;
using darknight::CrossingKind;
using darknight::Dataset;
using darknight::ForwardResult;
using darknight::GradCodec;
using darknight::LayerSpec;
using darknight::LeakageParams;
using darknight::LossKind;
using darknight::Model;
using darknight::NoiseSpec;
using darknight::TamperPolicy;
using darknight::Tensor;
using darknight::TrainConfig;
using darknight::TrainResult;
using darknight::TrustedContext;
using darknight::UntrustedContext;

class Acceptance : public ::testing::Test {
 protected:
  void SetUp() override { start_ = std::chrono::steady_clock::now(); }

  void TearDown() override {
    const char* name =
        ::testing::UnitTest::GetInstance()->current_test_info()->name();
    std::printf("[ACCEPT] %s: %s\n", name, HasFailure() ? "FAIL" : "PASS");
    std::fflush(stdout);
  }

  double elapsed_seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::vector<Tensor> random_batch(std::size_t k,
                                 const std::vector<std::size_t>& shape,
                                 CounterRng& rng) {
  std::vector<Tensor> xs;
  for (std::size_t i = 0; i < k; ++i) {
    xs.push_back(rng.uniform_tensor(shape, -1.0, 1.0));
  }
  return xs;
}

// Criterion 1: blinded inference recovers the plain per-sample products to
// 1e-9 for k in {1,2,3,4,8} and noise variance up to 9e8, for both bilinear
// ops and through full models, in under 10 seconds.
TEST_F(Acceptance, InferenceRoundTrip) {
  CounterRng rng(0xACC1);
  const std::size_t ks[] = {1, 2, 3, 4, 8};
  const double variances[] = {1.0e4, 9.0e8};

  for (std::size_t k : ks) {
    for (double var : variances) {
      // Dense op.
      {
        const Tensor w = rng.uniform_tensor({7, 9}, -1.0, 1.0);
        BlindingKey key = darknight::generate_blinding_key(
            k, {9, 1}, NoiseSpec{0.0, var, rng.next_u64()}, rng.next_u64());
        std::vector<Tensor> xs = random_batch(k, {9, 1}, rng);
        CodedBatch coded = darknight::blind(xs, key);
        std::vector<Tensor> products;
        for (const Tensor& b : coded.blinded) {
          products.push_back(darknight::matmul(w, b));
        }
        std::vector<Tensor> got = darknight::unblind(products, key);
        for (std::size_t s = 0; s < k; ++s) {
          EXPECT_LE(darknight::rel_linf(got[s], darknight::matmul(w, xs[s]),
                                        1e-6),
                    1e-9)
              << "dense k=" << k << " var=" << var;
        }
      }
      // Convolution op.
      {
        const BilinearOp op = BilinearOp::conv2d(1, 1);
        const Tensor w = rng.uniform_tensor({3, 2, 3, 3}, -1.0, 1.0);
        BlindingKey key = darknight::generate_blinding_key(
            k, {2, 6, 6}, NoiseSpec{0.0, var, rng.next_u64()}, rng.next_u64());
        std::vector<Tensor> xs = random_batch(k, {2, 6, 6}, rng);
        CodedBatch coded = darknight::blind(xs, key);
        std::vector<Tensor> products;
        for (const Tensor& b : coded.blinded) {
          products.push_back(darknight::apply(op, w, b));
        }
        std::vector<Tensor> got = darknight::unblind(products, key);
        for (std::size_t s = 0; s < k; ++s) {
          EXPECT_LE(darknight::rel_linf(got[s],
                                        darknight::apply(op, w, xs[s]), 1e-6),
                    1e-9)
              << "conv k=" << k << " var=" << var;
        }
      }
    }
  }

  // Full models, split against plain, at the largest noise.
  {
    const std::vector<LayerSpec> mlp = {
        LayerSpec::dense(8, 6), LayerSpec::relu(), LayerSpec::dense(6, 4)};
    Model model = darknight::init_model(mlp, 0xACC2);
    UntrustedContext uc(mlp, 4, false);
    uc.load_weights(model.weights);
    TrustedContext tc(4, NoiseSpec{0.0, 9.0e8, 0}, 0xACC3);
    std::vector<Tensor> inputs = random_batch(4, {8}, rng);
    ForwardResult fwd = tc.run_forward(inputs, uc);
    for (std::size_t s = 0; s < 4; ++s) {
      EXPECT_LE(darknight::rel_linf(fwd.logits[s],
                                    darknight::plain_forward(model, inputs[s]),
                                    1e-6),
                1e-9);
    }
  }
  {
    const std::vector<LayerSpec> conv = {
        LayerSpec::conv2d(2, 3, 3, 3, 1, 1), LayerSpec::relu(),
        LayerSpec::maxpool(2, 2), LayerSpec::dense(27, 4)};
    Model model = darknight::init_model(conv, 0xACC4);
    UntrustedContext uc(conv, 4, false);
    uc.load_weights(model.weights);
    TrustedContext tc(4, NoiseSpec{0.0, 9.0e8, 0}, 0xACC5);
    std::vector<Tensor> inputs = random_batch(4, {2, 6, 6}, rng);
    ForwardResult fwd = tc.run_forward(inputs, uc);
    for (std::size_t s = 0; s < 4; ++s) {
      EXPECT_LE(darknight::rel_linf(fwd.logits[s],
                                    darknight::plain_forward(model, inputs[s]),
                                    1e-6),
                1e-9);
    }
  }

  EXPECT_LT(elapsed_seconds(), 10.0);
}

// Criterion 2: 500 random gradient decode trials across k in {1..8} and both
// ops reproduce the true averaged gradient to 1e-9, and the decoded gradient
// is invariant to the noise draw.
TEST_F(Acceptance, GradientDecodeIdentity) {
  CounterRng rng(0xACC6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + std::size_t(rng.next_u64() % 8);
    const bool use_conv = trial % 2 == 1;
    const double var = trial % 3 == 0 ? 9.0e8 : 1.0e4;

    const BilinearOp op =
        use_conv ? BilinearOp::conv2d(1, 1) : BilinearOp::matmul();
    const std::vector<std::size_t> xshape =
        use_conv ? std::vector<std::size_t>{2, 4, 4}
                 : std::vector<std::size_t>{6, 1};
    const std::vector<std::size_t> dshape =
        use_conv ? std::vector<std::size_t>{2, 4, 4}
                 : std::vector<std::size_t>{3, 1};

    BlindingKey key = darknight::generate_blinding_key(
        k, xshape, NoiseSpec{0.0, var, rng.next_u64()}, rng.next_u64());
    GradCodec codec = darknight::make_grad_codec_for_key(key, rng.next_u64());

    std::vector<Tensor> xs = random_batch(k, xshape, rng);
    std::vector<Tensor> deltas = random_batch(k, dshape, rng);

    CodedBatch coded = darknight::blind(xs, key);
    std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
    Tensor got = darknight::decode_grad(
        darknight::coded_products(encoded, coded.blinded, op), codec);

    Tensor want = darknight::grad_product(op, deltas[0], xs[0]);
    for (std::size_t s = 1; s < k; ++s) {
      darknight::accumulate(want, 1.0,
                            darknight::grad_product(op, deltas[s], xs[s]));
    }
    want = darknight::scale(want, 1.0 / double(k));
    EXPECT_LE(darknight::rel_linf(got, want, 1e-6), 1e-9)
        << "trial " << trial << " k=" << k << " conv=" << use_conv;
  }

  // Noise invariance: identical keys and data, different noise draws.
  {
    const std::size_t k = 4;
    CounterRng data_rng(0xACC7);
    std::vector<Tensor> xs = random_batch(k, {6, 1}, data_rng);
    std::vector<Tensor> deltas = random_batch(k, {3, 1}, data_rng);
    Tensor decoded[2];
    for (int which = 0; which < 2; ++which) {
      BlindingKey key = darknight::generate_blinding_key(
          k, {6, 1}, NoiseSpec{0.0, 4.0e8, 500 + std::uint64_t(which)}, 777);
      GradCodec codec = darknight::make_grad_codec_for_key(key, 888);
      CodedBatch coded = darknight::blind(xs, key);
      std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
      decoded[which] = darknight::decode_grad(
          darknight::coded_products(encoded, coded.blinded,
                                    BilinearOp::matmul()),
          codec);
    }
    EXPECT_LE(darknight::rel_linf(decoded[0], decoded[1], 1e-6), 1e-9);
  }

  EXPECT_LT(elapsed_seconds(), 30.0);
}

// Criterion 3: generated keys and codecs are numerically clean: the decoding
// constraint residual stays below 1e-10 and the masking matrix is orthogonal
// to condition number 1 + 1e-8.
TEST_F(Acceptance, CodecExactness) {
  CounterRng seeds(0xACC8);
  for (std::size_t k = 1; k <= 8; ++k) {
    for (int rep = 0; rep < 8; ++rep) {
      BlindingKey key = darknight::generate_blinding_key(
          k, {4}, NoiseSpec{0.0, 1.0e6, seeds.next_u64()}, seeds.next_u64());
      GradCodec codec =
          darknight::make_grad_codec_for_key(key, seeds.next_u64());
      EXPECT_LE(darknight::codec_constraint_residual(codec), 1e-10)
          << "k=" << k;

      const std::size_t n = k + 1;
      Tensor square({n, n});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) square.at2(i, j) = key.a.at2(i, j);
      }
      EXPECT_LE(darknight::cond2(square), 1.0 + 1e-8) << "k=" << k;
    }
  }
}

// Criterion 4: the bundled reference operating table is reproduced from the
// closed form: three rows exactly, the 9e8 row within 15 percent of its one
// significant figure quote, and the two KNOWN-DISCREPANT rows off by exactly
// a factor of ten from the quoted values.
TEST_F(Acceptance, LeakageTableReproduction) {
  struct Row {
    double sigma_sq;
    double quoted;
    const char* flag;
  };
  const Row rows[] = {
      {1.0e8, 8.0e-6, "exact"},
      {4.0e8, 2.0e-6, "exact"},
      {8.0e8, 1.0e-6, "exact"},
      {9.0e8, 0.8e-6, "rounded-1sf"},
      {1.6e7, 5.0e-4, "KNOWN-DISCREPANT"},
      {2.5e7, 3.2e-4, "KNOWN-DISCREPANT"},
  };
  for (const Row& row : rows) {
    const double computed =
        darknight::leakage_bound(LeakageParams{4, 1.0, 10.0, row.sigma_sq})
            .nats;
    const std::string flag = row.flag;
    if (flag == "exact") {
      EXPECT_NEAR(computed, row.quoted, 1e-12 * row.quoted);
    } else if (flag == "rounded-1sf") {
      EXPECT_LE(std::abs(computed - row.quoted) / row.quoted, 0.15);
    } else {
      // The closed form contradicts the quoted value by exactly 10x; the
      // tool flags these rows instead of reproducing them.
      EXPECT_NEAR(computed * 10.0, row.quoted, 1e-12 * row.quoted);
    }
  }
  // Calibration inverts the bound exactly.
  EXPECT_NEAR(darknight::calibrate_sigma(1.0e-6, 4, 1.0, 10.0), 8.0e8, 1e-4);
  EXPECT_LT(elapsed_seconds(), 1.0);
}

// Criterion 5: 100 steps of blinded training on a 64-sample blob dataset
// track the plain engine to 1e-7 in per-step loss and final weights, and
// blinded training drives XOR to perfect accuracy.
TEST_F(Acceptance, TrainingTrajectoryEquivalence) {
  const std::vector<LayerSpec> layers = {
      LayerSpec::dense(2, 16), LayerSpec::relu(), LayerSpec::dense(16, 2)};
  Dataset data = darknight::make_blobs(64, 0xACC9);
  TrainConfig cfg;
  cfg.k = 4;
  cfg.epochs = 100;
  cfg.eta = 0.2;
  cfg.seed = 0xACCA;

  TrainResult masked = darknight::train(layers, data, cfg);
  TrainResult plain = darknight::plain_train(layers, data, cfg);

  ASSERT_EQ(masked.history.size(), 100u);
  ASSERT_EQ(plain.history.size(), 100u);
  double max_loss_gap = 0.0;
  for (std::size_t s = 0; s < 100; ++s) {
    max_loss_gap = std::max(
        max_loss_gap,
        std::abs(masked.history[s].loss - plain.history[s].loss));
  }
  EXPECT_LE(max_loss_gap, 1e-7);
  for (std::size_t i = 0; i < plain.model.weights.size(); ++i) {
    EXPECT_LE(darknight::linf_diff(masked.model.weights[i],
                                   plain.model.weights[i]),
              1e-7);
  }
  EXPECT_LT(masked.history.back().loss, masked.history.front().loss);

  // XOR to perfect accuracy under blinded training.
  const std::vector<LayerSpec> xor_net = {
      LayerSpec::dense(2, 8), LayerSpec::relu(), LayerSpec::dense(8, 2)};
  Dataset xo = darknight::make_xor();
  TrainConfig xcfg;
  xcfg.k = 2;
  xcfg.epochs = 400;
  xcfg.eta = 0.5;
  xcfg.seed = 7;
  TrainResult xr = darknight::train(xor_net, xo, xcfg);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < xo.size(); ++s) {
    Tensor logits = darknight::plain_forward(xr.model, xo.features[s]);
    correct += (logits[1] > logits[0] ? 1u : 0u) == xo.labels[s];
  }
  EXPECT_EQ(correct, 4u);

  EXPECT_LT(elapsed_seconds(), 60.0);
}

// Criterion 6: with tau = 1e-6, 1000 random tampers of magnitude at least
// 10*tau are all detected and 1000 honest passes raise no false positive.
TEST_F(Acceptance, IntegrityDetection) {
  const double tau = 1e-6;
  const std::vector<LayerSpec> layers = {
      LayerSpec::dense(8, 6), LayerSpec::relu(), LayerSpec::dense(6, 3)};
  CounterRng rng(0xACCB);

  std::size_t detected = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + std::size_t(rng.next_u64() % 4);
    UntrustedContext uc(layers, k, true);
    uc.load_weights(
        darknight::init_model(layers, 0xACD0 + std::uint64_t(trial)).weights);
    TrustedContext tc(k, NoiseSpec{0.0, 1.0e4, 0},
                      0xACE0 + std::uint64_t(trial), /*integrity=*/true, tau);

    TamperPolicy policy;
    policy.layer = rng.next_u64() % 2;
    policy.eq = rng.next_u64() % (k + 2);
    const double mag = 10.0 * tau * std::pow(10.0, 4.0 * rng.next_unit());
    policy.epsilon = (rng.next_u64() & 1) ? mag : -mag;
    policy.whole_tensor = (rng.next_u64() & 1) != 0;
    policy.entry = 0;
    darknight::inject_tamper(uc, policy);

    std::vector<Tensor> inputs = random_batch(k, {8}, rng);
    ForwardResult fwd = tc.run_forward(inputs, uc);
    bool hit = false;
    for (const auto& rep : fwd.integrity) {
      if (rep.layer == policy.layer) hit = !rep.ok;
    }
    detected += hit;
  }
  EXPECT_EQ(detected, 1000u) << "missed " << (1000 - detected) << " tampers";

  std::size_t false_positives = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + std::size_t(rng.next_u64() % 4);
    UntrustedContext uc(layers, k, true);
    uc.load_weights(
        darknight::init_model(layers, 0xAD00 + std::uint64_t(trial)).weights);
    TrustedContext tc(k, NoiseSpec{0.0, 9.0e8, 0},
                      0xAD10 + std::uint64_t(trial), /*integrity=*/true, tau);
    std::vector<Tensor> inputs = random_batch(k, {8}, rng);
    ForwardResult fwd = tc.run_forward(inputs, uc);
    for (const auto& rep : fwd.integrity) {
      false_positives += rep.ok ? 0 : 1;
    }
  }
  EXPECT_EQ(false_positives, 0u);

  EXPECT_LT(elapsed_seconds(), 60.0);
}

// Criterion 7: over a complete training run, the untrusted side only ever
// receives the six permitted crossing kinds, never a secret-tagged tensor and
// never a raw sample.
class HygieneRecorder : public BoundaryObserver {
 public:
  void on_tensor(CrossingKind kind, const Tensor& t) override {
    ++counts[kind];
    secret_seen = secret_seen || t.secret();
    if (kind == CrossingKind::kBlindedActivation) {
      blinded.push_back(t);
    }
  }
  void on_blob(const std::vector<std::uint8_t>& bytes) override {
    ++blobs;
    blob_bytes += bytes.size();
  }

  std::map<CrossingKind, std::size_t> counts;
  std::vector<Tensor> blinded;
  bool secret_seen = false;
  std::size_t blobs = 0;
  std::size_t blob_bytes = 0;
};

TEST_F(Acceptance, BoundaryHygiene) {
  const std::vector<LayerSpec> layers = {
      LayerSpec::dense(2, 8), LayerSpec::relu(), LayerSpec::dense(8, 2)};
  Dataset data = darknight::make_blobs(16, 0xAD20);
  TrainConfig cfg;
  cfg.k = 4;
  cfg.epochs = 5;
  cfg.eta = 0.2;
  cfg.seed = 0xAD21;
  cfg.integrity = true;  // hygiene must hold with the redundant row too

  HygieneRecorder rec;
  TrainResult result = darknight::train(layers, data, cfg, {}, &rec);
  ASSERT_EQ(result.history.size(), 5u);

  EXPECT_FALSE(rec.secret_seen);
  // 5 epochs x 4 virtual batches x 2 linear layers.
  const std::size_t passes = 5 * 4 * 2;
  EXPECT_EQ(rec.counts[CrossingKind::kWeights], 2u);
  EXPECT_EQ(rec.counts[CrossingKind::kPublicB], passes);
  EXPECT_EQ(rec.counts[CrossingKind::kBlindedActivation],
            passes * (cfg.k + 2));  // k+1 combinations plus the redundant row
  EXPECT_EQ(rec.counts[CrossingKind::kEncodedDelta], passes * (cfg.k + 1));
  EXPECT_EQ(rec.counts[CrossingKind::kWeightGrad], 5u * 2u);
  EXPECT_EQ(rec.blobs, 5u * 4u);
  EXPECT_GT(rec.blob_bytes, 0u);

  // Only the six permitted kinds may appear at all.
  for (const auto& [kind, count] : rec.counts) {
    const bool permitted = kind == CrossingKind::kWeights ||
                           kind == CrossingKind::kPublicB ||
                           kind == CrossingKind::kBlindedActivation ||
                           kind == CrossingKind::kEncodedDelta ||
                           kind == CrossingKind::kWeightGrad ||
                           kind == CrossingKind::kBlob;
    EXPECT_TRUE(permitted) << crossing_kind_name(kind);
  }

  // No blinded activation coincides with any raw sample.
  for (const Tensor& t : rec.blinded) {
    for (const Tensor& x : data.features) {
      if (t.size() != x.size()) continue;
      bool same = true;
      for (std::size_t i = 0; i < t.size() && same; ++i) same = t[i] == x[i];
      EXPECT_FALSE(same) << "a raw sample crossed the boundary";
    }
  }
}

// Criterion 8: gradient aggregation composes: two k=2 virtual batches per
// step equal one k=4 virtual batch to 1e-10 in every step loss and in the
// final weights.
TEST_F(Acceptance, VirtualBatchComposition) {
  const std::vector<LayerSpec> layers = {
      LayerSpec::dense(2, 6), LayerSpec::relu(), LayerSpec::dense(6, 2)};
  Dataset data = darknight::make_blobs(4, 0xAD30);
  TrainConfig small;
  small.k = 2;
  small.epochs = 10;
  small.eta = 0.2;
  small.seed = 0xAD31;
  TrainConfig large = small;
  large.k = 4;

  TrainResult two_vb = darknight::train(layers, data, small);
  TrainResult one_vb = darknight::train(layers, data, large);

  ASSERT_EQ(two_vb.history.size(), one_vb.history.size());
  for (std::size_t s = 0; s < two_vb.history.size(); ++s) {
    EXPECT_NEAR(two_vb.history[s].loss, one_vb.history[s].loss, 1e-10)
        << "step " << s;
  }
  for (std::size_t i = 0; i < two_vb.model.weights.size(); ++i) {
    EXPECT_LE(darknight::linf_diff(two_vb.model.weights[i],
                                   one_vb.model.weights[i]),
              1e-10);
  }
}

}  // namespace
