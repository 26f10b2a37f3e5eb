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
#include <cstddef>
#include <vector>

#include <gtest/gtest.h>

#include "darknight/bilinear.hpp"
#include "darknight/grad_codec.hpp"
#include "darknight/linalg.hpp"
#include "darknight/masking.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"
#include "oracles.hpp"

namespace {

using darknight::BilinearOp;
using darknight::BlindingKey;
using darknight::CodedBatch;
using darknight::CounterRng;
using darknight::GradCodec;
using darknight::NoiseSpec;
using darknight::Tensor;

std::vector<Tensor> random_tensors(std::size_t count,
                                   const std::vector<std::size_t>& shape,
                                   CounterRng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(rng.uniform_tensor(shape, -1.0, 1.0));
  }
  return out;
}

TEST(Codec, ConstraintResidualIsTiny) {
  CounterRng seeds(61);
  for (std::size_t k = 1; k <= 8; ++k) {
    GradCodec codec = darknight::generate_grad_codec(k, seeds.next_u64());
    EXPECT_LE(darknight::codec_constraint_residual(codec), 1e-10) << "k=" << k;
  }
}

TEST(Codec, GammaMagnitudesAreBounded) {
  CounterRng seeds(62);
  bool saw_negative = false;
  for (int trial = 0; trial < 32; ++trial) {
    GradCodec codec = darknight::generate_grad_codec(4, seeds.next_u64());
    for (std::size_t j = 0; j < 5; ++j) {
      const double g = std::abs(codec.gamma[j]);
      EXPECT_GE(g, 0.5);
      EXPECT_LE(g, 2.0);
      saw_negative = saw_negative || codec.gamma[j] < 0.0;
    }
  }
  EXPECT_TRUE(saw_negative) << "gamma signs should be random";
}

TEST(Codec, Deterministic) {
  GradCodec c1 = darknight::generate_grad_codec(3, 55);
  GradCodec c2 = darknight::generate_grad_codec(3, 55);
  EXPECT_TRUE(darknight::bits_equal(c1.b, c2.b));
  EXPECT_TRUE(darknight::bits_equal(c1.gamma, c2.gamma));
}

// Independent oracle: for fixed A and gamma, each column j of B solves the
// k+1 dimensional linear system  (Gamma A)^T col_j = e_j.  Solving it with
// plain Gaussian elimination must reproduce the closed form used in the
// library.
TEST(Codec, MatchesLinearSolveOracle) {
  const std::size_t k = 3;
  const std::size_t n = k + 1;
  CounterRng rng(63);
  GradCodec codec = darknight::generate_grad_codec(k, 71);

  // System matrix M = (Gamma A)^T, so M[p][q] = gamma_q * a[q][p].
  oracles::Mat m(n, n);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      m.at(p, q) = codec.gamma[q] * codec.a.at2(q, p);
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    const std::vector<double> col = oracles::solve(m, e);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(codec.b.at2(i, j), col[i], 1e-10)
          << "b[" << i << "][" << j << "]";
    }
  }
}

TEST(Codec, SingleSampleIdentityMaskIsTransparent) {
  // k = 1 with A = I: the code reduces to one equation scaled by 1/gamma_0.
  Tensor a = darknight::mat_identity(2);
  Tensor gamma = Tensor::from_vector({2.0, -1.0});
  GradCodec codec = darknight::make_grad_codec(a, gamma);
  EXPECT_NEAR(codec.b.at2(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(codec.b.at2(1, 0), 0.0, 1e-15);
  EXPECT_LE(darknight::codec_constraint_residual(codec), 1e-15);
}

TEST(Codec, RejectsBadInputs) {
  EXPECT_THROW(darknight::generate_grad_codec(0, 1), darknight::ParamError);
  Tensor rect({3, 2});
  EXPECT_THROW(darknight::make_grad_codec(rect, Tensor({3})),
               darknight::KeyError);
  Tensor eye = darknight::mat_identity(3);
  EXPECT_THROW(darknight::make_grad_codec(eye, Tensor({2})),
               darknight::KeyError);
  Tensor zero_gamma = Tensor::from_vector({1.0, 0.0, 1.0});
  EXPECT_THROW(darknight::make_grad_codec(eye, zero_gamma),
               darknight::KeyError);
}

TEST(Encode, MatchesScalarLoops) {
  const std::size_t k = 2;
  CounterRng rng(64);
  GradCodec codec = darknight::generate_grad_codec(k, 81);
  std::vector<Tensor> deltas = random_tensors(k, {3, 1}, rng);
  std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
  ASSERT_EQ(encoded.size(), k + 1);
  for (std::size_t j = 0; j <= k; ++j) {
    for (std::size_t e = 0; e < deltas[0].size(); ++e) {
      double want = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        want += codec.b.at2(j, i) * deltas[i][e];
      }
      EXPECT_NEAR(encoded[j][e], want, 1e-12);
    }
  }
}

TEST(Encode, OutputsAreDeclassified) {
  GradCodec codec = darknight::generate_grad_codec(2, 82);
  CounterRng rng(65);
  std::vector<Tensor> deltas = random_tensors(2, {3}, rng);
  for (Tensor& d : deltas) d.mark_secret();
  std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
  for (const Tensor& t : encoded) EXPECT_FALSE(t.secret());
}

TEST(Encode, RejectsArityMismatch) {
  GradCodec codec = darknight::generate_grad_codec(2, 83);
  CounterRng rng(66);
  std::vector<Tensor> three = random_tensors(3, {3}, rng);
  EXPECT_THROW(darknight::encode_deltas(three, codec.b),
               darknight::ProtocolError);
}

// End to end decode identity for matmul: blind the activations, encode the
// deltas, form the k+1 coded products untrusted-style, decode, and compare
// with the true average of per sample gradients.
TEST(Decode, MatMulGradIdentity) {
  CounterRng rng(67);
  const BilinearOp op = BilinearOp::matmul();
  for (std::size_t k = 1; k <= 8; ++k) {
    BlindingKey key = darknight::generate_blinding_key(
        k, {5, 1}, NoiseSpec{0.0, 9.0e8, 900 + k}, 1000 + k);
    GradCodec codec = darknight::make_grad_codec_for_key(key, 2000 + k);

    std::vector<Tensor> xs = random_tensors(k, {5, 1}, rng);
    std::vector<Tensor> deltas = random_tensors(k, {4, 1}, rng);

    CodedBatch coded = darknight::blind(xs, key);
    std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
    std::vector<Tensor> eqs =
        darknight::coded_products(encoded, coded.blinded, op);
    Tensor got = darknight::decode_grad(eqs, codec);

    Tensor want({4, 5});
    for (std::size_t i = 0; i < k; ++i) {
      darknight::accumulate(want, 1.0, darknight::grad_product(op, deltas[i], xs[i]));
    }
    want = darknight::scale(want, 1.0 / double(k));
    EXPECT_LE(darknight::rel_linf(got, want, 1e-6), 1e-9) << "k=" << k;
    EXPECT_TRUE(got.secret());
  }
}

TEST(Decode, ConvGradIdentity) {
  CounterRng rng(68);
  const BilinearOp op = BilinearOp::conv2d(1, 1);
  for (std::size_t k = 1; k <= 4; ++k) {
    BlindingKey key = darknight::generate_blinding_key(
        k, {2, 5, 5}, NoiseSpec{0.0, 1.0e8, 910 + k}, 1100 + k);
    GradCodec codec = darknight::make_grad_codec_for_key(key, 2100 + k);

    std::vector<Tensor> xs = random_tensors(k, {2, 5, 5}, rng);
    std::vector<Tensor> deltas = random_tensors(k, {3, 5, 5}, rng);

    CodedBatch coded = darknight::blind(xs, key);
    std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
    std::vector<Tensor> eqs =
        darknight::coded_products(encoded, coded.blinded, op);
    Tensor got = darknight::decode_grad(eqs, codec);

    Tensor want({3, 2, 3, 3});
    for (std::size_t i = 0; i < k; ++i) {
      darknight::accumulate(want, 1.0, darknight::grad_product(op, deltas[i], xs[i]));
    }
    want = darknight::scale(want, 1.0 / double(k));
    EXPECT_LE(darknight::rel_linf(got, want, 1e-6), 1e-9) << "k=" << k;
  }
}

// The decoded gradient must not depend on the noise draw: the constraint
// kills the noise column exactly, so two keys differing only in the noise
// seed give results equal to roundoff.
TEST(Decode, InvariantToNoiseDraw) {
  CounterRng rng(69);
  const std::size_t k = 4;
  const BilinearOp op = BilinearOp::matmul();
  std::vector<Tensor> xs = random_tensors(k, {6, 1}, rng);
  std::vector<Tensor> deltas = random_tensors(k, {3, 1}, rng);

  Tensor decoded[2];
  for (int which = 0; which < 2; ++which) {
    BlindingKey key = darknight::generate_blinding_key(
        k, {6, 1}, NoiseSpec{0.0, 4.0e8, 7000 + which}, /*rng_seed=*/3131);
    GradCodec codec = darknight::make_grad_codec_for_key(key, 3232);
    CodedBatch coded = darknight::blind(xs, key);
    std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
    decoded[which] = darknight::decode_grad(
        darknight::coded_products(encoded, coded.blinded, op), codec);
  }
  EXPECT_LE(darknight::rel_linf(decoded[0], decoded[1], 1e-6), 1e-9);
}

TEST(Decode, ZeroDeltasGiveZeroGrad) {
  const std::size_t k = 3;
  BlindingKey key = darknight::generate_blinding_key(
      k, {4, 1}, NoiseSpec{0.0, 1.0e6, 5}, 6);
  GradCodec codec = darknight::make_grad_codec_for_key(key, 7);
  CounterRng rng(70);
  std::vector<Tensor> xs = random_tensors(k, {4, 1}, rng);
  std::vector<Tensor> deltas(k, Tensor({2, 1}));
  CodedBatch coded = darknight::blind(xs, key);
  std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
  Tensor got = darknight::decode_grad(
      darknight::coded_products(encoded, coded.blinded, BilinearOp::matmul()),
      codec);
  EXPECT_DOUBLE_EQ(darknight::max_abs(got), 0.0);
}

TEST(Decode, WorksWithRedundantRowKey) {
  // coded_products must pair the k+1 encoded deltas with the first k+1
  // blinded tensors and ignore the extra integrity row.
  CounterRng rng(71);
  const std::size_t k = 2;
  BlindingKey key = darknight::generate_blinding_key(
      k, {4, 1}, NoiseSpec{0.0, 1.0e6, 15}, 16, /*redundant_row=*/true);
  GradCodec codec = darknight::make_grad_codec_for_key(key, 17);
  std::vector<Tensor> xs = random_tensors(k, {4, 1}, rng);
  std::vector<Tensor> deltas = random_tensors(k, {3, 1}, rng);
  CodedBatch coded = darknight::blind(xs, key);
  ASSERT_EQ(coded.blinded.size(), k + 2);
  std::vector<Tensor> encoded = darknight::encode_deltas(deltas, codec.b);
  Tensor got = darknight::decode_grad(
      darknight::coded_products(encoded, coded.blinded, BilinearOp::matmul()),
      codec);
  Tensor want({3, 4});
  for (std::size_t i = 0; i < k; ++i) {
    darknight::accumulate(
        want, 1.0,
        darknight::grad_product(BilinearOp::matmul(), deltas[i], xs[i]));
  }
  want = darknight::scale(want, 1.0 / double(k));
  EXPECT_LE(darknight::rel_linf(got, want, 1e-6), 1e-9);
}

TEST(Decode, RejectsWrongEquationCount) {
  GradCodec codec = darknight::generate_grad_codec(2, 90);
  std::vector<Tensor> eqs(2, Tensor({2, 2}));
  EXPECT_THROW(darknight::decode_grad(eqs, codec), darknight::ProtocolError);
}

}  // namespace
