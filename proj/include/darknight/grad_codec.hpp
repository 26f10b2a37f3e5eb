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

// Coded computation of averaged weight gradients over blinded activations.
//
// With per-sample output gradients delta_0 .. delta_{k-1} and activations
// blinded by the matrix A, the untrusted side evaluates one bilinear product
// per equation:
//
//   Eq_j = < sum_i B[j][i] delta_i , xbar_j >,   j = 0 .. k.
//
// The public combination matrix B is built so that  B^T Gamma A = [I_k | 0],
// with Gamma = diag(gamma_0 .. gamma_k) a secret scaling.  Expanding Eq_j
// over the blinded stack shows
//
//   sum_j gamma_j Eq_j = sum_{i,m} (B^T Gamma A)[i][m] <delta_i, s_m>
//                      = sum_i <delta_i, x_i>,
//
// so the noise column is annihilated and the decoder returns the exact batch
// average (1/k) sum_i <delta_i, x_i> for any r.  Given A and Gamma the
// constraint solves in closed form: B[j][i] = A^{-1}[i][j] / gamma_j.
//
// Decode correctness never needs A or Gamma on the untrusted side: encoding
// and the coded products read only B and the blinded activations.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "darknight/bilinear.hpp"
#include "darknight/error.hpp"
#include "darknight/linalg.hpp"
#include "darknight/masking.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

struct GradCodec {
  Tensor a;      // (k+1) x (k+1), shared with the blinding key
  Tensor gamma;  // k+1 diagonal entries, |gamma_j| in [1/2, 2]
  Tensor b;      // (k+1) x k public combination matrix
  std::size_t k = 0;
};

// Solves B from the constraint for a given invertible A and diagonal Gamma.
inline GradCodec make_grad_codec(const Tensor& a, const Tensor& gamma) {
  if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) {
    throw KeyError("grad codec needs a square masking matrix");
  }
  const std::size_t n = a.shape()[0];
  if (n < 2) throw ParamError("grad codec needs k >= 1");
  if (gamma.rank() != 1 || gamma.shape()[0] != n) {
    throw KeyError("gamma must have k+1 entries");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (gamma[j] == 0.0) throw KeyError("gamma entries must be nonzero");
  }
  GradCodec codec;
  codec.k = n - 1;
  const Tensor a_inv = mat_invert(a);
  Tensor b({n, codec.k});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < codec.k; ++i) {
      b.at2(j, i) = a_inv.at2(i, j) / gamma[j];
    }
  }
  require_finite(b, "make_grad_codec");
  codec.a = a;
  codec.gamma = gamma;
  codec.b = b;
  codec.a.mark_secret();
  codec.gamma.mark_secret();
  // B is public by design.
  return codec;
}

// Fresh codec with a Haar-orthogonal A and gamma magnitudes uniform in
// [1/2, 2] with random signs.
inline GradCodec generate_grad_codec(std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ParamError("grad codec needs k >= 1");
  const std::size_t n = k + 1;
  CounterRng rng(seed);
  Tensor a = random_orthogonal(n, rng);
  Tensor gamma({n});
  for (std::size_t j = 0; j < n; ++j) {
    const double magnitude = rng.next_uniform(0.5, 2.0);
    const bool flip = (rng.next_u64() & 1) != 0;
    gamma[j] = flip ? -magnitude : magnitude;
  }
  return make_grad_codec(a, gamma);
}

// Codec that shares the square part of an existing blinding key, so the
// forward activations blinded by that key decode correctly.
inline GradCodec make_grad_codec_for_key(const BlindingKey& key,
                                         std::uint64_t seed) {
  const std::size_t n = key.k + 1;
  Tensor square({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) square.at2(i, j) = key.a.at2(i, j);
  }
  CounterRng rng(seed);
  Tensor gamma({n});
  for (std::size_t j = 0; j < n; ++j) {
    const double magnitude = rng.next_uniform(0.5, 2.0);
    const bool flip = (rng.next_u64() & 1) != 0;
    gamma[j] = flip ? -magnitude : magnitude;
  }
  return make_grad_codec(square, gamma);
}

// ||B^T Gamma A - [I_k | 0]||_inf.
inline double codec_constraint_residual(const GradCodec& codec) {
  const std::size_t n = codec.k + 1;
  double worst = 0.0;
  for (std::size_t i = 0; i < codec.k; ++i) {
    for (std::size_t m = 0; m < n; ++m) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        acc += codec.b.at2(j, i) * codec.gamma[j] * codec.a.at2(j, m);
      }
      const double target = (i == m) ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(acc - target));
    }
  }
  return worst;
}

// Linear combinations of the per-sample deltas by the rows of B:
// output[j] = sum_i B[j][i] delta_i.  Only B and the deltas are read, and the
// outputs are the scheme's release form for gradient material.
inline std::vector<Tensor> encode_deltas(const std::vector<Tensor>& deltas,
                                         const Tensor& b) {
  if (b.rank() != 2) throw KeyError("combination matrix must be rank 2");
  const std::size_t n = b.shape()[0];
  const std::size_t k = b.shape()[1];
  if (k == 0 || n != k + 1) {
    throw KeyError("combination matrix must be (k+1) x k");
  }
  if (deltas.size() != k) {
    throw ProtocolError("encode_deltas expected " + std::to_string(k) +
                        " deltas, got " + std::to_string(deltas.size()));
  }
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    require_same_shape(deltas[i], deltas[0], "encode_deltas");
  }
  std::vector<Tensor> out;
  out.reserve(n);
  std::vector<double> coeffs(k);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < k; ++i) coeffs[i] = b.at2(j, i);
    out.push_back(linear_combination(coeffs, deltas).declassified());
  }
  return out;
}

// One bilinear product per equation: eqs[j] = <encoded[j], blinded[j]>.
// Runs against the stored blinded activations produced with the codec's A;
// when the batch carries a redundant integrity row only the first k+1
// activations participate.
inline std::vector<Tensor> coded_products(const std::vector<Tensor>& encoded,
                                          const std::vector<Tensor>& blinded,
                                          const BilinearOp& op) {
  if (encoded.empty()) throw ProtocolError("coded_products: no encoded deltas");
  const std::size_t n = encoded.size();
  if (blinded.size() < n) {
    throw ProtocolError("coded_products expected at least " +
                        std::to_string(n) + " blinded activations, got " +
                        std::to_string(blinded.size()));
  }
  std::vector<Tensor> eqs;
  eqs.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    eqs.push_back(grad_product(op, encoded[j], blinded[j]));
  }
  return eqs;
}

// (1/k) sum_j gamma_j Eq_j: the averaged weight gradient over the batch.
inline Tensor decode_grad(const std::vector<Tensor>& eqs,
                          const GradCodec& codec) {
  const std::size_t n = codec.k + 1;
  if (eqs.size() != n) {
    throw ProtocolError("decode_grad expected " + std::to_string(n) +
                        " equations, got " + std::to_string(eqs.size()));
  }
  std::vector<double> coeffs(n);
  for (std::size_t j = 0; j < n; ++j) {
    coeffs[j] = codec.gamma[j] / double(codec.k);
  }
  Tensor grad = linear_combination(coeffs, eqs);
  grad.mark_secret();
  return grad;
}

}  // namespace darknight
