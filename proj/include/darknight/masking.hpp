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

// Matrix masking of a batch of k inputs with one shared noise tensor.
//
// Stack the k inputs and the noise tensor r as s_0 .. s_k.  Blinding forms
//
//   xbar_i = sum_j A[i][j] * s_j,    i = 0 .. rows-1,
//
// with A a random orthogonal (k+1) x (k+1) matrix, so each blinded tensor is
// a random rotation of the batch plus scaled noise.  A may carry one extra
// redundant row (rows = k+2) used by the integrity check.  Unblinding applies
// the inverse of the square part of A to the returned products and keeps the
// first k rows, discarding the op(W, r) component.  Orthogonality keeps the
// condition number at 1, so recovery loses no precision beyond roundoff.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "darknight/bilinear.hpp"
#include "darknight/error.hpp"
#include "darknight/linalg.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

// Gaussian noise description.  The seed makes key generation reproducible;
// the mean is free because unblinding cancels r exactly whatever its
// distribution.
struct NoiseSpec {
  double mean = 0.0;
  double variance = 1.0;
  std::uint64_t seed = 0;
};

struct BlindingKey {
  Tensor a;      // rows x (k+1), rows = k+1, or k+2 with a redundant row
  Tensor a_inv;  // (k+1) x (k+1) inverse of the square part of a
  Tensor noise;  // r, same shape as one input
  std::size_t k = 0;
  bool redundant_row = false;

  std::size_t rows() const { return a.shape()[0]; }
};

struct CodedBatch {
  std::vector<Tensor> blinded;
  std::size_t k = 0;
  bool redundant_row = false;
};

namespace detail {

inline void validate_key(const BlindingKey& key) {
  if (key.k == 0) throw ParamError("blinding key has k == 0");
  const std::size_t n = key.k + 1;
  const std::size_t rows = key.redundant_row ? n + 1 : n;
  if (key.a.rank() != 2 || key.a.shape()[0] != rows || key.a.shape()[1] != n) {
    throw KeyError("blinding matrix has wrong shape " + shape_string(key.a));
  }
  if (key.a_inv.rank() != 2 || key.a_inv.shape()[0] != n ||
      key.a_inv.shape()[1] != n) {
    throw KeyError("blinding inverse has wrong shape " +
                   shape_string(key.a_inv));
  }
}

}  // namespace detail

// Builds a key from a given masking matrix.  The matrix may be any invertible
// (square) or full-column-rank (one extra row) matrix; the generated path
// always produces orthogonal ones.  Throws KeyError when the square part is
// singular.
inline BlindingKey make_blinding_key(Tensor a, Tensor noise) {
  if (a.rank() != 2) throw KeyError("blinding matrix must be rank 2");
  const std::size_t cols = a.shape()[1];
  const std::size_t rows = a.shape()[0];
  if (cols < 2) throw ParamError("blinding needs k >= 1, so at least 2 columns");
  if (rows != cols && rows != cols + 1) {
    throw KeyError("blinding matrix must be square or have exactly one extra row");
  }
  Tensor square({cols, cols});
  for (std::size_t i = 0; i < cols; ++i) {
    for (std::size_t j = 0; j < cols; ++j) square.at2(i, j) = a.at2(i, j);
  }
  BlindingKey key;
  key.k = cols - 1;
  key.redundant_row = rows == cols + 1;
  key.a_inv = mat_invert(square);
  key.a = std::move(a);
  key.noise = std::move(noise);
  key.a.mark_secret();
  key.a_inv.mark_secret();
  key.noise.mark_secret();
  detail::validate_key(key);
  return key;
}

// Samples a fresh key: A is drawn Haar-orthogonal from a QR factorization of
// a Gaussian matrix, r is iid Gaussian with the given spec.  With
// redundant_row an extra random unit-norm equation row is appended for the
// integrity check; the square part stays orthogonal.
inline BlindingKey generate_blinding_key(std::size_t k,
                                         const std::vector<std::size_t>& input_shape,
                                         const NoiseSpec& noise,
                                         std::uint64_t rng_seed,
                                         bool redundant_row = false) {
  if (k == 0) throw ParamError("blinding needs k >= 1");
  if (!(noise.variance > 0.0)) {
    throw ParamError("noise variance must be positive");
  }
  const std::size_t n = k + 1;

  CounterRng mat_rng(rng_seed);
  Tensor q = random_orthogonal(n, mat_rng);

  Tensor a = q;
  if (redundant_row) {
    // The redundancy row is a secret combination of the mask's orthogonal
    // rows with coordinates of magnitude exactly 1/sqrt(n) and random signs.
    // Equal magnitudes are the unique unit-norm choice maximizing the
    // worst-case sensitivity of the redundant equation: a perturbation of
    // size eps on any single product shifts the integrity residual by
    // eps/sqrt(n), never less, so detection does not depend on which
    // equation is hit.  A Haar-random row would make that sensitivity a
    // random unit-vector component, occasionally near zero.
    Tensor ext({n + 1, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) ext.at2(i, j) = q.at2(i, j);
    }
    const double inv_root = 1.0 / std::sqrt(double(n));
    std::vector<double> coords(n);
    for (std::size_t j = 0; j < n; ++j) {
      coords[j] = (mat_rng.next_u64() & 1) ? inv_root : -inv_root;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += coords[i] * q.at2(i, j);
      ext.at2(n, j) = acc;
    }
    a = std::move(ext);
  }

  CounterRng noise_rng(noise.seed);
  Tensor r = noise_rng.gaussian_tensor(input_shape, noise.mean,
                                       std::sqrt(noise.variance));
  return make_blinding_key(std::move(a), std::move(r));
}

// Blinds k inputs into rows() linear combinations.  All inputs must share the
// noise shape.  The outputs are the values the scheme deliberately releases,
// so they leave with the secrecy tag cleared.
inline CodedBatch blind(const std::vector<Tensor>& inputs,
                        const BlindingKey& key) {
  detail::validate_key(key);
  if (inputs.size() != key.k) {
    throw ProtocolError("blind expected " + std::to_string(key.k) +
                        " inputs, got " + std::to_string(inputs.size()));
  }
  std::vector<Tensor> stack;
  stack.reserve(key.k + 1);
  for (const Tensor& x : inputs) {
    require_same_shape(x, key.noise, "blind");
    stack.push_back(x);
  }
  stack.push_back(key.noise);

  CodedBatch out;
  out.k = key.k;
  out.redundant_row = key.redundant_row;
  const std::size_t rows = key.rows();
  std::vector<double> coeffs(key.k + 1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j <= key.k; ++j) coeffs[j] = key.a.at2(i, j);
    out.blinded.push_back(
        linear_combination(coeffs, stack).declassified());
  }
  return out;
}

// Inverts the square part of the combination on k+1 returned products and
// drops the noise component.  For op results ybar_i = op(W, xbar_i) this
// recovers [op(W, x_0) .. op(W, x_{k-1})] exactly up to roundoff, for any r.
inline std::vector<Tensor> unblind(const std::vector<Tensor>& gpu_outputs,
                                   const BlindingKey& key) {
  detail::validate_key(key);
  if (gpu_outputs.size() != key.k + 1) {
    throw ProtocolError("unblind expected " + std::to_string(key.k + 1) +
                        " products, got " + std::to_string(gpu_outputs.size()));
  }
  for (std::size_t i = 1; i < gpu_outputs.size(); ++i) {
    require_same_shape(gpu_outputs[i], gpu_outputs[0], "unblind");
  }
  std::vector<Tensor> recovered;
  recovered.reserve(key.k);
  std::vector<double> coeffs(key.k + 1);
  for (std::size_t j = 0; j < key.k; ++j) {
    for (std::size_t i = 0; i <= key.k; ++i) coeffs[i] = key.a_inv.at2(j, i);
    Tensor y = linear_combination(coeffs, gpu_outputs);
    // Raw per-sample results are secret again once reconstructed.
    y.mark_secret();
    recovered.push_back(std::move(y));
  }
  return recovered;
}

}  // namespace darknight
