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

// Dense helpers for the small square matrices used as masking keys.  The
// matrices are (k+1) x (k+1) for batch size k, so plain O(n^3) routines are
// more than enough.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "darknight/error.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

inline Tensor mat_identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at2(i, i) = 1.0;
  return t;
}

inline Tensor mat_transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("mat_transpose needs a rank-2 tensor");
  Tensor t({a.shape()[1], a.shape()[0]});
  for (std::size_t i = 0; i < a.shape()[0]; ++i) {
    for (std::size_t j = 0; j < a.shape()[1]; ++j) {
      t.at2(j, i) = a.at2(i, j);
    }
  }
  if (a.secret()) t.mark_secret();
  return t;
}

// Gauss-Jordan inverse with partial pivoting.  Throws KeyError when the
// matrix is numerically singular.
inline Tensor mat_invert(const Tensor& a) {
  if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) {
    throw ShapeError("mat_invert needs a square matrix, got " +
                     shape_string(a));
  }
  const std::size_t n = a.shape()[0];
  Tensor work = a;
  Tensor inv = mat_identity(n);

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::abs(work.at2(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(work.at2(r, col));
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (!(best > n * std::numeric_limits<double>::epsilon() * (1.0 + max_abs(a)))) {
      throw KeyError("matrix is singular or too ill conditioned to invert");
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(work.at2(pivot, j), work.at2(col, j));
        std::swap(inv.at2(pivot, j), inv.at2(col, j));
      }
    }
    const double d = work.at2(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      work.at2(col, j) /= d;
      inv.at2(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = work.at2(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        work.at2(r, j) -= f * work.at2(col, j);
        inv.at2(r, j) -= f * inv.at2(col, j);
      }
    }
  }
  if (a.secret()) inv.mark_secret();
  require_finite(inv, "mat_invert");
  return inv;
}

// Householder QR of a square matrix; returns Q with the sign convention that
// makes the diagonal of R positive.  Applied to a matrix of iid standard
// Gaussians this samples Q from the Haar measure on the orthogonal group.
inline Tensor qr_orthogonal(const Tensor& g) {
  if (g.rank() != 2 || g.shape()[0] != g.shape()[1]) {
    throw ShapeError("qr_orthogonal needs a square matrix");
  }
  const std::size_t n = g.shape()[0];
  Tensor r = g;
  Tensor q = mat_identity(n);

  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < n; ++i) norm += r.at2(i, k) * r.at2(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = r.at2(k, k) >= 0.0 ? -norm : norm;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) {
      v[i] = r.at2(i, k) - (i == k ? alpha : 0.0);
      vnorm2 += v[i] * v[i];
    }
    if (vnorm2 == 0.0) continue;
    // R <- H R
    for (std::size_t j = k; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < n; ++i) dot += v[i] * r.at2(i, j);
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = k; i < n; ++i) r.at2(i, j) -= f * v[i];
    }
    // Q <- Q H
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = k; j < n; ++j) dot += q.at2(i, j) * v[j];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t j = k; j < n; ++j) q.at2(i, j) -= f * v[j];
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (r.at2(j, j) < 0.0) {
      for (std::size_t i = 0; i < n; ++i) q.at2(i, j) = -q.at2(i, j);
    }
  }
  require_finite(q, "qr_orthogonal");
  return q;
}

inline Tensor random_orthogonal(std::size_t n, CounterRng& rng) {
  if (n == 0) throw ParamError("random_orthogonal needs n >= 1");
  Tensor g({n, n});
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.next_gaussian();
  return qr_orthogonal(g);
}

// Singular values by one-sided Jacobi, descending.  Handles m >= n; for
// m < n pass the transpose.
inline std::vector<double> singular_values(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("singular_values needs a rank-2 tensor");
  Tensor u = a.shape()[0] >= a.shape()[1] ? a : mat_transpose(a);
  const std::size_t m = u.shape()[0];
  const std::size_t n = u.shape()[1];

  const double tol = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          app += u.at2(i, p) * u.at2(i, p);
          aqq += u.at2(i, q) * u.at2(i, q);
          apq += u.at2(i, p) * u.at2(i, q);
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double up = u.at2(i, p);
          const double uq = u.at2(i, q);
          u.at2(i, p) = c * up - s * uq;
          u.at2(i, q) = s * up + c * uq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += u.at2(i, j) * u.at2(i, j);
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

// Spectral condition number sigma_max / sigma_min; infinity when singular.
inline double cond2(const Tensor& a) {
  const std::vector<double> sv = singular_values(a);
  const double smin = sv.back();
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return sv.front() / smin;
}

}  // namespace darknight
