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
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "darknight/error.hpp"

namespace darknight {

// Dense row-major tensor of 64-bit floats.  Rank 0 is a scalar (one entry).
// Every dimension must be positive and the flat size always equals the
// product of the dimensions.
//
// Each tensor carries a secrecy tag used by the offload pipeline: tensors
// derived from protected values (raw inputs, noise, masking matrices) stay
// tagged until an explicit declassification point, and the untrusted context
// refuses tagged tensors.  The tag never affects numeric results.
class Tensor {
 public:
  Tensor() : shape_(), data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape size " +
                       std::to_string(checked_size(shape_)));
    }
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor from_vector(std::vector<double> v) {
    if (v.empty()) throw ShapeError("rank-1 tensor needs at least one entry");
    std::vector<std::size_t> shape{v.size()};
    return Tensor(std::move(shape), std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at2(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at2(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }

  double at3(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at3(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  double at4(std::size_t o, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((o * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double& at4(std::size_t o, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((o * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool secret() const { return secret_; }
  void mark_secret() { secret_ = true; }

  // Copy with the secrecy tag cleared.  Call sites are the scheme's explicit
  // release points (blinded tensors, encoded deltas, decoded weight grads).
  Tensor declassified() const {
    Tensor t = *this;
    t.secret_ = false;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Reshape view-copy; total size must be preserved.  The tag carries over.
  Tensor reshaped(std::vector<std::size_t> shape) const {
    Tensor t(std::move(shape), data_);
    t.secret_ = secret_;
    return t;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
      if (d > (std::size_t{1} << 40) / n) {
        throw ShapeError("tensor size overflow");
      }
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool secret_ = false;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_string(a) + " vs " + shape_string(b));
  }
}

inline void require_finite(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + " produced a non-finite value");
    }
  }
}

inline bool propagate_secret(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->secret()) return true;
  }
  return false;
}

// ---- elementwise helpers ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(std::vector<std::size_t>(a.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  if (propagate_secret({&a, &b})) out.mark_secret();
  require_finite(out, "add");
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(std::vector<std::size_t>(a.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  if (propagate_secret({&a, &b})) out.mark_secret();
  require_finite(out, "sub");
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out(std::vector<std::size_t>(a.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  if (a.secret()) out.mark_secret();
  require_finite(out, "scale");
  return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out(std::vector<std::size_t>(a.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  if (propagate_secret({&a, &b})) out.mark_secret();
  require_finite(out, "hadamard");
  return out;
}

inline void accumulate(Tensor& dst, double coeff, const Tensor& src) {
  require_same_shape(dst, src, "accumulate");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += coeff * src[i];
  if (src.secret()) dst.mark_secret();
}

// out = sum_i coeffs[i] * terms[i].  The shared primitive behind blinding and
// delta encoding.
inline Tensor linear_combination(std::span<const double> coeffs,
                                 std::span<const Tensor> terms) {
  if (coeffs.size() != terms.size() || terms.empty()) {
    throw ParamError("linear_combination: need one coefficient per term");
  }
  Tensor out(std::vector<std::size_t>(terms[0].shape()));
  bool secret = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require_same_shape(out, terms[i], "linear_combination");
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] += coeffs[i] * terms[i][j];
    }
    secret = secret || terms[i].secret();
  }
  if (secret) out.mark_secret();
  require_finite(out, "linear_combination");
  return out;
}

// ---- norms and comparisons ----

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double linf_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "linf_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

// ||a - b||_inf / ||b||_inf with a floor on the denominator so that an exact
// zero reference still yields a meaningful ratio.
inline double rel_linf(const Tensor& a, const Tensor& b,
                       double denom_floor = 1e-300) {
  return linf_diff(a, b) / std::max(max_abs(b), denom_floor);
}

inline double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

inline double l1_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += std::abs(v);
  return s;
}

inline bool bits_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
    if (std::signbit(a[i]) != std::signbit(b[i])) return false;
  }
  return true;
}

}  // namespace darknight
