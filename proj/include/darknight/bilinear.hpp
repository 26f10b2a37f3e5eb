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

#include <cstddef>
#include <string>

#include "darknight/error.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

// The offloadable operations are bilinear in (W, x).  Everything the masking
// and coding layers rely on is exactly that bilinearity: op(W, sum c_i x_i)
// equals sum c_i op(W, x_i).
struct BilinearOp {
  enum class Kind { kMatMul, kConv2d };

  Kind kind = Kind::kMatMul;
  std::size_t stride = 1;   // conv only
  std::size_t padding = 0;  // conv only

  static BilinearOp matmul() { return BilinearOp{Kind::kMatMul, 1, 0}; }
  static BilinearOp conv2d(std::size_t stride, std::size_t padding) {
    if (stride == 0) throw ParamError("conv2d stride must be positive");
    return BilinearOp{Kind::kConv2d, stride, padding};
  }
};

// w: [m, n], x: [n, p] -> [m, p].
inline Tensor matmul(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || x.rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + shape_string(w) +
                     " and " + shape_string(x));
  }
  const std::size_t m = w.shape()[0];
  const std::size_t n = w.shape()[1];
  const std::size_t p = x.shape()[1];
  if (x.shape()[0] != n) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_string(w) +
                     " x " + shape_string(x));
  }
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < n; ++kk) {
      const double wik = w.at2(i, kk);
      if (wik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) {
        out.at2(i, j) += wik * x.at2(kk, j);
      }
    }
  }
  if (propagate_secret({&w, &x})) out.mark_secret();
  require_finite(out, "matmul");
  return out;
}

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel,
                                std::size_t stride, std::size_t pad,
                                const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel) {
    throw ShapeError(std::string("conv2d kernel does not fit padded input on ") +
                     axis);
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError(std::string("conv2d output size is not integral on ") +
                     axis);
  }
  return (padded - kernel) / stride + 1;
}

}  // namespace detail

// Cross-correlation with zero padding.
// w: [co, ci, kh, kw], x: [ci, h, wd] -> [co, ho, wo].
inline Tensor conv2d(const Tensor& w, const Tensor& x, std::size_t stride = 1,
                     std::size_t padding = 0) {
  if (w.rank() != 4 || x.rank() != 3) {
    throw ShapeError("conv2d needs a rank-4 kernel and a rank-3 input, got " +
                     shape_string(w) + " and " + shape_string(x));
  }
  if (stride == 0) throw ParamError("conv2d stride must be positive");
  const std::size_t co = w.shape()[0];
  const std::size_t ci = w.shape()[1];
  const std::size_t kh = w.shape()[2];
  const std::size_t kw = w.shape()[3];
  if (x.shape()[0] != ci) {
    throw ShapeError("conv2d channel mismatch: kernel " + shape_string(w) +
                     " vs input " + shape_string(x));
  }
  const std::size_t h = x.shape()[1];
  const std::size_t wd = x.shape()[2];
  const std::size_t ho = detail::conv_out_dim(h, kh, stride, padding, "rows");
  const std::size_t wo = detail::conv_out_dim(wd, kw, stride, padding, "cols");

  Tensor out({co, ho, wo});
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t i = 0; i < kh; ++i) {
            const std::ptrdiff_t y =
                std::ptrdiff_t(oh * stride + i) - std::ptrdiff_t(padding);
            if (y < 0 || y >= std::ptrdiff_t(h)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              const std::ptrdiff_t xx =
                  std::ptrdiff_t(ow * stride + j) - std::ptrdiff_t(padding);
              if (xx < 0 || xx >= std::ptrdiff_t(wd)) continue;
              acc += w.at4(o, c, i, j) * x.at3(c, std::size_t(y), std::size_t(xx));
            }
          }
        }
        out.at3(o, oh, ow) = acc;
      }
    }
  }
  if (propagate_secret({&w, &x})) out.mark_secret();
  require_finite(out, "conv2d");
  return out;
}

// op(w, x) for either kind.
inline Tensor apply(const BilinearOp& op, const Tensor& w, const Tensor& x) {
  if (op.kind == BilinearOp::Kind::kMatMul) return matmul(w, x);
  return conv2d(w, x, op.stride, op.padding);
}

// Contraction of the output gradient with the x side, giving the gradient
// with respect to W.  Bilinear in (delta, x).
//
// MatMul: delta [m, p], x [n, p] -> delta . x^T, shape [m, n].
// Conv2d: delta [co, ho, wo], x [ci, h, wd] -> kernel-shaped correlation
//         [co, ci, kh, kw]; the kernel extent is recovered from the shapes.
inline Tensor grad_product(const BilinearOp& op, const Tensor& delta,
                           const Tensor& x) {
  if (op.kind == BilinearOp::Kind::kMatMul) {
    if (delta.rank() != 2 || x.rank() != 2 ||
        delta.shape()[1] != x.shape()[1]) {
      throw ShapeError("grad_product(matmul) shape mismatch: " +
                       shape_string(delta) + " vs " + shape_string(x));
    }
    const std::size_t m = delta.shape()[0];
    const std::size_t p = delta.shape()[1];
    const std::size_t n = x.shape()[0];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t kk = 0; kk < p; ++kk) {
          acc += delta.at2(i, kk) * x.at2(j, kk);
        }
        out.at2(i, j) = acc;
      }
    }
    if (propagate_secret({&delta, &x})) out.mark_secret();
    require_finite(out, "grad_product");
    return out;
  }

  if (delta.rank() != 3 || x.rank() != 3) {
    throw ShapeError("grad_product(conv2d) needs rank-3 operands");
  }
  const std::size_t co = delta.shape()[0];
  const std::size_t ho = delta.shape()[1];
  const std::size_t wo = delta.shape()[2];
  const std::size_t ci = x.shape()[0];
  const std::size_t h = x.shape()[1];
  const std::size_t wd = x.shape()[2];
  // kh = h + 2 pad - (ho - 1) stride, and likewise for kw.
  const std::ptrdiff_t khs = std::ptrdiff_t(h + 2 * op.padding) -
                             std::ptrdiff_t((ho - 1) * op.stride);
  const std::ptrdiff_t kws = std::ptrdiff_t(wd + 2 * op.padding) -
                             std::ptrdiff_t((wo - 1) * op.stride);
  if (khs < 1 || kws < 1) {
    throw ShapeError("grad_product(conv2d) inconsistent delta/input shapes");
  }
  const std::size_t kh = std::size_t(khs);
  const std::size_t kw = std::size_t(kws);

  Tensor out({co, ci, kh, kw});
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t c = 0; c < ci; ++c) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          double acc = 0.0;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t y =
                std::ptrdiff_t(oh * op.stride + i) - std::ptrdiff_t(op.padding);
            if (y < 0 || y >= std::ptrdiff_t(h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t xx =
                  std::ptrdiff_t(ow * op.stride + j) -
                  std::ptrdiff_t(op.padding);
              if (xx < 0 || xx >= std::ptrdiff_t(wd)) continue;
              acc += delta.at3(o, oh, ow) * x.at3(c, std::size_t(y), std::size_t(xx));
            }
          }
          out.at4(o, c, i, j) = acc;
        }
      }
    }
  }
  if (propagate_secret({&delta, &x})) out.mark_secret();
  require_finite(out, "grad_product");
  return out;
}

// W-side transpose product: the gradient with respect to x.  Linear in delta
// for fixed W, which is what lets encoded delta combinations pass through it.
//
// MatMul: w [m, n], delta [m, p] -> w^T . delta, shape [n, p].
// Conv2d: w [co, ci, kh, kw], delta [co, ho, wo] -> [ci, h, wd].
inline Tensor input_grad(const BilinearOp& op, const Tensor& w,
                         const Tensor& delta) {
  if (op.kind == BilinearOp::Kind::kMatMul) {
    if (w.rank() != 2 || delta.rank() != 2 ||
        w.shape()[0] != delta.shape()[0]) {
      throw ShapeError("input_grad(matmul) shape mismatch: " +
                       shape_string(w) + " vs " + shape_string(delta));
    }
    const std::size_t m = w.shape()[0];
    const std::size_t n = w.shape()[1];
    const std::size_t p = delta.shape()[1];
    Tensor out({n, p});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double wij = w.at2(i, j);
        if (wij == 0.0) continue;
        for (std::size_t kk = 0; kk < p; ++kk) {
          out.at2(j, kk) += wij * delta.at2(i, kk);
        }
      }
    }
    if (propagate_secret({&w, &delta})) out.mark_secret();
    require_finite(out, "input_grad");
    return out;
  }

  if (w.rank() != 4 || delta.rank() != 3 || w.shape()[0] != delta.shape()[0]) {
    throw ShapeError("input_grad(conv2d) shape mismatch: " + shape_string(w) +
                     " vs " + shape_string(delta));
  }
  const std::size_t co = w.shape()[0];
  const std::size_t ci = w.shape()[1];
  const std::size_t kh = w.shape()[2];
  const std::size_t kw = w.shape()[3];
  const std::size_t ho = delta.shape()[1];
  const std::size_t wo = delta.shape()[2];
  const std::ptrdiff_t hs = std::ptrdiff_t((ho - 1) * op.stride + kh) -
                            std::ptrdiff_t(2 * op.padding);
  const std::ptrdiff_t wds = std::ptrdiff_t((wo - 1) * op.stride + kw) -
                             std::ptrdiff_t(2 * op.padding);
  if (hs < 1 || wds < 1) {
    throw ShapeError("input_grad(conv2d) inconsistent kernel/delta shapes");
  }
  const std::size_t h = std::size_t(hs);
  const std::size_t wd = std::size_t(wds);

  Tensor out({ci, h, wd});
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const double d = delta.at3(o, oh, ow);
        if (d == 0.0) continue;
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t i = 0; i < kh; ++i) {
            const std::ptrdiff_t y =
                std::ptrdiff_t(oh * op.stride + i) - std::ptrdiff_t(op.padding);
            if (y < 0 || y >= std::ptrdiff_t(h)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              const std::ptrdiff_t xx =
                  std::ptrdiff_t(ow * op.stride + j) -
                  std::ptrdiff_t(op.padding);
              if (xx < 0 || xx >= std::ptrdiff_t(wd)) continue;
              out.at3(c, std::size_t(y), std::size_t(xx)) +=
                  d * w.at4(o, c, i, j);
            }
          }
        }
      }
    }
  }
  if (propagate_secret({&w, &delta})) out.mark_secret();
  require_finite(out, "input_grad");
  return out;
}

}  // namespace darknight
