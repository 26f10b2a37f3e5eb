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

// Layer specifications shared by the plain engine and the split pipeline,
// plus the plain (no masking) reference engine used for cross checks.
//
// Dense layers fold the bias into the weight matrix: the input is flattened
// and extended with a constant 1, so W has shape [out, in+1] and the last
// column is the bias.  Conv layers carry no bias.  MaxPool breaks ties by
// first index in row-major scan order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "darknight/bilinear.hpp"
#include "darknight/error.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

struct LayerSpec {
  enum class Kind { kDense, kConv2d, kRelu, kMaxPool };

  Kind kind = Kind::kRelu;

  // dense
  std::size_t in = 0;
  std::size_t out = 0;

  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // maxpool
  std::size_t pool_size = 0;
  std::size_t pool_stride = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = Kind::kDense;
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec conv2d(std::size_t ci, std::size_t co, std::size_t kh,
                          std::size_t kw, std::size_t stride = 1,
                          std::size_t padding = 0) {
    LayerSpec s;
    s.kind = Kind::kConv2d;
    s.in_channels = ci;
    s.out_channels = co;
    s.kh = kh;
    s.kw = kw;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec relu() {
    LayerSpec s;
    s.kind = Kind::kRelu;
    return s;
  }
  static LayerSpec maxpool(std::size_t size, std::size_t stride) {
    LayerSpec s;
    s.kind = Kind::kMaxPool;
    s.pool_size = size;
    s.pool_stride = stride;
    return s;
  }

  bool has_params() const {
    return kind == Kind::kDense || kind == Kind::kConv2d;
  }

  std::vector<std::size_t> weight_shape() const {
    switch (kind) {
      case Kind::kDense:
        return {out, in + 1};
      case Kind::kConv2d:
        return {out_channels, in_channels, kh, kw};
      default:
        throw ParamError("layer has no weights");
    }
  }

  BilinearOp op() const {
    switch (kind) {
      case Kind::kDense:
        return BilinearOp::matmul();
      case Kind::kConv2d:
        return BilinearOp::conv2d(stride, padding);
      default:
        throw ParamError("layer has no bilinear op");
    }
  }

  void validate() const {
    switch (kind) {
      case Kind::kDense:
        if (in == 0 || out == 0) throw ParamError("dense layer needs in, out >= 1");
        break;
      case Kind::kConv2d:
        if (in_channels == 0 || out_channels == 0 || kh == 0 || kw == 0) {
          throw ParamError("conv2d layer needs positive channels and kernel");
        }
        if (stride == 0) throw ParamError("conv2d stride must be positive");
        break;
      case Kind::kMaxPool:
        if (pool_size == 0 || pool_stride == 0) {
          throw ParamError("maxpool needs positive size and stride");
        }
        break;
      case Kind::kRelu:
        break;
    }
  }
};

// Architecture plus one weight tensor per parameterized layer, in layer
// order.
struct Model {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> weights;

  std::size_t linear_count() const {
    std::size_t n = 0;
    for (const LayerSpec& l : layers) n += l.has_params() ? 1 : 0;
    return n;
  }
};

// He-uniform initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)) on the
// multiplicative weights, zero bias column for dense layers.
inline Model init_model(const std::vector<LayerSpec>& layers,
                        std::uint64_t seed) {
  Model m;
  m.layers = layers;
  std::size_t ordinal = 0;
  for (const LayerSpec& l : layers) {
    l.validate();
    if (!l.has_params()) continue;
    CounterRng rng(derive_seed(seed, 0x1217, ordinal));
    Tensor w{l.weight_shape()};
    if (l.kind == LayerSpec::Kind::kDense) {
      const double limit = std::sqrt(6.0 / double(l.in));
      for (std::size_t i = 0; i < l.out; ++i) {
        for (std::size_t j = 0; j < l.in; ++j) {
          w.at2(i, j) = rng.next_uniform(-limit, limit);
        }
        w.at2(i, l.in) = 0.0;
      }
    } else {
      const double fan_in = double(l.in_channels * l.kh * l.kw);
      const double limit = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = rng.next_uniform(-limit, limit);
      }
    }
    m.weights.push_back(std::move(w));
    ++ordinal;
  }
  return m;
}

// ---- nonlinearities ----

inline Tensor relu(const Tensor& x) {
  Tensor out{std::vector<std::size_t>(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (x.secret()) out.mark_secret();
  return out;
}

inline Tensor relu_mask(const Tensor& x) {
  Tensor out{std::vector<std::size_t>(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? 1.0 : 0.0;
  if (x.secret()) out.mark_secret();
  return out;
}

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output entry
  std::vector<std::size_t> input_shape;
};

inline PoolResult maxpool(const Tensor& x, std::size_t size,
                          std::size_t stride) {
  if (x.rank() != 3) throw ShapeError("maxpool needs a rank-3 input");
  if (size == 0 || stride == 0) throw ParamError("maxpool needs positive size/stride");
  const std::size_t c = x.shape()[0];
  const std::size_t h = x.shape()[1];
  const std::size_t w = x.shape()[2];
  if (h < size || w < size) throw ShapeError("maxpool window exceeds input");
  if ((h - size) % stride != 0 || (w - size) % stride != 0) {
    throw ShapeError("maxpool output size is not integral");
  }
  const std::size_t ho = (h - size) / stride + 1;
  const std::size_t wo = (w - size) / stride + 1;

  PoolResult res;
  res.output = Tensor({c, ho, wo});
  res.argmax.resize(c * ho * wo);
  res.input_shape = {c, h, w};
  std::size_t outpos = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        double best = x.at3(ch, oh * stride, ow * stride);
        std::size_t best_idx = (ch * h + oh * stride) * w + ow * stride;
        for (std::size_t i = 0; i < size; ++i) {
          for (std::size_t j = 0; j < size; ++j) {
            const std::size_t y = oh * stride + i;
            const std::size_t xx = ow * stride + j;
            const double v = x.at3(ch, y, xx);
            // Strict comparison keeps the first index on ties.
            if (v > best) {
              best = v;
              best_idx = (ch * h + y) * w + xx;
            }
          }
        }
        res.output.at3(ch, oh, ow) = best;
        res.argmax[outpos++] = best_idx;
      }
    }
  }
  if (x.secret()) res.output.mark_secret();
  return res;
}

inline Tensor maxpool_backward(const Tensor& grad_out,
                               const std::vector<std::size_t>& argmax,
                               const std::vector<std::size_t>& input_shape) {
  Tensor grad_in{std::vector<std::size_t>(input_shape)};
  if (grad_out.size() != argmax.size()) {
    throw ShapeError("maxpool_backward gradient/argmax size mismatch");
  }
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    grad_in[argmax[i]] += grad_out[i];
  }
  if (grad_out.secret()) grad_in.mark_secret();
  return grad_in;
}

// ---- dense input augmentation ----

inline Tensor augment_flat(const Tensor& x, std::size_t expected_in) {
  if (x.size() != expected_in) {
    throw ShapeError("dense layer expected " + std::to_string(expected_in) +
                     " inputs, got " + std::to_string(x.size()));
  }
  Tensor out({expected_in + 1, 1});
  for (std::size_t i = 0; i < expected_in; ++i) out[i] = x[i];
  out[expected_in] = 1.0;
  if (x.secret()) out.mark_secret();
  return out;
}

// ---- losses ----

enum class LossKind { kMse, kSoftmaxCrossEntropy };

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d loss / d logits, same shape as logits
};

inline Tensor softmax(const Tensor& logits) {
  Tensor out{std::vector<std::size_t>(logits.shape())};
  double mx = logits[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= z;
  if (logits.secret()) out.mark_secret();
  return out;
}

// MSE: loss = 1/2 ||logits - target||^2, grad = logits - target.
// Softmax cross entropy: loss = -sum target_i log softmax(logits)_i,
// grad = softmax(logits) - target.
inline LossResult loss_value_grad(LossKind kind, const Tensor& logits,
                                  const Tensor& target) {
  require_same_shape(logits, target, "loss");
  LossResult res;
  if (kind == LossKind::kMse) {
    res.grad = sub(logits, target);
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double d = logits[i] - target[i];
      s += d * d;
    }
    res.value = 0.5 * s;
  } else {
    const Tensor p = softmax(logits);
    res.grad = sub(p, target);
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (target[i] != 0.0) {
        s -= target[i] * std::log(std::max(p[i], 1e-300));
      }
    }
    res.value = s;
  }
  res.grad.mark_secret();
  return res;
}

// ---- plain engine ----

// Per-sample forward trace: everything the plain backward pass needs.
struct PlainTrace {
  // Input to each parameterized layer in the bilinear's expected shape
  // (augmented column for dense, raw volume for conv), indexed by layer
  // position in the model.
  std::vector<Tensor> linear_inputs;
  std::vector<Tensor> relu_masks;
  std::vector<PoolResult> pools;
  std::vector<std::vector<std::size_t>> pre_linear_shapes;
  std::vector<std::size_t> final_shape;
  Tensor logits;  // flattened rank-1
};

namespace detail {

inline Tensor flatten(const Tensor& x) {
  Tensor out = x.reshaped({x.size()});
  return out;
}

}  // namespace detail

inline PlainTrace plain_forward_trace(const Model& model, const Tensor& input) {
  PlainTrace trace;
  trace.linear_inputs.resize(model.layers.size());
  trace.relu_masks.resize(model.layers.size());
  trace.pools.resize(model.layers.size());
  trace.pre_linear_shapes.resize(model.layers.size());

  Tensor cur = input;
  std::size_t widx = 0;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    switch (l.kind) {
      case LayerSpec::Kind::kDense: {
        trace.pre_linear_shapes[li] = cur.shape();
        Tensor aug = augment_flat(detail::flatten(cur), l.in);
        trace.linear_inputs[li] = aug;
        Tensor y = matmul(model.weights[widx], aug);
        cur = y.reshaped({l.out});
        ++widx;
        break;
      }
      case LayerSpec::Kind::kConv2d: {
        trace.pre_linear_shapes[li] = cur.shape();
        trace.linear_inputs[li] = cur;
        cur = conv2d(model.weights[widx], cur, l.stride, l.padding);
        ++widx;
        break;
      }
      case LayerSpec::Kind::kRelu: {
        trace.relu_masks[li] = relu_mask(cur);
        cur = relu(cur);
        break;
      }
      case LayerSpec::Kind::kMaxPool: {
        trace.pools[li] = maxpool(cur, l.pool_size, l.pool_stride);
        cur = trace.pools[li].output;
        break;
      }
    }
  }
  trace.final_shape = cur.shape();
  trace.logits = detail::flatten(cur);
  return trace;
}

inline Tensor plain_forward(const Model& model, const Tensor& input) {
  return plain_forward_trace(model, input).logits;
}

// Per-sample backward pass from d loss / d logits; returns one gradient per
// parameterized layer, in layer order.
inline std::vector<Tensor> plain_backward(const Model& model,
                                          const PlainTrace& trace,
                                          const Tensor& logit_grad) {
  std::vector<Tensor> grads(model.linear_count());
  if (model.layers.empty()) return grads;

  std::size_t widx = model.linear_count();
  // With respect to the current layer output, in that layer's shape.
  Tensor grad =
      logit_grad.reshaped(std::vector<std::size_t>(trace.final_shape));

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerSpec& l = model.layers[li];
    switch (l.kind) {
      case LayerSpec::Kind::kDense: {
        --widx;
        Tensor delta = grad.reshaped({l.out, 1});
        grads[widx] = grad_product(BilinearOp::matmul(), delta,
                                   trace.linear_inputs[li]);
        if (li > 0) {
          Tensor dx = input_grad(BilinearOp::matmul(), model.weights[widx],
                                 delta);
          // Drop the constant-1 row and restore the pre-flatten shape.
          Tensor trimmed({l.in});
          for (std::size_t i = 0; i < l.in; ++i) trimmed[i] = dx[i];
          if (dx.secret()) trimmed.mark_secret();
          grad = trimmed.reshaped(
              std::vector<std::size_t>(trace.pre_linear_shapes[li]));
        }
        break;
      }
      case LayerSpec::Kind::kConv2d: {
        --widx;
        grads[widx] =
            grad_product(l.op(), grad, trace.linear_inputs[li]);
        if (li > 0) {
          grad = input_grad(l.op(), model.weights[widx], grad);
        }
        break;
      }
      case LayerSpec::Kind::kRelu: {
        grad = hadamard(grad, trace.relu_masks[li]);
        break;
      }
      case LayerSpec::Kind::kMaxPool: {
        grad = maxpool_backward(grad, trace.pools[li].argmax,
                                trace.pools[li].input_shape);
        break;
      }
    }
  }
  return grads;
}

// W <- W - eta * grad for each parameterized layer.
inline void sgd_step(Model& model, const std::vector<Tensor>& grads,
                     double eta) {
  if (grads.size() != model.weights.size()) {
    throw ProtocolError("sgd_step gradient count mismatch");
  }
  if (!std::isfinite(eta)) throw ParamError("learning rate must be finite");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require_same_shape(model.weights[i], grads[i], "sgd_step");
    accumulate(model.weights[i], -eta, grads[i]);
    require_finite(model.weights[i], "sgd_step");
  }
}

}  // namespace darknight
