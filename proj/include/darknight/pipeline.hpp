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

// Split execution of inference and training.
//
// The trusted context holds every secret: raw inputs, per-layer blinding
// keys (A, r), codec scalings Gamma, and the nonlinear layer state.  The
// untrusted context holds the model weights and performs every bilinear
// product on blinded data.  The only values that ever cross into the
// untrusted side are: weights, the public combination matrices B, blinded
// activations, encoded deltas, decoded weight gradients, and opaque gradient
// pages.  Crossings are observable through a BoundaryObserver and every
// ingested tensor must carry a cleared secrecy tag.
//
// Forward, per parameterized layer: the trusted side blinds the k per-sample
// inputs (plus noise) into k+1 combinations (k+2 when a redundant integrity
// equation is enabled), the untrusted side stores them and returns the
// bilinear products, the trusted side checks the redundant equation, inverts
// the combination and applies the nonlinearities.
//
// Backward, per parameterized layer: the trusted side combines per-sample
// output deltas with the public matrix B into k+1 encoded deltas, the
// untrusted side forms one product per equation against the stored blinded
// activations, and the trusted side decodes the averaged weight gradient.
// Delta propagation to the layer below reuses the same encoded deltas: the
// untrusted side computes W-side products of them, and the trusted side
// recovers the per-sample input gradients by applying the left inverse of B
// (B has full column rank by construction), then walks them through the
// nonlinearities.
//
// Training iterates virtual batches of size k.  Each virtual batch produces
// one decoded gradient set, which is serialized, stream-ciphered, tagged, and
// evicted to the untrusted side as an opaque page; after the full batch the
// pages are fetched back, verified, and averaged for a single weight update.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "darknight/bilinear.hpp"
#include "darknight/dataset.hpp"
#include "darknight/error.hpp"
#include "darknight/grad_codec.hpp"
#include "darknight/linalg.hpp"
#include "darknight/masking.hpp"
#include "darknight/model.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"
#include "darknight/tensor_io.hpp"

namespace darknight {

// ---- boundary instrumentation ----

enum class CrossingKind {
  kWeights,
  kPublicB,
  kBlindedActivation,
  kEncodedDelta,
  kWeightGrad,
  kBlob,
};

inline const char* crossing_kind_name(CrossingKind k) {
  switch (k) {
    case CrossingKind::kWeights: return "weights";
    case CrossingKind::kPublicB: return "public_b";
    case CrossingKind::kBlindedActivation: return "blinded_activation";
    case CrossingKind::kEncodedDelta: return "encoded_delta";
    case CrossingKind::kWeightGrad: return "weight_grad";
    case CrossingKind::kBlob: return "blob";
  }
  return "?";
}

class BoundaryObserver {
 public:
  virtual ~BoundaryObserver() = default;
  virtual void on_tensor(CrossingKind kind, const Tensor& t) = 0;
  virtual void on_blob(const std::vector<std::uint8_t>& bytes) = 0;
};

// ---- tamper injection ----

// Additive perturbation of one forward product: equation `eq` of linear
// layer ordinal `layer`, either the whole tensor or a single entry.
struct TamperPolicy {
  std::size_t layer = 0;
  std::size_t eq = 0;
  double epsilon = 0.0;
  bool whole_tensor = true;
  std::size_t entry = 0;
};

struct IntegrityReport {
  std::size_t layer = 0;
  double residual = 0.0;
  bool ok = true;
};

// ---- integrity check ----

// Solves the k+1 unknown products from the first k+1 equations, predicts the
// redundant equation, and compares.  Roundoff keeps honest residuals many
// orders below tau.  Keys from generate_blinding_key give the redundancy row
// equal-magnitude coordinates in the mask basis, so an additive perturbation
// of size eps on any one product moves the residual by at least eps/sqrt(k+1)
// (and by exactly eps when the redundant product itself is hit): every tamper
// above sqrt(k+1) * tau is caught regardless of which equation it lands on.
inline IntegrityReport verify_integrity(const std::vector<Tensor>& outputs,
                                        const BlindingKey& key, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParamError("integrity threshold must be finite and positive");
  }
  if (!key.redundant_row) {
    throw KeyError("verify_integrity needs a key with a redundant row");
  }
  const std::size_t n = key.k + 1;
  if (outputs.size() != n + 1) {
    throw ProtocolError("verify_integrity expected " + std::to_string(n + 1) +
                        " products, got " + std::to_string(outputs.size()));
  }
  for (std::size_t i = 1; i < outputs.size(); ++i) {
    require_same_shape(outputs[i], outputs[0], "verify_integrity");
  }

  // Solved unknowns u_j = sum_i a_inv[j][i] ybar_i, then the prediction
  // pred = sum_j a[n][j] u_j.  Folding both combinations gives the
  // prediction coefficients directly on the first n outputs.
  std::vector<double> coeffs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      acc += key.a.at2(n, j) * key.a_inv.at2(j, i);
    }
    coeffs[i] = acc;
  }
  std::vector<Tensor> first(outputs.begin(), outputs.begin() + n);
  Tensor pred = linear_combination(coeffs, first);

  IntegrityReport report;
  report.residual = linf_diff(pred, outputs[n]);
  report.ok = report.residual <= tau;
  return report;
}

// ---- untrusted context ----

// Holds the weights, stores blinded activations and encoded deltas, performs
// all bilinear products, applies weight updates, and keeps evicted gradient
// pages.  Never sees A, Gamma, r, or raw per-sample tensors; every ingested
// tensor is checked for a cleared secrecy tag.
class UntrustedContext {
 public:
  UntrustedContext(std::vector<LayerSpec> layers, std::size_t k,
                   bool redundant_row)
      : layers_(std::move(layers)), k_(k), redundant_row_(redundant_row) {
    if (k_ == 0) throw ParamError("untrusted context needs k >= 1");
    for (const LayerSpec& l : layers_) {
      l.validate();
      if (l.has_params()) linear_specs_.push_back(l);
    }
    stored_blinded_.resize(linear_specs_.size());
    stored_encoded_.resize(linear_specs_.size());
    public_b_.resize(linear_specs_.size());
  }

  void set_observer(BoundaryObserver* obs) { observer_ = obs; }

  std::size_t k() const { return k_; }
  bool redundant_row() const { return redundant_row_; }
  std::size_t linear_count() const { return linear_specs_.size(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  void load_weights(std::vector<Tensor> weights) {
    if (weights.size() != linear_specs_.size()) {
      throw ProtocolError("weight count does not match parameterized layers");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
      ingest(CrossingKind::kWeights, weights[i], "load_weights");
      const std::vector<std::size_t> want = linear_specs_[i].weight_shape();
      if (weights[i].shape() != want) {
        throw ShapeError("weight " + std::to_string(i) + " has shape " +
                         shape_string(weights[i]));
      }
    }
    weights_ = std::move(weights);
  }

  const std::vector<Tensor>& weights() const {
    require_weights();
    return weights_;
  }

  void install_tamper(const TamperPolicy& policy) {
    if (policy.layer >= linear_specs_.size()) {
      throw ParamError("tamper policy names nonexistent layer " +
                       std::to_string(policy.layer));
    }
    const std::size_t rows = k_ + 1 + (redundant_row_ ? 1 : 0);
    if (policy.eq >= rows) {
      throw ParamError("tamper policy names nonexistent equation " +
                       std::to_string(policy.eq));
    }
    if (!std::isfinite(policy.epsilon)) {
      throw ParamError("tamper epsilon must be finite");
    }
    tamper_ = policy;
  }

  void submit_public_b(std::size_t ordinal, const Tensor& b) {
    check_ordinal(ordinal);
    ingest(CrossingKind::kPublicB, b, "submit_public_b");
    public_b_[ordinal] = b;
  }

  void store_blinded(std::size_t ordinal, std::vector<Tensor> blinded) {
    check_ordinal(ordinal);
    const std::size_t rows = k_ + 1 + (redundant_row_ ? 1 : 0);
    if (blinded.size() != rows) {
      throw ProtocolError("store_blinded expected " + std::to_string(rows) +
                          " tensors, got " + std::to_string(blinded.size()));
    }
    for (const Tensor& t : blinded) {
      ingest(CrossingKind::kBlindedActivation, t, "store_blinded");
    }
    stored_blinded_[ordinal] = std::move(blinded);
  }

  // Bilinear products of the stored blinded activations with this layer's
  // weights, with any installed tamper applied.
  std::vector<Tensor> linear_products(std::size_t ordinal) {
    check_ordinal(ordinal);
    require_weights();
    const std::vector<Tensor>& xs = stored_blinded_[ordinal];
    if (xs.empty()) {
      throw ProtocolError("no stored blinded activations for layer " +
                          std::to_string(ordinal));
    }
    const BilinearOp op = linear_specs_[ordinal].op();
    std::vector<Tensor> out;
    out.reserve(xs.size());
    for (const Tensor& x : xs) {
      out.push_back(apply(op, weights_[ordinal], x));
    }
    if (tamper_ && tamper_->layer == ordinal && tamper_->epsilon != 0.0) {
      Tensor& target = out[tamper_->eq];
      if (tamper_->whole_tensor) {
        for (std::size_t i = 0; i < target.size(); ++i) {
          target[i] += tamper_->epsilon;
        }
      } else {
        if (tamper_->entry >= target.size()) {
          throw ParamError("tamper policy entry index out of range");
        }
        target[tamper_->entry] += tamper_->epsilon;
      }
    }
    return out;
  }

  // One gradient equation per encoded delta against the stored blinded
  // activations.  The encoded deltas are kept for the W-side products.
  std::vector<Tensor> coded_backward(std::size_t ordinal,
                                     std::vector<Tensor> encoded) {
    check_ordinal(ordinal);
    require_weights();
    for (const Tensor& t : encoded) {
      ingest(CrossingKind::kEncodedDelta, t, "coded_backward");
    }
    const std::vector<Tensor>& xs = stored_blinded_[ordinal];
    if (xs.empty()) {
      throw ProtocolError("no stored blinded activations for layer " +
                          std::to_string(ordinal));
    }
    if (encoded.size() != k_ + 1) {
      throw ProtocolError("coded_backward expected " + std::to_string(k_ + 1) +
                          " encoded deltas");
    }
    stored_encoded_[ordinal] = std::move(encoded);
    return coded_products(stored_encoded_[ordinal], xs,
                          linear_specs_[ordinal].op());
  }

  // W-side products of the previously submitted encoded deltas; linearity in
  // the delta argument keeps the B combination intact.
  std::vector<Tensor> input_grad_products(std::size_t ordinal) {
    check_ordinal(ordinal);
    require_weights();
    const std::vector<Tensor>& enc = stored_encoded_[ordinal];
    if (enc.empty()) {
      throw ProtocolError("no encoded deltas submitted for layer " +
                          std::to_string(ordinal));
    }
    const BilinearOp op = linear_specs_[ordinal].op();
    std::vector<Tensor> out;
    out.reserve(enc.size());
    for (const Tensor& e : enc) {
      out.push_back(input_grad(op, weights_[ordinal], e));
    }
    return out;
  }

  void apply_grads(const std::vector<Tensor>& grads, double eta) {
    require_weights();
    if (!std::isfinite(eta)) throw ParamError("learning rate must be finite");
    if (grads.size() != weights_.size()) {
      throw ProtocolError("apply_grads gradient count mismatch");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      ingest(CrossingKind::kWeightGrad, grads[i], "apply_grads");
      require_same_shape(weights_[i], grads[i], "apply_grads");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      accumulate(weights_[i], -eta, grads[i]);
      require_finite(weights_[i], "apply_grads");
    }
  }

  void store_page(std::vector<std::uint8_t> blob) {
    if (observer_) observer_->on_blob(blob);
    pages_.push_back(std::move(blob));
  }

  std::vector<std::vector<std::uint8_t>> take_pages() {
    return std::exchange(pages_, {});
  }

 private:
  void check_ordinal(std::size_t ordinal) const {
    if (ordinal >= linear_specs_.size()) {
      throw ProtocolError("linear layer ordinal out of range");
    }
  }

  void require_weights() const {
    if (weights_.size() != linear_specs_.size()) {
      throw ProtocolError("untrusted context has no weights loaded");
    }
  }

  void ingest(CrossingKind kind, const Tensor& t, const char* what) {
    if (t.secret()) {
      throw ProtocolError(std::string(what) +
                          ": secret-tagged tensor crossed the boundary");
    }
    if (observer_) observer_->on_tensor(kind, t);
  }

  std::vector<LayerSpec> layers_;
  std::vector<LayerSpec> linear_specs_;
  std::size_t k_;
  bool redundant_row_;
  std::vector<Tensor> weights_;
  std::vector<std::vector<Tensor>> stored_blinded_;
  std::vector<std::vector<Tensor>> stored_encoded_;
  std::vector<Tensor> public_b_;
  std::vector<std::vector<std::uint8_t>> pages_;
  std::optional<TamperPolicy> tamper_;
  BoundaryObserver* observer_ = nullptr;
};

inline void inject_tamper(UntrustedContext& uc, const TamperPolicy& policy) {
  uc.install_tamper(policy);
}

// ---- trusted context ----

struct ForwardResult {
  std::vector<Tensor> logits;              // per sample, rank 1, secret
  std::vector<IntegrityReport> integrity;  // per linear layer when enabled
};

class TrustedContext {
 public:
  TrustedContext(std::size_t k, const NoiseSpec& noise, std::uint64_t seed,
                 bool integrity = false, double tau = 1e-6)
      : k_(k),
        noise_(noise),
        seed_(seed),
        integrity_(integrity),
        tau_(tau) {
    if (k_ == 0) throw ParamError("trusted context needs k >= 1");
    if (!(noise_.variance > 0.0)) {
      throw ParamError("noise variance must be positive");
    }
    if (!(tau_ > 0.0)) throw ParamError("tau must be positive");
  }

  std::size_t k() const { return k_; }
  bool integrity() const { return integrity_; }
  double tau() const { return tau_; }

  // Test hook: identity masking matrices make the split path bit-identical
  // to the plain path.
  void use_identity_masks(bool on) { identity_masks_ = on; }

  // Advances the key schedule; every virtual batch draws fresh per-layer
  // keys and codecs.
  void begin_virtual_batch(std::uint64_t index) { vb_index_ = index; }

  ForwardResult run_forward(const std::vector<Tensor>& inputs,
                            UntrustedContext& uc);
  std::vector<Tensor> run_backward(const std::vector<Tensor>& logit_grads,
                                   UntrustedContext& uc);

 private:
  struct LinearState {
    BlindingKey key;
    GradCodec codec;
    Tensor b_left_inv;  // k x (k+1)
    std::size_t layer_index = 0;
  };

  std::size_t k_;
  NoiseSpec noise_;
  std::uint64_t seed_;
  bool integrity_;
  double tau_;
  bool identity_masks_ = false;
  std::uint64_t vb_index_ = 0;

  // per-run state, rebuilt by each run_forward
  std::vector<LinearState> linear_state_;
  std::vector<std::vector<Tensor>> relu_masks_;      // [layer][sample]
  std::vector<std::vector<PoolResult>> pools_;       // [layer][sample]
  std::vector<std::vector<std::size_t>> pre_shapes_; // [layer]
  std::vector<std::size_t> final_shape_;
  std::vector<LayerSpec> run_layers_;
  bool forward_done_ = false;
};

inline ForwardResult TrustedContext::run_forward(
    const std::vector<Tensor>& inputs, UntrustedContext& uc) {
  if (uc.k() != k_ || uc.redundant_row() != integrity_) {
    throw ProtocolError("trusted and untrusted contexts disagree on k or redundancy");
  }
  if (inputs.size() != k_) {
    throw ProtocolError("forward expected " + std::to_string(k_) +
                        " inputs, got " + std::to_string(inputs.size()));
  }
  const std::vector<LayerSpec>& layers = uc.layers();

  run_layers_ = layers;
  linear_state_.clear();
  relu_masks_.assign(layers.size(), {});
  pools_.assign(layers.size(), {});
  pre_shapes_.assign(layers.size(), {});

  // Raw inputs are protected the moment they enter the trusted side.
  std::vector<Tensor> cur;
  cur.reserve(k_);
  for (const Tensor& x : inputs) {
    Tensor copy = x;
    copy.mark_secret();
    cur.push_back(std::move(copy));
  }

  ForwardResult result;
  std::size_t ordinal = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& l = layers[li];
    switch (l.kind) {
      case LayerSpec::Kind::kDense:
      case LayerSpec::Kind::kConv2d: {
        pre_shapes_[li] = cur[0].shape();
        // Dense inputs become augmented columns before blinding so the bias
        // column participates in the same coded products.
        if (l.kind == LayerSpec::Kind::kDense) {
          for (Tensor& x : cur) {
            x = augment_flat(x.reshaped({x.size()}), l.in);
          }
        }
        for (std::size_t s = 1; s < cur.size(); ++s) {
          require_same_shape(cur[s], cur[0], "run_forward");
        }

        LinearState state;
        state.layer_index = li;
        const std::uint64_t key_seed = derive_seed(seed_, 0xA1, vb_index_, li);
        const std::uint64_t gamma_seed = derive_seed(seed_, 0xB2, vb_index_, li);
        NoiseSpec noise = noise_;
        noise.seed = derive_seed(seed_, 0xC3, vb_index_, li);
        if (identity_masks_) {
          CounterRng noise_rng(noise.seed);
          Tensor r = noise_rng.gaussian_tensor(cur[0].shape(), noise.mean,
                                               std::sqrt(noise.variance));
          const std::size_t n = k_ + 1;
          Tensor ident = mat_identity(n);
          if (integrity_) {
            Tensor ext({n + 1, n});
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < n; ++j) ext.at2(i, j) = ident.at2(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) ext.at2(n, j) = 1.0;
            state.key = make_blinding_key(std::move(ext), std::move(r));
          } else {
            state.key = make_blinding_key(std::move(ident), std::move(r));
          }
        } else {
          state.key = generate_blinding_key(k_, cur[0].shape(), noise,
                                            key_seed, integrity_);
        }
        state.codec = make_grad_codec_for_key(state.key, gamma_seed);

        const Tensor bt = mat_transpose(state.codec.b);
        state.b_left_inv =
            matmul(mat_invert(matmul(bt, state.codec.b)), bt);

        uc.submit_public_b(ordinal, state.codec.b);
        CodedBatch batch = blind(cur, state.key);
        uc.store_blinded(ordinal, std::move(batch.blinded));

        std::vector<Tensor> products = uc.linear_products(ordinal);
        if (integrity_) {
          IntegrityReport report = verify_integrity(products, state.key, tau_);
          report.layer = ordinal;
          result.integrity.push_back(report);
          products.resize(k_ + 1);
        }
        cur = unblind(products, state.key);
        if (l.kind == LayerSpec::Kind::kDense) {
          for (Tensor& y : cur) y = y.reshaped({l.out});
        }
        linear_state_.push_back(std::move(state));
        ++ordinal;
        break;
      }
      case LayerSpec::Kind::kRelu: {
        relu_masks_[li].reserve(cur.size());
        for (Tensor& x : cur) {
          relu_masks_[li].push_back(relu_mask(x));
          x = relu(x);
        }
        break;
      }
      case LayerSpec::Kind::kMaxPool: {
        pools_[li].reserve(cur.size());
        for (Tensor& x : cur) {
          PoolResult p = maxpool(x, l.pool_size, l.pool_stride);
          x = p.output;
          pools_[li].push_back(std::move(p));
        }
        break;
      }
    }
  }

  final_shape_ = cur[0].shape();
  result.logits.reserve(cur.size());
  for (Tensor& x : cur) {
    result.logits.push_back(x.reshaped({x.size()}));
  }
  forward_done_ = true;
  return result;
}

inline std::vector<Tensor> TrustedContext::run_backward(
    const std::vector<Tensor>& logit_grads, UntrustedContext& uc) {
  if (!forward_done_) {
    throw ProtocolError("run_backward needs a preceding run_forward");
  }
  forward_done_ = false;
  if (logit_grads.size() != k_) {
    throw ProtocolError("backward expected " + std::to_string(k_) +
                        " per-sample loss gradients");
  }
  const std::vector<LayerSpec>& layers = run_layers_;

  std::vector<Tensor> grad;
  grad.reserve(logit_grads.size());
  for (const Tensor& g : logit_grads) {
    Tensor shaped = g.reshaped(std::vector<std::size_t>(final_shape_));
    shaped.mark_secret();
    grad.push_back(std::move(shaped));
  }

  std::vector<Tensor> weight_grads(linear_state_.size());
  std::size_t ordinal = linear_state_.size();

  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerSpec& l = layers[li];
    switch (l.kind) {
      case LayerSpec::Kind::kDense:
      case LayerSpec::Kind::kConv2d: {
        --ordinal;
        LinearState& state = linear_state_[ordinal];

        std::vector<Tensor> deltas;
        deltas.reserve(k_);
        for (const Tensor& g : grad) {
          if (l.kind == LayerSpec::Kind::kDense) {
            deltas.push_back(g.reshaped({l.out, 1}));
          } else {
            deltas.push_back(g);
          }
        }

        std::vector<Tensor> encoded = encode_deltas(deltas, state.codec.b);
        std::vector<Tensor> eqs = uc.coded_backward(ordinal, std::move(encoded));
        weight_grads[ordinal] = decode_grad(eqs, state.codec);

        if (li > 0) {
          std::vector<Tensor> z = uc.input_grad_products(ordinal);
          std::vector<Tensor> next;
          next.reserve(k_);
          std::vector<double> coeffs(k_ + 1);
          for (std::size_t i = 0; i < k_; ++i) {
            for (std::size_t j = 0; j <= k_; ++j) {
              coeffs[j] = state.b_left_inv.at2(i, j);
            }
            Tensor dx = linear_combination(coeffs, z);
            dx.mark_secret();
            if (l.kind == LayerSpec::Kind::kDense) {
              Tensor trimmed({l.in});
              for (std::size_t t = 0; t < l.in; ++t) trimmed[t] = dx[t];
              trimmed.mark_secret();
              dx = trimmed.reshaped(
                  std::vector<std::size_t>(pre_shapes_[li]));
            }
            next.push_back(std::move(dx));
          }
          grad = std::move(next);
        }
        break;
      }
      case LayerSpec::Kind::kRelu: {
        for (std::size_t s = 0; s < grad.size(); ++s) {
          grad[s] = hadamard(grad[s], relu_masks_[li][s]);
        }
        break;
      }
      case LayerSpec::Kind::kMaxPool: {
        for (std::size_t s = 0; s < grad.size(); ++s) {
          grad[s] = maxpool_backward(grad[s], pools_[li][s].argmax,
                                     pools_[li][s].input_shape);
        }
        break;
      }
    }
  }

  // Decoded averaged gradients are the release form for weight updates.
  for (Tensor& g : weight_grads) g = g.declassified();
  return weight_grads;
}

// ---- free-function facade ----

inline ForwardResult forward_split(const std::vector<Tensor>& inputs,
                                   TrustedContext& tc, UntrustedContext& uc) {
  return tc.run_forward(inputs, uc);
}

inline std::vector<Tensor> backward_split(const std::vector<Tensor>& logit_grads,
                                          TrustedContext& tc,
                                          UntrustedContext& uc) {
  return tc.run_backward(logit_grads, uc);
}

inline void sgd_step(UntrustedContext& uc, const std::vector<Tensor>& grads,
                     double eta) {
  uc.apply_grads(grads, eta);
}

// ---- gradient pages ----

namespace detail {

inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void stream_cipher(std::vector<std::uint8_t>& bytes,
                          std::uint64_t key) {
  CounterRng rng(key);
  std::size_t i = 0;
  while (i < bytes.size()) {
    std::uint64_t word = rng.next_u64();
    for (int b = 0; b < 8 && i < bytes.size(); ++b, ++i) {
      bytes[i] ^= std::uint8_t(word >> (8 * b));
    }
  }
}

inline std::vector<std::uint8_t> serialize_grads(
    const std::vector<Tensor>& grads) {
  std::ostringstream os(std::ios::binary);
  put_u64_le(os, grads.size());
  for (const Tensor& g : grads) write_tensor(os, g);
  const std::string s = os.str();
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

inline std::vector<Tensor> deserialize_grads(
    const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()),
                        std::ios::binary);
  std::uint64_t count;
  if (!get_u64_le(is, count)) throw ProtocolError("corrupt gradient page");
  std::vector<Tensor> grads;
  grads.reserve(std::size_t(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    grads.push_back(read_tensor(is));
  }
  return grads;
}

}  // namespace detail

// ---- training ----

struct TrainConfig {
  std::size_t k = 4;
  std::size_t epochs = 1;
  std::size_t batch = 0;  // 0 means the whole dataset per step
  double eta = 0.1;
  LossKind loss = LossKind::kSoftmaxCrossEntropy;
  std::uint64_t seed = 1;
  NoiseSpec noise{0.0, 1e4, 0};
  bool integrity = false;
  double tau = 1e-6;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::string integrity = "off";
};

struct TrainResult {
  Model model;
  std::vector<StepMetrics> history;
};

using StepObserver =
    std::function<void(const StepMetrics&, const std::vector<Tensor>&)>;

namespace detail {

inline void validate_train_setup(const Dataset& data, const TrainConfig& cfg,
                                 std::size_t& batch_size) {
  if (cfg.k == 0) throw ParamError("training needs k >= 1");
  if (cfg.k > data.size()) {
    throw ParamError("k exceeds the sample count");
  }
  batch_size = cfg.batch == 0 ? data.size() : cfg.batch;
  if (batch_size > data.size() || data.size() % batch_size != 0) {
    throw ParamError("batch size must evenly divide the dataset");
  }
  if (batch_size % cfg.k != 0) {
    throw ParamError("virtual batch size k must evenly divide the batch");
  }
}

inline double grads_l2(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) s += v * v;
  }
  return std::sqrt(s);
}

}  // namespace detail

// Blinded trainer.  One weight update per batch, assembled from per-virtual-
// batch decoded gradients that round-trip through opaque pages held by the
// untrusted side.  Throws IntegrityError at the first redundancy violation
// when cfg.integrity is set.
inline TrainResult train(const std::vector<LayerSpec>& layers,
                         const Dataset& data, const TrainConfig& cfg,
                         const StepObserver& observer = {},
                         BoundaryObserver* boundary = nullptr) {
  std::size_t batch_size = 0;
  detail::validate_train_setup(data, cfg, batch_size);

  Model init = init_model(layers, cfg.seed);
  UntrustedContext uc(layers, cfg.k, cfg.integrity);
  uc.set_observer(boundary);
  uc.load_weights(init.weights);
  TrustedContext tc(cfg.k, cfg.noise, derive_seed(cfg.seed, 0x7EA1),
                    cfg.integrity, cfg.tau);

  TrainResult result;
  const std::size_t vb_per_batch = batch_size / cfg.k;
  std::size_t step = 0;
  std::uint64_t vb_counter = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t b0 = 0; b0 < data.size(); b0 += batch_size) {
      double batch_loss = 0.0;
      std::string integrity_status = cfg.integrity ? "ok" : "off";
      std::vector<std::uint64_t> page_tags;

      for (std::size_t vb = 0; vb < vb_per_batch; ++vb) {
        tc.begin_virtual_batch(vb_counter++);
        const std::size_t s0 = b0 + vb * cfg.k;
        std::vector<Tensor> inputs(data.features.begin() + s0,
                                   data.features.begin() + s0 + cfg.k);

        ForwardResult fwd = tc.run_forward(inputs, uc);
        for (const IntegrityReport& rep : fwd.integrity) {
          if (!rep.ok) {
            throw IntegrityError(rep.layer, rep.residual);
          }
        }

        std::vector<Tensor> logit_grads;
        logit_grads.reserve(cfg.k);
        for (std::size_t s = 0; s < cfg.k; ++s) {
          const Tensor target =
              one_hot(data.labels[s0 + s], data.num_classes);
          LossResult lr = loss_value_grad(cfg.loss, fwd.logits[s], target);
          batch_loss += lr.value;
          logit_grads.push_back(std::move(lr.grad));
        }

        std::vector<Tensor> vb_grads = tc.run_backward(logit_grads, uc);

        // Page eviction: serialize, stream-cipher with a per-page key, keep
        // the plaintext tag on the trusted side.
        std::vector<std::uint8_t> page = detail::serialize_grads(vb_grads);
        page_tags.push_back(detail::fnv1a64(page));
        detail::stream_cipher(page, derive_seed(cfg.seed, 0x9A6E, step, vb));
        uc.store_page(std::move(page));
      }

      // Fetch the pages back, verify, and average for one update.
      std::vector<std::vector<std::uint8_t>> pages = uc.take_pages();
      if (pages.size() != vb_per_batch) {
        throw ProtocolError("gradient page count mismatch");
      }
      std::vector<Tensor> total;
      for (std::size_t vb = 0; vb < pages.size(); ++vb) {
        detail::stream_cipher(pages[vb], derive_seed(cfg.seed, 0x9A6E, step, vb));
        if (detail::fnv1a64(pages[vb]) != page_tags[vb]) {
          throw ProtocolError("gradient page integrity tag mismatch");
        }
        std::vector<Tensor> vb_grads = detail::deserialize_grads(pages[vb]);
        if (total.empty()) {
          total = std::move(vb_grads);
        } else {
          if (vb_grads.size() != total.size()) {
            throw ProtocolError("gradient page layer count mismatch");
          }
          for (std::size_t i = 0; i < total.size(); ++i) {
            accumulate(total[i], 1.0, vb_grads[i]);
          }
        }
      }
      for (Tensor& g : total) g = scale(g, 1.0 / double(vb_per_batch));

      ++step;
      StepMetrics metrics;
      metrics.step = step;
      metrics.loss = batch_loss / double(batch_size);
      metrics.grad_norm = detail::grads_l2(total);
      metrics.integrity = integrity_status;
      result.history.push_back(metrics);

      sgd_step(uc, total, cfg.eta);
      if (observer) observer(metrics, uc.weights());
    }
  }

  result.model.layers = layers;
  result.model.weights = uc.weights();
  return result;
}

// Reference trainer with the same batching, aggregation tree, seeds, and
// metrics, but no masking and no offload.
inline TrainResult plain_train(const std::vector<LayerSpec>& layers,
                               const Dataset& data, const TrainConfig& cfg,
                               const StepObserver& observer = {}) {
  std::size_t batch_size = 0;
  detail::validate_train_setup(data, cfg, batch_size);

  Model model = init_model(layers, cfg.seed);
  TrainResult result;
  const std::size_t vb_per_batch = batch_size / cfg.k;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t b0 = 0; b0 < data.size(); b0 += batch_size) {
      double batch_loss = 0.0;
      std::vector<Tensor> total;

      for (std::size_t vb = 0; vb < vb_per_batch; ++vb) {
        const std::size_t s0 = b0 + vb * cfg.k;
        std::vector<Tensor> vb_grads;
        for (std::size_t s = 0; s < cfg.k; ++s) {
          const Tensor& x = data.features[s0 + s];
          PlainTrace trace = plain_forward_trace(model, x);
          const Tensor target =
              one_hot(data.labels[s0 + s], data.num_classes);
          LossResult lr = loss_value_grad(cfg.loss, trace.logits, target);
          batch_loss += lr.value;
          std::vector<Tensor> sample = plain_backward(model, trace, lr.grad);
          if (vb_grads.empty()) {
            vb_grads = std::move(sample);
          } else {
            for (std::size_t i = 0; i < vb_grads.size(); ++i) {
              accumulate(vb_grads[i], 1.0, sample[i]);
            }
          }
        }
        for (Tensor& g : vb_grads) g = scale(g, 1.0 / double(cfg.k));

        if (total.empty()) {
          total = std::move(vb_grads);
        } else {
          for (std::size_t i = 0; i < total.size(); ++i) {
            accumulate(total[i], 1.0, vb_grads[i]);
          }
        }
      }
      for (Tensor& g : total) g = scale(g, 1.0 / double(vb_per_batch));

      ++step;
      StepMetrics metrics;
      metrics.step = step;
      metrics.loss = batch_loss / double(batch_size);
      metrics.grad_norm = detail::grads_l2(total);
      metrics.integrity = "off";
      result.history.push_back(metrics);

      for (Tensor& g : total) g = g.declassified();
      sgd_step(model, total, cfg.eta);
      if (observer) observer(metrics, model.weights);
    }
  }

  result.model = std::move(model);
  return result;
}

}  // namespace darknight
