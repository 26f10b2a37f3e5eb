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

#include <stdexcept>
#include <string>

namespace darknight {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor rank or dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (k == 0, non-positive variance, bad stride, ...).
class ParamError : public Error {
 public:
  using Error::Error;
};

// Tensor or model file cannot be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Trusted/untrusted boundary misuse: wrong tensor counts, missing stored
// activations, or an attempt to hand secret-tagged data to the untrusted side.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Masking matrix is singular, rank deficient, or incompatible with the batch.
class KeyError : public Error {
 public:
  using Error::Error;
};

// Input cannot be normalized (zero norm).
class NormalizationError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad CLI configuration (unknown key, unparsable value, conflicting options).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Redundancy check failed during a training run.
class IntegrityError : public Error {
 public:
  IntegrityError(std::size_t layer, double residual)
      : Error("integrity violation at layer " + std::to_string(layer) +
              ", residual " + std::to_string(residual)),
        layer_(layer),
        residual_(residual) {}

  std::size_t layer() const { return layer_; }
  double residual() const { return residual_; }

 private:
  std::size_t layer_;
  double residual_;
};

}  // namespace darknight
