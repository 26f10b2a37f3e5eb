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
#include <cstdint>
#include <vector>

#include "darknight/error.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"

namespace darknight {

struct Dataset {
  std::vector<Tensor> features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return features.size(); }
};

inline Tensor one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw ParamError("label out of range");
  Tensor t({classes});
  t[label] = 1.0;
  return t;
}

// Two 2-D Gaussian blobs centered at (-1,-1) and (+1,+1), alternating
// labels so any contiguous slice stays class balanced.
inline Dataset make_blobs(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ParamError("blobs dataset needs n >= 1");
  Dataset d;
  d.num_classes = 2;
  CounterRng rng(seed);
  const double spread = 0.4;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double cx = label == 0 ? -1.0 : 1.0;
    const double cy = label == 0 ? -1.0 : 1.0;
    Tensor x({2});
    x[0] = rng.next_gaussian(cx, spread);
    x[1] = rng.next_gaussian(cy, spread);
    d.features.push_back(std::move(x));
    d.labels.push_back(label);
  }
  return d;
}

// The four XOR points with binary labels.
inline Dataset make_xor() {
  Dataset d;
  d.num_classes = 2;
  const double pts[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  const std::size_t labels[4] = {0, 1, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor x({2});
    x[0] = pts[i][0];
    x[1] = pts[i][1];
    d.features.push_back(std::move(x));
    d.labels.push_back(labels[i]);
  }
  return d;
}

}  // namespace darknight
