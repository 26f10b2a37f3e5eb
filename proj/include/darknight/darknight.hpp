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

#include "darknight/bilinear.hpp"
#include "darknight/dataset.hpp"
#include "darknight/error.hpp"
#include "darknight/grad_codec.hpp"
#include "darknight/leakage.hpp"
#include "darknight/linalg.hpp"
#include "darknight/masking.hpp"
#include "darknight/model.hpp"
#include "darknight/model_io.hpp"
#include "darknight/pipeline.hpp"
#include "darknight/rng.hpp"
#include "darknight/tensor.hpp"
#include "darknight/tensor_io.hpp"
