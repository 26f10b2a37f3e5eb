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

// Model serialization: a JSON manifest listing the layer specs plus one
// DKTENSOR file per parameterized layer, stored next to the manifest.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "darknight/error.hpp"
#include "darknight/model.hpp"
#include "darknight/tensor_io.hpp"

namespace darknight {

namespace detail {

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  nlohmann::json j;
  switch (l.kind) {
    case LayerSpec::Kind::kDense:
      j["kind"] = "dense";
      j["in"] = l.in;
      j["out"] = l.out;
      break;
    case LayerSpec::Kind::kConv2d:
      j["kind"] = "conv2d";
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kh"] = l.kh;
      j["kw"] = l.kw;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerSpec::Kind::kRelu:
      j["kind"] = "relu";
      break;
    case LayerSpec::Kind::kMaxPool:
      j["kind"] = "maxpool";
      j["size"] = l.pool_size;
      j["stride"] = l.pool_stride;
      break;
  }
  return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  if (!j.contains("kind") || !j["kind"].is_string()) {
    throw IoError("layer entry is missing its kind");
  }
  const std::string kind = j["kind"].get<std::string>();
  auto u = [&](const char* key, std::size_t fallback,
               bool required) -> std::size_t {
    if (!j.contains(key)) {
      if (required) {
        throw IoError(std::string("layer '") + kind + "' is missing " + key);
      }
      return fallback;
    }
    if (!j[key].is_number_unsigned()) {
      throw IoError(std::string("layer field ") + key +
                    " must be a non-negative integer");
    }
    return j[key].get<std::size_t>();
  };
  LayerSpec l;
  if (kind == "dense") {
    l = LayerSpec::dense(u("in", 0, true), u("out", 0, true));
  } else if (kind == "conv2d") {
    l = LayerSpec::conv2d(u("in_channels", 0, true), u("out_channels", 0, true),
                          u("kh", 0, true), u("kw", 0, true),
                          u("stride", 1, false), u("padding", 0, false));
  } else if (kind == "relu") {
    l = LayerSpec::relu();
  } else if (kind == "maxpool") {
    l = LayerSpec::maxpool(u("size", 0, true), u("stride", 0, true));
  } else {
    throw IoError("unknown layer kind '" + kind + "'");
  }
  l.validate();
  return l;
}

}  // namespace detail

// Writes manifest.json plus layer<i>.dkt files into the directory.
inline void save_model(const std::string& dir, const Model& model) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create model directory " + dir);

  nlohmann::json manifest;
  manifest["format"] = "darknight-model";
  manifest["version"] = 1;
  manifest["layers"] = nlohmann::json::array();

  std::size_t widx = 0;
  for (const LayerSpec& l : model.layers) {
    nlohmann::json j = detail::layer_to_json(l);
    if (l.has_params()) {
      const std::string name = "layer" + std::to_string(widx) + ".dkt";
      save_tensor((fs::path(dir) / name).string(), model.weights[widx]);
      j["weights"] = name;
      ++widx;
    }
    manifest["layers"].push_back(j);
  }
  if (widx != model.weights.size()) {
    throw ProtocolError("model has more weights than parameterized layers");
  }

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("manifest write failed in " + dir);
}

// Loads a model from a manifest path (either the manifest file itself or the
// directory that contains manifest.json).
inline Model load_model(const std::string& path) {
  namespace fs = std::filesystem;
  fs::path manifest_path(path);
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";

  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open model manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest parse error: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "darknight-model") {
    throw IoError("not a model manifest: " + manifest_path.string());
  }
  if (!manifest.contains("layers") || !manifest["layers"].is_array()) {
    throw IoError("manifest has no layers array");
  }

  Model model;
  const fs::path dir = manifest_path.parent_path();
  for (const nlohmann::json& j : manifest["layers"]) {
    LayerSpec l = detail::layer_from_json(j);
    model.layers.push_back(l);
    if (l.has_params()) {
      if (!j.contains("weights") || !j["weights"].is_string()) {
        throw IoError("parameterized layer has no weights file");
      }
      const fs::path wpath = dir / j["weights"].get<std::string>();
      Tensor w = load_tensor(wpath.string());
      if (w.shape() != l.weight_shape()) {
        throw IoError("weight tensor " + wpath.string() +
                      " has the wrong shape " + shape_string(w));
      }
      model.weights.push_back(std::move(w));
    }
  }
  return model;
}

}  // namespace darknight
