#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "proxyattn/tensor.hpp"

namespace proxyattn {

// On-disk tensor: <stem>.json holds {"shape":[...],"dtype":"f64","order":"row-major"}
// (plus optional extra keys), <stem>.bin holds the raw little-endian doubles.
//
// `stem` is a path without extension, e.g. "ckpt/layer0.pum.wq".
void save_tensor(const std::filesystem::path& stem, const Tensor& t, const nlohmann::json& extra = {});
Tensor load_tensor(const std::filesystem::path& stem, nlohmann::json* sidecar_out = nullptr);

// Single-file fixture form: {"data": nested arrays, ...}. The shape is taken
// from the nesting and must be rectangular.
Tensor tensor_from_nested_json(const nlohmann::json& nested);
Tensor load_json_tensor(const std::filesystem::path& file, nlohmann::json* doc_out = nullptr);
nlohmann::json tensor_to_nested_json(const Tensor& t);

}  // namespace proxyattn
