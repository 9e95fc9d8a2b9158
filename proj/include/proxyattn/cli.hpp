#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxyattn/model.hpp"
#include "proxyattn/trainer.hpp"

namespace proxyattn {

// One flat JSON object holding every ModelConfig and TrainConfig key. The
// training seed also initializes the model.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

nlohmann::json to_json(const RunConfig& c);
// Unknown keys and malformed values raise ConfigError; messages carry
// "<source>:<line>:<col>" and the offending line when it can be located.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& file);

// Raw matrices for one (layer, joint) selection; head = nullopt averages the
// heads after the softmax.
struct AttentionExport {
    Tensor self_attn;  // (T, T) softmax(QK^T / sqrt(C_f))
    Tensor agg;        // (T, T) M_{F->P} M_{P->F}
    Tensor fused;      // (T, T) softmax(fused logits / sqrt(C_f))
    Tensor p_to_f;     // (L, T)
    Tensor f_to_p;     // (T, L)
};

AttentionExport extract_attention(Model& model, const Tensor& x, std::size_t layer, std::size_t joint,
                                  std::optional<std::size_t> head);

// Affine rescale to [0, 1]; a constant matrix maps to zeros.
Tensor min_max_normalize(const Tensor& m);
// RFC 4180 rows, no header, full round-trip precision.
void write_csv(const std::filesystem::path& file, const Tensor& m);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

// argv[0] is the program name.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace proxyattn
