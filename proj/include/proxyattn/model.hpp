#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxyattn/autograd.hpp"
#include "proxyattn/rng.hpp"

namespace proxyattn {

enum class ProxyModuleKind { cross_attention, mlp };

ProxyModuleKind parse_module_kind(const std::string& s);
std::string to_string(ProxyModuleKind k);

struct ModelConfig {
    std::size_t frames = 243;      // T
    std::size_t joints = 17;       // J
    std::size_t in_channels = 2;   // C_in
    std::size_t hidden = 128;      // C_f
    std::size_t out_channels = 3;  // C_out
    std::size_t proxy_length = 81; // L
    std::size_t layers = 16;       // N
    std::size_t heads = 8;         // H
    std::size_t ffn_ratio = 4;     // feed-forward hidden = ffn_ratio * C_f
    std::size_t head_ratio = 4;    // regression head hidden = head_ratio * C_f

    Distribution proxy_init = Distribution::gaussian;
    double proxy_init_scale = 0.02;
    double weight_init_std = 0.02;

    // Per-layer fusion scalar mu ~ U(lo, hi); lo == hi pins it to that value.
    double mu_init_lo = 0.0;
    double mu_init_hi = 1.0;
    bool mu_trainable = true;

    ProxyModuleKind pum_kind = ProxyModuleKind::cross_attention;
    ProxyModuleKind pim_kind = ProxyModuleKind::cross_attention;
    bool encoder_enabled = true;

    // Millimetres per unit of regression-head output.
    double output_scale = 1000.0;

    // Published defaults for a clip of `frames` frames: L = floor(T / 3).
    static ModelConfig defaults_for(std::size_t frames);

    std::size_t head_dim() const { return hidden / heads; }
    DistributionSpec proxy_distribution() const;
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
// Missing keys keep their defaults; unknown keys are ignored by this function
// (callers that need strictness check keys themselves).
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// Attention maps captured from one layer. Layouts use (joint, head, ...).
struct LayerTrace {
    Tensor m_p_to_f;        // (J, H, L, T)
    Tensor m_f_to_p;        // (J, H, T, L)
    Tensor m_agg;           // (J, H, T, T), row-stochastic
    Tensor m_fused_logits;  // (J, H, T, T), sigmoid(mu)*M + (1-sigmoid(mu))*QK^T
    Tensor m_self_logits;   // (J, H, T, T), QK^T of the proxy attention module
    double sigmoid_mu = 0.0;
};

struct ForwardOutput {
    Tensor y_hat;  // (T, J, C_out)
    std::vector<LayerTrace> traces;
};

struct ForwardVars {
    Var y_hat;  // (T, J, C_out)
    std::vector<LayerTrace> traces;
};

class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    // Parameters in registration order; pointers are stable for the model's lifetime.
    std::vector<Parameter*> parameters();
    std::vector<Parameter*> trainable_parameters();
    Parameter& param(const std::string& name);
    bool has_param(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t param_count() const;
    void zero_grad();

    // Value, output-projection and second feed-forward layer weights: the
    // parameters that gate every residual branch.
    std::vector<Parameter*> residual_branch_parameters();

    // Graph building blocks. All activations use the per-joint temporal
    // layout (J, T, C) between layers.
    ForwardVars forward(Tape& tape, Var x, bool trace = false);
    Var embed(Tape& tape, Var x);
    // (J, T, C_f) -> (T, J, C_out)
    Var regress(Tape& tape, Var features);

    // Tape-free convenience wrapper.
    ForwardOutput predict(const Tensor& x, bool trace = false);

    // Per-module steps of layer `layer`, exposed for testing and analysis.
    // Spatial then temporal self-attention; input and output are (T, J, C).
    Var st_encoder_block(Tape& tape, std::size_t layer, Var b);
    struct ProxyUpdate {
        Var proxy;     // (J, L, C)
        Var m_p_to_f;  // (J, H, L, T)
    };
    ProxyUpdate pum_forward(Tape& tape, std::size_t layer, Var proxy, Var f);
    struct ProxyInvocation {
        Var f_tilde;   // (J, T, C)
        Var m_f_to_p;  // (J, H, T, L)
    };
    ProxyInvocation pim_forward(Tape& tape, std::size_t layer, Var f, Var proxy);
    struct ProxyAttention {
        Var f_bar;          // (J, T, C)
        Var fused_logits;   // (J, H, T, T)
        Var self_logits;    // (J, H, T, T)
        Var gate;           // sigmoid(mu), one element
    };
    ProxyAttention pam_forward(Tape& tape, std::size_t layer, Var f_tilde, Var m_agg);

private:
    struct Norm {
        Parameter* gain;
        Parameter* bias;
    };
    struct FeedForward {
        Norm norm;
        Parameter *w1, *b1, *w2, *b2;
    };
    struct AttentionParams {
        Norm norm_q;
        Norm norm_kv;  // unused for self-attention
        Parameter *wq, *wk, *wv, *wo, *bo;
        Parameter *mw1, *mb1, *mw2, *mb2;  // MLP variant only
        FeedForward ffn;
    };
    struct Layer {
        AttentionParams enc_spatial, enc_temporal, pum, pim, pam;
        Parameter* mu;
    };
    struct CrossResult {
        Var out;
        Var probs;  // (B, H, Sq, Sk)
    };

    Parameter* add_param(const std::string& name, Tensor value, bool trainable = true);
    Norm make_norm(const std::string& prefix);
    FeedForward make_ffn(const std::string& prefix);
    AttentionParams make_attention(const std::string& prefix, bool cross, bool mlp);

    Var p(Tape& t, Parameter* prm) { return t.param(*prm); }
    Var norm(Tape& t, Var x, const Norm& n);
    Var feed_forward(Tape& t, Var x, const FeedForward& f);
    Var split_heads(Var x);
    Var merge_heads(Var x);
    // Pre-norm residual multi-head attention of `q_src` over `kv_src`.
    CrossResult attention_block(Tape& t, Var q_src, Var kv_src, const AttentionParams& a, bool self);
    // MLP replacement: pooled counterpart features through a two-layer MLP,
    // broadcast over the query sequence.
    Var mlp_block(Tape& t, Var q_src, Var kv_src, const AttentionParams& a);
    Var encoder_block(Tape& t, Var f, const AttentionParams& a);
    Var uniform_attention(Tape& t, std::size_t rows, std::size_t cols, std::size_t sq, std::size_t sk);

    ModelConfig cfg_;
    std::uint64_t seed_;
    Rng init_rng_;
    std::deque<Parameter> params_;
    std::map<std::string, std::size_t> index_;

    Parameter *embed_w_, *embed_b_, *pos_t_, *pos_s_;
    Parameter* proxy_;
    std::vector<Layer> layers_;
    Parameter *head_w1_, *head_b1_, *head_w2_, *head_b2_;
};

// M = M_{F->P} * M_{P->F} per (joint, head): (J,H,T,L) x (J,H,L,T) -> (J,H,T,T).
Var aggregate_attention(Var m_f_to_p, Var m_p_to_f);

// Exact parameter count for a configuration, without allocating weights.
std::size_t param_count(const ModelConfig& cfg);

struct ParamBreakdown {
    std::string module;
    std::size_t count = 0;
};
// Counts per module group (embed, proxy, encoder, pum, pim, pam, mu, head).
std::vector<ParamBreakdown> param_breakdown(const ModelConfig& cfg);

// Gradient-check grouping: "layer3.pam.wq" -> "layer3.pam", "proxy" -> "proxy".
std::string param_group(const std::string& name);

}  // namespace proxyattn
