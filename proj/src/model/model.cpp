#include "proxyattn/model.hpp"

#include <cmath>

#include "proxyattn/ops.hpp"

namespace proxyattn {

using nlohmann::json;

ProxyModuleKind parse_module_kind(const std::string& s) {
    if (s == "cross_attention") return ProxyModuleKind::cross_attention;
    if (s == "mlp") return ProxyModuleKind::mlp;
    throw ConfigError("unknown proxy module kind '" + s + "' (expected cross_attention or mlp)");
}

std::string to_string(ProxyModuleKind k) { return k == ProxyModuleKind::mlp ? "mlp" : "cross_attention"; }

ModelConfig ModelConfig::defaults_for(std::size_t frames) {
    ModelConfig c;
    c.frames = frames;
    c.proxy_length = std::max<std::size_t>(1, frames / 3);
    return c;
}

DistributionSpec ModelConfig::proxy_distribution() const {
    switch (proxy_init) {
    case Distribution::gaussian: return DistributionSpec::gaussian(proxy_init_scale);
    case Distribution::laplacian: return DistributionSpec::laplacian(proxy_init_scale);
    case Distribution::uniform: return DistributionSpec::uniform(-proxy_init_scale, proxy_init_scale);
    }
    return DistributionSpec::gaussian(proxy_init_scale);
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid model config: " + what);
    };
    need(frames >= 1, "frames must be >= 1");
    need(joints >= 1, "joints must be >= 1");
    need(in_channels >= 1, "in_channels must be >= 1");
    need(out_channels >= 1, "out_channels must be >= 1");
    need(hidden >= 2, "hidden must be >= 2");
    need(heads >= 1 && hidden % heads == 0, "hidden (" + std::to_string(hidden) + ") must be divisible by heads (" +
                                                std::to_string(heads) + ")");
    need(proxy_length >= 1, "proxy_length must be >= 1");
    need(layers >= 1, "layers must be >= 1");
    need(ffn_ratio >= 1 && head_ratio >= 1, "ffn_ratio and head_ratio must be >= 1");
    need(proxy_init_scale > 0, "proxy_init_scale must be > 0");
    need(weight_init_std > 0, "weight_init_std must be > 0");
    need(mu_init_lo <= mu_init_hi, "mu range must satisfy lo <= hi");
    need(std::isfinite(output_scale) && output_scale > 0, "output_scale must be > 0");
}

json to_json(const ModelConfig& c) {
    return json{{"frames", c.frames},
                {"joints", c.joints},
                {"in_channels", c.in_channels},
                {"hidden", c.hidden},
                {"out_channels", c.out_channels},
                {"proxy_length", c.proxy_length},
                {"layers", c.layers},
                {"heads", c.heads},
                {"ffn_ratio", c.ffn_ratio},
                {"head_ratio", c.head_ratio},
                {"proxy_init", to_string(c.proxy_init)},
                {"proxy_init_scale", c.proxy_init_scale},
                {"weight_init_std", c.weight_init_std},
                {"mu_init_range", {c.mu_init_lo, c.mu_init_hi}},
                {"mu_trainable", c.mu_trainable},
                {"pum_kind", to_string(c.pum_kind)},
                {"pim_kind", to_string(c.pim_kind)},
                {"encoder_enabled", c.encoder_enabled},
                {"output_scale", c.output_scale}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    };
    const bool frames_given = j.contains("frames");
    get("frames", c.frames);
    if (frames_given && !j.contains("proxy_length")) c.proxy_length = std::max<std::size_t>(1, c.frames / 3);
    get("joints", c.joints);
    get("in_channels", c.in_channels);
    get("hidden", c.hidden);
    get("out_channels", c.out_channels);
    get("proxy_length", c.proxy_length);
    get("layers", c.layers);
    get("heads", c.heads);
    get("ffn_ratio", c.ffn_ratio);
    get("head_ratio", c.head_ratio);
    get("proxy_init_scale", c.proxy_init_scale);
    get("weight_init_std", c.weight_init_std);
    get("mu_trainable", c.mu_trainable);
    get("encoder_enabled", c.encoder_enabled);
    get("output_scale", c.output_scale);
    if (j.contains("proxy_init")) c.proxy_init = parse_distribution(j.at("proxy_init").get<std::string>());
    if (j.contains("pum_kind")) c.pum_kind = parse_module_kind(j.at("pum_kind").get<std::string>());
    if (j.contains("pim_kind")) c.pim_kind = parse_module_kind(j.at("pim_kind").get<std::string>());
    if (j.contains("mu_init_range")) {
        const auto& r = j.at("mu_init_range");
        if (!r.is_array() || r.size() != 2) throw ConfigError("mu_init_range must be a [lo, hi] pair");
        c.mu_init_lo = r[0].get<double>();
        c.mu_init_hi = r[1].get<double>();
    }
    return c;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed), init_rng_(seed) {
    cfg_.validate();
    const std::size_t C = cfg_.hidden;
    const auto w = DistributionSpec::gaussian(cfg_.weight_init_std);

    embed_w_ = add_param("embed.proj.w", init_rng_.sample(w, {cfg_.in_channels, C}));
    embed_b_ = add_param("embed.proj.b", Tensor::zeros({C}));
    pos_t_ = add_param("embed.pos_t", init_rng_.sample(w, {cfg_.frames, C}));
    pos_s_ = add_param("embed.pos_s", init_rng_.sample(w, {cfg_.joints, C}));
    proxy_ = add_param("proxy", init_rng_.sample(cfg_.proxy_distribution(), {cfg_.joints, cfg_.proxy_length, C}));

    layers_.reserve(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        Layer layer{};
        if (cfg_.encoder_enabled) {
            layer.enc_spatial = make_attention(pre + "enc_s", false, false);
            layer.enc_temporal = make_attention(pre + "enc_t", false, false);
        }
        layer.pum = make_attention(pre + "pum", true, cfg_.pum_kind == ProxyModuleKind::mlp);
        layer.pim = make_attention(pre + "pim", true, cfg_.pim_kind == ProxyModuleKind::mlp);
        layer.pam = make_attention(pre + "pam", false, false);
        const double mu0 = cfg_.mu_init_lo == cfg_.mu_init_hi ? cfg_.mu_init_lo
                                                               : init_rng_.uniform(cfg_.mu_init_lo, cfg_.mu_init_hi);
        layer.mu = add_param(pre + "mu", Tensor::scalar(mu0), cfg_.mu_trainable);
        layers_.push_back(layer);
    }

    const std::size_t hh = cfg_.head_ratio * C;
    head_w1_ = add_param("head.w1", init_rng_.sample(w, {C, hh}));
    head_b1_ = add_param("head.b1", Tensor::zeros({hh}));
    head_w2_ = add_param("head.w2", init_rng_.sample(w, {hh, cfg_.out_channels}));
    head_b2_ = add_param("head.b2", Tensor::zeros({cfg_.out_channels}));
}

Parameter* Model::add_param(const std::string& name, Tensor value, bool trainable) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value), trainable);
    return &params_.back();
}

Model::Norm Model::make_norm(const std::string& prefix) {
    const std::size_t C = cfg_.hidden;
    return Norm{add_param(prefix + ".g", Tensor::ones({C})), add_param(prefix + ".b", Tensor::zeros({C}))};
}

Model::FeedForward Model::make_ffn(const std::string& prefix) {
    const std::size_t C = cfg_.hidden;
    const std::size_t hid = cfg_.ffn_ratio * C;
    const auto w = DistributionSpec::gaussian(cfg_.weight_init_std);
    FeedForward f{};
    f.norm = make_norm(prefix + ".ln");
    f.w1 = add_param(prefix + ".w1", init_rng_.sample(w, {C, hid}));
    f.b1 = add_param(prefix + ".b1", Tensor::zeros({hid}));
    f.w2 = add_param(prefix + ".w2", init_rng_.sample(w, {hid, C}));
    f.b2 = add_param(prefix + ".b2", Tensor::zeros({C}));
    return f;
}

Model::AttentionParams Model::make_attention(const std::string& prefix, bool cross, bool mlp) {
    const std::size_t C = cfg_.hidden;
    const auto w = DistributionSpec::gaussian(cfg_.weight_init_std);
    AttentionParams a{};
    if (mlp) {
        const std::size_t hid = cfg_.ffn_ratio * C;
        a.norm_kv = make_norm(prefix + ".ln_kv");
        a.mw1 = add_param(prefix + ".mlp.w1", init_rng_.sample(w, {C, hid}));
        a.mb1 = add_param(prefix + ".mlp.b1", Tensor::zeros({hid}));
        a.mw2 = add_param(prefix + ".mlp.w2", init_rng_.sample(w, {hid, C}));
        a.mb2 = add_param(prefix + ".mlp.b2", Tensor::zeros({C}));
    } else {
        a.norm_q = make_norm(prefix + ".ln_q");
        if (cross) a.norm_kv = make_norm(prefix + ".ln_kv");
        a.wq = add_param(prefix + ".wq", init_rng_.sample(w, {C, C}));
        a.wk = add_param(prefix + ".wk", init_rng_.sample(w, {C, C}));
        a.wv = add_param(prefix + ".wv", init_rng_.sample(w, {C, C}));
        a.wo = add_param(prefix + ".wo", init_rng_.sample(w, {C, C}));
        a.bo = add_param(prefix + ".bo", Tensor::zeros({C}));
    }
    a.ffn = make_ffn(prefix + ".ffn");
    return a;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto& p : params_)
        if (p.trainable) out.push_back(&p);
    return out;
}

Parameter& Model::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return params_[it->second];
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void Model::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::vector<Parameter*> Model::residual_branch_parameters() {
    std::vector<Parameter*> out;
    auto ends_with = [](const std::string& s, const std::string& suf) {
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };
    for (auto& p : params_) {
        for (const char* suf : {".wv", ".wo", ".bo", ".ffn.w2", ".ffn.b2", ".mlp.w2", ".mlp.b2"}) {
            if (ends_with(p.name, suf)) {
                out.push_back(&p);
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Var Model::norm(Tape& t, Var x, const Norm& n) { return layer_norm(x, p(t, n.gain), p(t, n.bias)); }

Var Model::feed_forward(Tape& t, Var x, const FeedForward& f) {
    Var h = norm(t, x, f.norm);
    h = proxyattn::tanh(linear(h, p(t, f.w1), p(t, f.b1)));
    return add(x, linear(h, p(t, f.w2), p(t, f.b2)));
}

Var Model::split_heads(Var x) {
    // (B, S, C) -> (B, H, S, dh)
    const Shape s = x.shape();
    Var r = reshape(x, {s[0], s[1], cfg_.heads, cfg_.head_dim()});
    return permute(r, {0, 2, 1, 3});
}

Var Model::merge_heads(Var x) {
    // (B, H, S, dh) -> (B, S, C)
    const Shape s = x.shape();
    Var r = permute(x, {0, 2, 1, 3});
    return reshape(r, {s[0], s[2], cfg_.hidden});
}

Model::CrossResult Model::attention_block(Tape& t, Var q_src, Var kv_src, const AttentionParams& a, bool self) {
    Var qn = norm(t, q_src, a.norm_q);
    Var kvn = self ? qn : norm(t, kv_src, a.norm_kv);
    Var q = split_heads(linear(qn, p(t, a.wq)));
    Var k = split_heads(linear(kvn, p(t, a.wk)));
    Var v = split_heads(linear(kvn, p(t, a.wv)));
    Var logits = scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim())));
    Var probs = softmax_last(logits);
    Var heads = merge_heads(matmul(probs, v));
    Var out = add(q_src, linear(heads, p(t, a.wo), p(t, a.bo)));
    return {feed_forward(t, out, a.ffn), probs};
}

Var Model::mlp_block(Tape& t, Var q_src, Var kv_src, const AttentionParams& a) {
    const std::size_t sk = kv_src.shape()[1];
    const std::size_t sq = q_src.shape()[1];
    Var kvn = norm(t, kv_src, a.norm_kv);
    // Mean over the counterpart sequence: (1, Sk) x (B, Sk, C) -> (B, 1, C).
    Var pooled = matmul(t.constant(Tensor({1, sk}, 1.0 / static_cast<double>(sk))), kvn);
    Var h = proxyattn::tanh(linear(pooled, p(t, a.mw1), p(t, a.mb1)));
    h = linear(h, p(t, a.mw2), p(t, a.mb2));
    // Broadcast over the query sequence: (Sq, 1) x (B, 1, C) -> (B, Sq, C).
    Var upd = matmul(t.constant(Tensor::ones({sq, 1})), h);
    return feed_forward(t, add(q_src, upd), a.ffn);
}

Var Model::encoder_block(Tape& t, Var f, const AttentionParams& a) { return attention_block(t, f, f, a, true).out; }

Var Model::uniform_attention(Tape& t, std::size_t rows, std::size_t cols, std::size_t sq, std::size_t sk) {
    return t.constant(Tensor({rows, cols, sq, sk}, 1.0 / static_cast<double>(sk)));
}

Var Model::embed(Tape& t, Var x) {
    const Shape want{cfg_.frames, cfg_.joints, cfg_.in_channels};
    if (x.shape() != want) {
        throw ShapeError("model input shape " + shape_str(x.shape()) + " does not match config " + shape_str(want));
    }
    Var h = linear(x, p(t, embed_w_), p(t, embed_b_));  // (T, J, C)
    h = add(h, p(t, pos_s_));                          // + spatial (J, C)
    h = permute(h, {1, 0, 2});                          // (J, T, C)
    return add(h, p(t, pos_t_));                        // + temporal (T, C)
}

Var Model::regress(Tape& t, Var features) {
    Var h = proxyattn::tanh(linear(features, p(t, head_w1_), p(t, head_b1_)));
    Var y = linear(h, p(t, head_w2_), p(t, head_b2_));
    y = scale(y, cfg_.output_scale);
    return permute(y, {1, 0, 2});  // (T, J, C_out)
}

Var aggregate_attention(Var m_f_to_p, Var m_p_to_f) {
    const auto& a = m_f_to_p.shape();
    const auto& b = m_p_to_f.shape();
    if (a.size() != 4 || b.size() != 4 || a[3] != b[2] || a[0] != b[0] || a[1] != b[1]) {
        throw ShapeError("aggregate_attention: proxy length mismatch between " + shape_str(a) + " and " +
                         shape_str(b));
    }
    return matmul(m_f_to_p, m_p_to_f);
}

Var Model::st_encoder_block(Tape& t, std::size_t layer, Var b) {
    const auto& l = layers_.at(layer);
    if (!cfg_.encoder_enabled) return b;
    Var s = encoder_block(t, b, l.enc_spatial);  // across joints, batch over frames
    Var f = permute(s, {1, 0, 2});
    f = encoder_block(t, f, l.enc_temporal);  // across frames, batch over joints
    return permute(f, {1, 0, 2});
}

Model::ProxyUpdate Model::pum_forward(Tape& t, std::size_t layer, Var proxy, Var f) {
    const auto& l = layers_.at(layer);
    if (cfg_.pum_kind == ProxyModuleKind::mlp) {
        return {mlp_block(t, proxy, f, l.pum),
                uniform_attention(t, cfg_.joints, cfg_.heads, proxy.shape()[1], f.shape()[1])};
    }
    auto r = attention_block(t, proxy, f, l.pum, false);
    return {r.out, r.probs};
}

Model::ProxyInvocation Model::pim_forward(Tape& t, std::size_t layer, Var f, Var proxy) {
    const auto& l = layers_.at(layer);
    if (cfg_.pim_kind == ProxyModuleKind::mlp) {
        return {mlp_block(t, f, proxy, l.pim),
                uniform_attention(t, cfg_.joints, cfg_.heads, f.shape()[1], proxy.shape()[1])};
    }
    auto r = attention_block(t, f, proxy, l.pim, false);
    return {r.out, r.probs};
}

Model::ProxyAttention Model::pam_forward(Tape& t, std::size_t layer, Var f_tilde, Var m_agg) {
    const auto& l = layers_.at(layer);
    const auto& a = l.pam;
    Var fn = norm(t, f_tilde, a.norm_q);
    Var q = split_heads(linear(fn, p(t, a.wq)));
    Var k = split_heads(linear(fn, p(t, a.wk)));
    Var v = split_heads(linear(fn, p(t, a.wv)));
    Var self_logits = matmul(q, transpose_last(k));
    if (self_logits.shape() != m_agg.shape()) {
        throw ShapeError("pam_forward: aggregation matrix " + shape_str(m_agg.shape()) + " does not match " +
                         shape_str(self_logits.shape()));
    }
    Var gate = sigmoid(p(t, l.mu));
    Var fused = add(mul(m_agg, gate), mul(self_logits, add_scalar(scale(gate, -1.0), 1.0)));
    // Divisor is the full hidden width, not the per-head width.
    Var probs = softmax_last(scale(fused, 1.0 / std::sqrt(static_cast<double>(cfg_.hidden))));
    Var heads = merge_heads(matmul(probs, v));
    Var f_bar = add(f_tilde, linear(heads, p(t, a.wo), p(t, a.bo)));
    return {feed_forward(t, f_bar, a.ffn), fused, self_logits, gate};
}

ForwardVars Model::forward(Tape& t, Var x, bool trace) {
    ForwardVars out;
    Var f = embed(t, x);        // (J, T, C)
    Var proxy = p(t, proxy_);  // working copy threaded through depth

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (cfg_.encoder_enabled) {
            Var s = permute(f, {1, 0, 2});  // (T, J, C)
            f = permute(st_encoder_block(t, l, s), {1, 0, 2});
        }
        auto upd = pum_forward(t, l, proxy, f);
        proxy = upd.proxy;
        auto inv = pim_forward(t, l, f, proxy);
        Var agg = aggregate_attention(inv.m_f_to_p, upd.m_p_to_f);
        auto pam = pam_forward(t, l, inv.f_tilde, agg);
        f = pam.f_bar;

        if (trace) {
            LayerTrace tr;
            tr.m_p_to_f = upd.m_p_to_f.value();
            tr.m_f_to_p = inv.m_f_to_p.value();
            tr.m_agg = agg.value();
            tr.m_fused_logits = pam.fused_logits.value();
            tr.m_self_logits = pam.self_logits.value();
            tr.sigmoid_mu = pam.gate.value().item();
            out.traces.push_back(std::move(tr));
        }
    }
    out.y_hat = regress(t, f);
    return out;
}

ForwardOutput Model::predict(const Tensor& x, bool trace) {
    Tape t;
    auto fv = forward(t, t.constant(x), trace);
    return ForwardOutput{fv.y_hat.value(), std::move(fv.traces)};
}

// ---------------------------------------------------------------------------

namespace {

struct Counts {
    std::size_t embed = 0, proxy = 0, encoder = 0, pum = 0, pim = 0, pam = 0, mu = 0, head = 0;
};

Counts count_params(const ModelConfig& c) {
    c.validate();
    const std::size_t C = c.hidden;
    const std::size_t norm = 2 * C;
    const std::size_t ffn = norm + C * c.ffn_ratio * C + c.ffn_ratio * C + c.ffn_ratio * C * C + C;
    const std::size_t self_attn = norm + 4 * C * C + C + ffn;
    const std::size_t cross_attn = self_attn + norm;
    const std::size_t mlp = norm + C * c.ffn_ratio * C + c.ffn_ratio * C + c.ffn_ratio * C * C + C + ffn;
    Counts k;
    k.embed = c.in_channels * C + C + c.frames * C + c.joints * C;
    k.proxy = c.joints * c.proxy_length * C;
    k.encoder = c.encoder_enabled ? c.layers * 2 * self_attn : 0;
    k.pum = c.layers * (c.pum_kind == ProxyModuleKind::mlp ? mlp : cross_attn);
    k.pim = c.layers * (c.pim_kind == ProxyModuleKind::mlp ? mlp : cross_attn);
    k.pam = c.layers * self_attn;
    k.mu = c.layers;
    const std::size_t hh = c.head_ratio * C;
    k.head = C * hh + hh + hh * c.out_channels + c.out_channels;
    return k;
}

}  // namespace

std::vector<ParamBreakdown> param_breakdown(const ModelConfig& cfg) {
    const Counts k = count_params(cfg);
    return {{"embed", k.embed}, {"proxy", k.proxy}, {"encoder", k.encoder}, {"pum", k.pum},
            {"pim", k.pim},     {"pam", k.pam},     {"mu", k.mu},           {"head", k.head}};
}

std::size_t param_count(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& b : param_breakdown(cfg)) n += b.count;
    return n;
}

std::string param_group(const std::string& name) {
    const auto first = name.find('.');
    if (first == std::string::npos) return name;
    if (name.rfind("layer", 0) == 0) {
        const auto second = name.find('.', first + 1);
        return second == std::string::npos ? name : name.substr(0, second);
    }
    return name.substr(0, first);
}

}  // namespace proxyattn
