#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "proxyattn/cli.hpp"
#include "proxyattn/ops.hpp"

namespace proxyattn {

namespace {

// Slice (J, H, R, C) at [joint, head] -> (R, C).
Tensor pick(const Tensor& t, std::size_t joint, std::size_t head) {
    const std::size_t h = t.dim(1), r = t.dim(2), c = t.dim(3);
    Tensor out({r, c});
    const std::size_t base = (joint * h + head) * r * c;
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(base), r * c, out.data().begin());
    return out;
}

Tensor select(const Tensor& t, std::size_t joint, std::optional<std::size_t> head, double logit_scale = 0.0) {
    auto one = [&](std::size_t h) {
        Tensor m = pick(t, joint, h);
        if (logit_scale > 0.0) {
            for (double& v : m.data()) v *= logit_scale;
            m = kernels::softmax_last(m);
        }
        return m;
    };
    if (head) return one(*head);
    Tensor acc = one(0);
    for (std::size_t h = 1; h < t.dim(1); ++h) {
        const Tensor m = one(h);
        for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += m[i];
    }
    for (double& v : acc.data()) v /= static_cast<double>(t.dim(1));
    return acc;
}

}  // namespace

AttentionExport extract_attention(Model& model, const Tensor& x, std::size_t layer, std::size_t joint,
                                  std::optional<std::size_t> head) {
    const ModelConfig& c = model.config();
    if (layer >= c.layers) {
        throw ConfigError("layer " + std::to_string(layer) + " out of range [0, " + std::to_string(c.layers) + ")");
    }
    if (joint >= c.joints) {
        throw ConfigError("joint " + std::to_string(joint) + " out of range [0, " + std::to_string(c.joints) + ")");
    }
    if (head && *head >= c.heads) {
        throw ConfigError("head " + std::to_string(*head) + " out of range [0, " + std::to_string(c.heads) + ")");
    }
    const ForwardOutput fo = model.predict(x, true);
    const LayerTrace& tr = fo.traces.at(layer);
    const double inv = 1.0 / std::sqrt(static_cast<double>(c.hidden));
    return {select(tr.m_self_logits, joint, head, inv), select(tr.m_agg, joint, head),
            select(tr.m_fused_logits, joint, head, inv), select(tr.m_p_to_f, joint, head),
            select(tr.m_f_to_p, joint, head)};
}

Tensor min_max_normalize(const Tensor& m) {
    const auto [lo, hi] = std::minmax_element(m.data().begin(), m.data().end());
    Tensor out = m;
    const double range = *hi - *lo;
    for (double& v : out.data()) v = range > 0.0 ? (v - *lo) / range : 0.0;
    return out;
}

void write_csv(const std::filesystem::path& file, const Tensor& m) {
    if (m.rank() != 2) throw ShapeError("write_csv expects a matrix, got " + shape_str(m.shape()));
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file.string());
    char buf[32];
    for (std::size_t r = 0; r < m.dim(0); ++r) {
        for (std::size_t c = 0; c < m.dim(1); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", m[r * m.dim(1) + c]);
            if (c) out << ',';
            out << buf;
        }
        out << "\r\n";
    }
    if (!out) throw IoError("failed writing " + file.string());
}

}  // namespace proxyattn
