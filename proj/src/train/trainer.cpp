#include "proxyattn/trainer.hpp"

#include <cmath>
#include <numeric>

#include "proxyattn/ops.hpp"

namespace proxyattn {

using nlohmann::json;

void TrainConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid train config: " + what);
    };
    need(batch_size >= 1, "batch_size must be >= 1");
    need(epochs >= 1, "epochs must be >= 1");
    need(std::isfinite(lr0) && lr0 > 0, "lr0 must be > 0");
    need(lr_decay > 0 && lr_decay <= 1, "lr_decay must lie in (0, 1]");
    need(std::isfinite(weight_decay) && weight_decay >= 0, "weight_decay must be >= 0");
    need(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
    need(eps > 0, "eps must be > 0");
    need(std::isfinite(lambda_t) && lambda_t >= 0, "lambda_t must be >= 0");
}

json to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"lr0", c.lr0},
                {"lr_decay", c.lr_decay},
                {"weight_decay", c.weight_decay},
                {"betas", {c.beta1, c.beta2}},
                {"eps", c.eps},
                {"lambda_t", c.lambda_t},
                {"seed", c.seed},
                {"flip_augment", c.flip_augment},
                {"flip_tta", c.flip_tta},
                {"max_steps", c.max_steps},
                {"window_stride", c.window_stride},
                {"eval_every", c.eval_every}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    };
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("lr0", c.lr0);
    get("lr_decay", c.lr_decay);
    get("weight_decay", c.weight_decay);
    get("eps", c.eps);
    get("lambda_t", c.lambda_t);
    get("seed", c.seed);
    get("flip_augment", c.flip_augment);
    get("flip_tta", c.flip_tta);
    get("max_steps", c.max_steps);
    get("window_stride", c.window_stride);
    get("eval_every", c.eval_every);
    if (j.contains("betas")) {
        const auto& b = j.at("betas");
        if (!b.is_array() || b.size() != 2) throw ConfigError("betas must be a [beta1, beta2] pair");
        c.beta1 = b[0].get<double>();
        c.beta2 = b[1].get<double>();
    }
    return c;
}

double lr_at(const TrainConfig& c, std::size_t epoch) {
    return c.lr0 * std::pow(c.lr_decay, static_cast<double>(epoch));
}

// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void AdamW::step(double lr) {
    ++step_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const double shrink = 1.0 - lr * cfg_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (p.grad.shape() != p.value.shape()) throw InvariantError("AdamW: gradient shape differs for " + p.name);
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double g = p.grad[i];
            p.value[i] *= shrink;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
        p.zero_grad();
    }
}

void AdamW::set_state(std::size_t step, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
        throw ShapeMismatchError("optimizer state has " + std::to_string(m.size()) + " moments for " +
                                 std::to_string(params_.size()) + " parameters");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (m[k].shape() != params_[k]->value.shape() || v[k].shape() != params_[k]->value.shape()) {
            throw ShapeMismatchError("optimizer moment shape mismatch for " + params_[k]->name);
        }
    }
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
}

// ---------------------------------------------------------------------------

std::vector<Sample> build_samples(const DatasetManifest& m, std::size_t frames, std::size_t stride) {
    if (stride == 0) stride = frames;
    std::vector<Sample> out;
    for (std::size_t i = 0; i < m.sequences.size(); ++i) {
        const LoadedSequence s = load_entry(m, i);
        if (s.pose2d.data.dim(0) < frames) {
            throw ShapeMismatchError("sequence " + m.sequences[i].id + " has " +
                                     std::to_string(s.pose2d.data.dim(0)) + " frames, model needs " +
                                     std::to_string(frames));
        }
        const auto wx = window_split(s.pose2d.data, frames, stride);
        const auto wy = window_split(s.pose3d.data, frames, stride);
        for (std::size_t w = 0; w < wx.size(); ++w) {
            out.push_back(Sample{m.sequences[i].id + "@" + std::to_string(wx[w].offset), wx[w].data, wy[w].data,
                                 wx[w].valid});
        }
    }
    return out;
}

json to_json(const StepRecord& r) {
    return json{{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr},
                {"loss", r.loss}, {"loss_3d", r.loss_3d}, {"loss_t", r.loss_t}};
}

json to_json(const EpochRecord& r) {
    return json{{"epoch", r.epoch},
                {"mpjpe", r.metrics.mpjpe_mm},
                {"p_mpjpe", r.metrics.p_mpjpe_mm},
                {"pck", r.metrics.pck_pct},
                {"auc", r.metrics.auc_pct}};
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kFlipStream = 0x464c4950ULL;

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    Rng rng(mix_seed(mix_seed(seed, kShuffleStream), epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    return order;
}

}  // namespace

TrainLog train(Model& model, AdamW& opt, const std::vector<Sample>& train_set, const Skeleton& skel,
               const TrainConfig& cfg, const std::vector<Sample>* eval_set, const TrainHooks& hooks) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    const Shape want_x{model.config().frames, model.config().joints, model.config().in_channels};
    const Shape want_y{model.config().frames, model.config().joints, model.config().out_channels};
    for (const auto& s : train_set) {
        if (s.x.shape() != want_x || s.y.shape() != want_y) {
            throw ShapeError("training window " + s.id + " has shapes " + shape_str(s.x.shape()) + " / " +
                             shape_str(s.y.shape()) + ", model expects " + shape_str(want_x) + " / " +
                             shape_str(want_y));
        }
    }
    const std::size_t per_epoch = train_set.size() / cfg.batch_size;  // drop-last
    if (per_epoch == 0) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                          std::to_string(train_set.size()) + " available training windows");
    }
    std::size_t total = per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
    const LossWeights weights{cfg.lambda_t};
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    const std::vector<Sample>& evals = eval_set ? *eval_set : train_set;

    TrainLog log;
    std::size_t step = opt.step_count();
    std::vector<std::size_t> order;
    std::size_t order_epoch = static_cast<std::size_t>(-1);
    model.zero_grad();
    while (step < total) {
        const std::size_t epoch = step / per_epoch;
        const std::size_t pos = step % per_epoch;
        if (order_epoch != epoch) {
            order = epoch_order(cfg.seed, epoch, train_set.size());
            order_epoch = epoch;
        }
        Rng flip_rng(mix_seed(mix_seed(cfg.seed, kFlipStream), step));
        StepRecord rec;
        rec.step = step + 1;
        rec.epoch = epoch;
        rec.lr = lr_at(cfg, epoch);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Sample& s = train_set[order[pos * cfg.batch_size + b]];
            const bool flip = cfg.flip_augment && flip_rng.uniform() < 0.5;
            Tape tape;
            Var x = tape.constant(flip ? horizontal_flip(s.x, skel) : s.x);
            Var y = tape.constant(flip ? horizontal_flip(s.y, skel) : s.y);
            Var y_hat = model.forward(tape, x).y_hat;
            Var l3 = loss_3d(y_hat, y);
            Var lt = tc_loss(y_hat, y);
            Var loss = weights.lambda_t == 0.0 ? l3 : add(l3, scale(lt, weights.lambda_t));
            rec.loss += loss.value().item() * inv_b;
            rec.loss_3d += l3.value().item() * inv_b;
            rec.loss_t += lt.value().item() * inv_b;
            tape.backward(scale(loss, inv_b));
        }
        if (!std::isfinite(rec.loss)) {
            throw InvariantError("non-finite loss at step " + std::to_string(rec.step) + " (epoch " +
                                 std::to_string(epoch) + ")");
        }
        opt.step(rec.lr);
        ++step;
        log.steps.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);

        const bool epoch_done = step % per_epoch == 0;
        if (epoch_done || step == total) {
            if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || step == total)) {
                EpochRecord er{epoch, evaluate(model_predictor(model), evals, skel, cfg.flip_tta)};
                log.epochs.push_back(er);
                if (hooks.on_epoch_metrics) hooks.on_epoch_metrics(er);
            }
            if (epoch_done && hooks.on_epoch_end) hooks.on_epoch_end(epoch);
        }
    }
    return log;
}

Predictor model_predictor(Model& model) {
    return [&model](const Tensor& x) { return model.predict(x).y_hat; };
}

MetricReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, const Skeleton& skel,
                      bool flip_tta) {
    if (samples.empty()) throw ConfigError("evaluation set is empty");
    std::size_t frames = 0;
    for (const auto& s : samples) frames += s.valid;
    const std::size_t J = samples.front().y.dim(1);
    Tensor all_hat({frames, J, 3}), all_y({frames, J, 3});
    std::size_t cursor = 0;
    for (const auto& s : samples) {
        Tensor y_hat = predict(s.x);
        if (y_hat.shape() != s.y.shape()) {
            throw ShapeError("prediction shape " + shape_str(y_hat.shape()) + " differs from target " +
                             shape_str(s.y.shape()));
        }
        if (flip_tta) {
            const Tensor back = horizontal_flip(predict(horizontal_flip(s.x, skel)), skel);
            for (std::size_t i = 0; i < y_hat.numel(); ++i) y_hat[i] = 0.5 * (y_hat[i] + back[i]);
        }
        const std::size_t n = s.valid * J * 3;
        std::copy_n(y_hat.data().begin(), n, all_hat.data().begin() + static_cast<std::ptrdiff_t>(cursor));
        std::copy_n(s.y.data().begin(), n, all_y.data().begin() + static_cast<std::ptrdiff_t>(cursor));
        cursor += n;
    }
    return compute_metrics(all_hat, all_y);
}

}  // namespace proxyattn
