#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxyattn/metrics.hpp"
#include "proxyattn/model.hpp"
#include "proxyattn/pose_data.hpp"

namespace proxyattn {

struct TrainConfig {
    std::size_t batch_size = 16;
    std::size_t epochs = 90;
    double lr0 = 5e-4;
    double lr_decay = 0.99;  // per epoch
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda_t = 0.5;
    std::uint64_t seed = 0;
    bool flip_augment = true;
    bool flip_tta = true;

    std::size_t max_steps = 0;      // 0: run all epochs
    std::size_t window_stride = 0;  // 0: non-overlapping windows of the model's T
    std::size_t eval_every = 1;     // epochs between evaluation passes; 0 disables

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// lr0 * lr_decay^epoch
double lr_at(const TrainConfig& c, std::size_t epoch);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {});

    // Decoupled decay theta -= lr * wd * theta, then the bias-corrected Adam
    // update; gradients are zeroed afterwards.
    void step(double lr);

    std::size_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    const std::vector<Parameter*>& params() const { return params_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    // Restores saved state; shapes must match the tracked parameters.
    void set_state(std::size_t step, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::size_t step_ = 0;
};

// One fixed-length training/evaluation window.
struct Sample {
    std::string id;
    Tensor x;               // (T, J, C_in)
    Tensor y;               // (T, J, 3)
    std::size_t valid = 0;  // leading frames taken from the source
};

std::vector<Sample> build_samples(const DatasetManifest& m, std::size_t frames, std::size_t stride);

struct StepRecord {
    std::size_t step = 0;  // 1-based count of optimizer updates
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double loss_3d = 0.0;
    double loss_t = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    MetricReport metrics;
};

nlohmann::json to_json(const StepRecord& r);
nlohmann::json to_json(const EpochRecord& r);

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch_metrics;
    // Called after the last step of every completed epoch.
    std::function<void(std::size_t epoch)> on_epoch_end;
};

// Continues from opt.step_count(), so a restored optimizer resumes the same
// trace. Every random choice is derived from (seed, epoch) or (seed, step).
TrainLog train(Model& model, AdamW& opt, const std::vector<Sample>& train_set, const Skeleton& skel,
               const TrainConfig& cfg, const std::vector<Sample>* eval_set = nullptr, const TrainHooks& hooks = {});

using Predictor = std::function<Tensor(const Tensor& x)>;
Predictor model_predictor(Model& model);

// Metrics over the unpadded frames of every window. With flip_tta the
// prediction is averaged with the un-flipped prediction of the flipped input.
MetricReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, const Skeleton& skel,
                      bool flip_tta);

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

// <dir>/config.json, <dir>/params/<name>.{json,bin}, <dir>/optim/{m,v}.<name>.{json,bin}.
void save_checkpoint(const std::filesystem::path& dir, Model& model, const AdamW& opt, const TrainConfig& cfg);

struct Checkpoint {
    std::unique_ptr<Model> model;
    std::unique_ptr<AdamW> opt;
    TrainConfig train;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace proxyattn
