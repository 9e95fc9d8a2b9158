#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <map>

#include "proxyattn/cli.hpp"
#include "proxyattn/gradcheck.hpp"
#include "proxyattn/metrics.hpp"
#include "proxyattn/tensor_io.hpp"

namespace proxyattn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kGradcheckMaxParams = 100000;
constexpr double kGradcheckTolerance = 1e-4;

std::uint64_t effective_seed(std::uint64_t flag_value) {
    const char* env = std::getenv("PROXYATTN_SEED");
    if (!env || !*env) return flag_value;
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("PROXYATTN_SEED is not an unsigned integer: '") + env + "'");
    }
}

ModelConfig gradcheck_default_config() {
    ModelConfig c;
    c.frames = 9;
    c.joints = 3;
    c.in_channels = 2;
    c.hidden = 8;
    c.heads = 2;
    c.proxy_length = 3;
    c.layers = 2;
    return c;
}

Tensor first_window(const Tensor& seq, std::size_t frames) {
    if (seq.dim(0) < frames) {
        throw ShapeMismatchError("input has " + std::to_string(seq.dim(0)) + " frames, model needs " +
                                 std::to_string(frames));
    }
    return window_split(seq, frames, frames).front().data;
}

struct SynthArgs {
    std::string out;
    std::size_t sequences = 8;
    std::size_t frames = 243;
    std::uint64_t seed = 0;
    std::string split = "train";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const Skeleton sk = default_h36m17_skeleton();
    Rng rng(effective_seed(a.seed));
    const auto seqs = synth_generate(rng, a.sequences, a.frames, sk);
    const auto m = write_dataset(a.out, seqs, sk, a.split);
    out << "wrote " << m.sequences.size() << " sequences of " << a.frames << " frames to " << a.out << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data, out, config, resume, eval_data;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    RunConfig rc = load_run_config(a.config);
    rc.train.seed = effective_seed(rc.train.seed);
    const DatasetManifest manifest = load_manifest(a.data);

    std::unique_ptr<Model> model;
    std::unique_ptr<AdamW> opt;
    if (!a.resume.empty()) {
        Checkpoint ck = load_checkpoint(a.resume);
        if (to_json(ck.model->config()) != to_json(rc.model)) {
            throw ConfigError("checkpoint " + a.resume + " was trained with a different model configuration");
        }
        model = std::move(ck.model);
        opt = std::move(ck.opt);
    } else {
        model = std::make_unique<Model>(rc.model, rc.train.seed);
        opt = std::make_unique<AdamW>(model->trainable_parameters(),
                                      AdamWConfig{rc.train.beta1, rc.train.beta2, rc.train.eps,
                                                  rc.train.weight_decay});
    }

    const auto samples = build_samples(manifest, rc.model.frames, rc.train.window_stride);
    std::vector<Sample> eval_samples;
    if (!a.eval_data.empty()) eval_samples = build_samples(load_manifest(a.eval_data), rc.model.frames, 0);

    const fs::path dir = a.out;
    std::error_code ec;
    fs::create_directories(dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const fs::path log_path = dir / "train_log.jsonl";
    std::ofstream log(log_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write " + log_path.string());

    char name[32];
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) { log << to_json(r).dump() << '\n'; };
    hooks.on_epoch_metrics = [&](const EpochRecord& r) { log << to_json(r).dump() << '\n'; };
    hooks.on_epoch_end = [&](std::size_t epoch) {
        log.flush();
        std::snprintf(name, sizeof name, "epoch_%03zu", epoch);
        save_checkpoint(dir / "checkpoints" / name, *model, *opt, rc.train);
    };
    const TrainLog tl = train(*model, *opt, samples, manifest.skeleton, rc.train,
                              eval_samples.empty() ? &samples : &eval_samples, hooks);
    save_checkpoint(dir / "checkpoints" / "last", *model, *opt, rc.train);
    log.flush();

    out << "trained " << tl.steps.size() << " steps";
    if (!tl.steps.empty()) out << ", final loss " << tl.steps.back().loss;
    out << "; checkpoint " << (dir / "checkpoints" / "last").string() << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data, ckpt;
    bool flip_tta = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    const DatasetManifest manifest = load_manifest(a.data);
    if (manifest.skeleton.joint_names.size() != ck.model->config().joints) {
        throw ShapeMismatchError("dataset has " + std::to_string(manifest.skeleton.joint_names.size()) +
                                 " joints, checkpoint expects " + std::to_string(ck.model->config().joints));
    }
    const auto samples = build_samples(manifest, ck.model->config().frames, 0);
    const MetricReport r = evaluate(model_predictor(*ck.model), samples, manifest.skeleton, a.flip_tta);
    out << to_json(r).dump(2) << "\n";
    return kExitOk;
}

struct GradcheckArgs {
    std::string config;
    std::uint64_t seed = 0;
    std::string fault_op;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    ModelConfig mc = gradcheck_default_config();
    double lambda_t = TrainConfig{}.lambda_t;
    if (!a.config.empty()) {
        const RunConfig rc = load_run_config(a.config);
        mc = rc.model;
        lambda_t = rc.train.lambda_t;
    }
    const std::size_t n = param_count(mc);
    if (n > kGradcheckMaxParams) {
        throw ConfigError("gradcheck refused: " + std::to_string(n) + " parameters exceeds the limit of " +
                          std::to_string(kGradcheckMaxParams) +
                          " (finite differences cost two forward passes per parameter)");
    }
    const std::uint64_t seed = effective_seed(a.seed);
    Model model(mc, seed);
    Rng rng(mix_seed(seed, 0x67636b));
    Tensor x({mc.frames, mc.joints, mc.in_channels});
    Tensor y({mc.frames, mc.joints, mc.out_channels});
    for (double& v : x.data()) v = rng.normal(0.0, 0.5);
    for (double& v : y.data()) v = rng.normal(0.0, 100.0);

    set_backward_fault(a.fault_op);
    const auto loss = [&](Tape& t) {
        return total_loss(model.forward(t, t.constant(x)).y_hat, t.constant(y), {lambda_t});
    };
    GradCheckReport rep;
    try {
        rep = finite_diff_check(loss, model.trainable_parameters());
    } catch (...) {
        set_backward_fault("");
        throw;
    }
    set_backward_fault("");

    std::vector<std::string> order;
    std::map<std::string, double> worst;
    for (const auto& p : rep.per_param) {
        const std::string g = param_group(p.name);
        if (!worst.count(g)) order.push_back(g);
        worst[g] = std::max(worst[g], p.max_rel_error);
    }
    bool ok = true;
    char line[160];
    for (const auto& g : order) {
        const bool pass = worst[g] < kGradcheckTolerance;
        ok &= pass;
        std::snprintf(line, sizeof line, "%-24s %.3e %s\n", g.c_str(), worst[g], pass ? "PASS" : "FAIL");
        out << line;
    }
    std::snprintf(line, sizeof line, "%zu parameters, max relative error %.3e (tolerance %.0e): %s\n", n,
                  rep.max_rel_error, kGradcheckTolerance, ok ? "PASS" : "FAIL");
    out << line;
    return ok ? kExitOk : kExitInternal;
}

struct ExportArgs {
    std::string ckpt, input, out, head = "mean";
    std::size_t layer = 0, joint = 0;
};

int cmd_export(const ExportArgs& a, std::ostream& out) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    const ModelConfig& mc = ck.model->config();
    std::optional<std::size_t> head;
    if (a.head != "mean") {
        try {
            std::size_t used = 0;
            head = std::stoul(a.head, &used);
            if (used != a.head.size()) throw std::invalid_argument(a.head);
        } catch (const std::logic_error&) {
            throw ConfigError("--head must be a head index or 'mean', got '" + a.head + "'");
        }
    }
    const fs::path in = a.input;
    Tensor seq;
    if (in.extension() == ".json") {
        try {
            seq = load_pose2d_json(in).data;
        } catch (const IoError&) {
            // A tensor sidecar rather than a single-file sequence.
            seq = load_pose2d(fs::path(in).replace_extension()).data;
        }
    } else {
        seq = load_pose2d(in).data;
    }
    if (seq.dim(1) != mc.joints || seq.dim(2) != mc.in_channels) {
        throw ShapeMismatchError("input " + a.input + " has shape " + shape_str(seq.shape()) +
                                 ", checkpoint expects (*, " + std::to_string(mc.joints) + ", " +
                                 std::to_string(mc.in_channels) + ")");
    }
    const AttentionExport ex = extract_attention(*ck.model, first_window(seq, mc.frames), a.layer, a.joint, head);

    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
    const std::string sel = "_L" + std::to_string(a.layer) + "_j" + std::to_string(a.joint) + "_h" +
                            (head ? std::to_string(*head) : std::string("mean")) + "_";
    auto dims = [](const Tensor& m) { return std::to_string(m.dim(0)) + "x" + std::to_string(m.dim(1)); };
    const std::vector<std::pair<std::string, Tensor>> files{
        {"self", min_max_normalize(ex.self_attn)}, {"agg", min_max_normalize(ex.agg)},
        {"fused", min_max_normalize(ex.fused)},    {"p2f", ex.p_to_f},
        {"f2p", ex.f_to_p}};
    for (const auto& [kind, m] : files) {
        const fs::path file = fs::path(a.out) / (kind + sel + dims(m) + ".csv");
        write_csv(file, m);
        out << file.string() << "\n";
    }
    return kExitOk;
}

int cmd_params(const std::string& config, std::ostream& out) {
    const ModelConfig mc = config.empty() ? ModelConfig::defaults_for(243) : load_run_config(config).model;
    char line[128];
    for (const auto& b : param_breakdown(mc)) {
        std::snprintf(line, sizeof line, "%-10s %12zu\n", b.module.c_str(), b.count);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-10s %12zu\n", "total", param_count(mc));
    out << line;
    const ModelConfig ref = ModelConfig::defaults_for(243);
    out << "reference configuration (T=243, N=" << ref.layers << ", C_f=" << ref.hidden << ", H=" << ref.heads
        << ", L=" << ref.proxy_length << "): " << param_count(ref)
        << " parameters here; the published count for this configuration is 35.1M\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Proxy-attention 3D pose lifting: synthesis, training, evaluation and analysis"};
    app.name(argv.empty() ? "proxyattn" : argv[0]);
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
    synth->add_option("--out", sa.out, "Output directory")->required();
    synth->add_option("--sequences", sa.sequences, "Number of sequences")->capture_default_str();
    synth->add_option("--frames", sa.frames, "Frames per sequence")->capture_default_str();
    synth->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
    synth->add_option("--split", sa.split, "Split name recorded in the manifest")->capture_default_str();

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Train a model");
    trn->add_option("--data", ta.data, "Dataset directory")->required();
    trn->add_option("--out", ta.out, "Run directory (checkpoints and train_log.jsonl)")->required();
    trn->add_option("--config", ta.config, "Flat JSON run configuration")->required();
    trn->add_option("--resume", ta.resume, "Checkpoint directory to continue from");
    trn->add_option("--eval-data", ta.eval_data, "Dataset for per-epoch evaluation (default: training data)");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint, printing a JSON metric report");
    ev->add_option("--data", ea.data, "Dataset directory")->required();
    ev->add_option("--ckpt", ea.ckpt, "Checkpoint directory")->required();
    ev->add_flag("--flip-tta", ea.flip_tta, "Average with the prediction for the mirrored input");

    GradcheckArgs ga;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
    gc->add_option("--config", ga.config, "Flat JSON run configuration (default: built-in tiny model)");
    gc->add_option("--seed", ga.seed, "Initialization and input seed")->capture_default_str();
    gc->add_option("--fault-op", ga.fault_op, "")->group("");

    ExportArgs xa;
    auto* xp = app.add_subcommand("export-attention", "Write attention matrices of one layer and joint as CSV");
    xp->add_option("--ckpt", xa.ckpt, "Checkpoint directory")->required();
    xp->add_option("--input", xa.input, "2D pose sequence (tensor stem or single-file .json)")->required();
    xp->add_option("--layer", xa.layer, "Layer index, 0-based")->capture_default_str();
    xp->add_option("--joint", xa.joint, "Joint index, 0-based")->capture_default_str();
    xp->add_option("--head", xa.head, "Head index or 'mean'")->capture_default_str();
    xp->add_option("--out", xa.out, "Output directory")->required();

    std::string params_config;
    auto* pc = app.add_subcommand("params", "Parameter count with per-module breakdown");
    pc->add_option("--config", params_config, "Flat JSON run configuration (default: T=243 reference)");

    std::vector<const char*> raw;
    for (const auto& s : argv) raw.push_back(s.c_str());
    if (raw.empty()) raw.push_back("proxyattn");
    try {
        app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUser;
    }

    try {
        if (synth->parsed()) return cmd_synth(sa, out);
        if (trn->parsed()) return cmd_train(ta, out);
        if (ev->parsed()) return cmd_eval(ea, out);
        if (gc->parsed()) return cmd_gradcheck(ga, out);
        if (xp->parsed()) return cmd_export(xa, out);
        if (pc->parsed()) return cmd_params(params_config, out);
    } catch (const InvariantError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::invalid_argument& e) {  // ConfigError, ShapeError
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitUser;
}

}  // namespace proxyattn
