#include <doctest.h>

#include <array>
#include <cstdlib>
#include <set>
#include <fstream>
#include <sstream>

#include "proxyattn/cli.hpp"
#include "proxyattn/gradcheck.hpp"
#include "test_util.hpp"

using namespace proxyattn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), "proxyattn");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
    std::vector<std::vector<double>> rows;
    for (std::string l : lines_of(slurp(p))) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        std::vector<double> row;
        std::istringstream in(l);
        for (std::string cell; std::getline(in, cell, ',');) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

const char* kTinyRun = R"({
  "frames": 9, "hidden": 8, "heads": 2, "proxy_length": 3, "layers": 1,
  "batch_size": 2, "epochs": 3, "seed": 4, "lr0": 0.001
})";

}  // namespace

TEST_CASE("run config: round trip, strict keys, located errors") {
    RunConfig rc;
    rc.model.frames = 27;
    rc.model.proxy_length = 9;
    rc.train.batch_size = 4;
    rc.train.beta2 = 0.99;
    const RunConfig back = parse_run_config(to_json(rc).dump(2));
    CHECK(to_json(back) == to_json(rc));

    try {
        parse_run_config("{\n  \"frames\": 9,\n  \"hiden\": 8\n}", "cfg.json");
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("cfg.json:3:") != std::string::npos);
        CHECK(msg.find("hiden") != std::string::npos);
    }
    try {
        parse_run_config("{\n  \"frames\": 9,\n  \"hidden\": 8,\n}", "cfg.json");
        FAIL("trailing comma accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("cfg.json:4:") != std::string::npos);
    }
    try {
        parse_run_config("{\n  \"frames\": 9,\n\n  \"hidden\": \"wide\"\n}", "cfg.json");
        FAIL("string accepted for an integer");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("cfg.json:4:") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_run_config(R"({"betas": [0.9]})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"betas": ["a", "b"]})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config(R"({"hidden": 10, "heads": 4})"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/cfg.json"), MissingFileError);
}

TEST_CASE("cli synth: manifest, determinism, seed override, preconditions") {
    const fs::path dir = testutil::scratch_dir("cli_synth");
    auto r = cli({"synth", "--out", (dir / "a").string(), "--sequences", "3", "--frames", "12", "--seed", "5"});
    REQUIRE(r.code == 0);
    CHECK(load_manifest(dir / "a").sequences.size() == 3);
    r = cli({"synth", "--out", (dir / "b").string(), "--sequences", "3", "--frames", "12", "--seed", "5"});
    REQUIRE(r.code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
        ++files;
    }
    CHECK(files == 1 + 3 * 6);

    ::setenv("PROXYATTN_SEED", "5", 1);
    r = cli({"synth", "--out", (dir / "c").string(), "--sequences", "3", "--frames", "12", "--seed", "99"});
    ::unsetenv("PROXYATTN_SEED");
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "c" / "seq001_2d.bin") == slurp(dir / "a" / "seq001_2d.bin"));

    r = cli({"synth", "--out", (dir / "d").string(), "--frames", "1"});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find("frames") != std::string::npos);
    r = cli({"synth", "--out", (dir / "e").string(), "--bogus"});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(cli({"nosuch"}).code == kExitUser);
    CHECK(cli({}).code == kExitUser);
    CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("cli train: log, checkpoints, resume, errors") {
    const fs::path dir = testutil::scratch_dir("cli_train");
    REQUIRE(cli({"synth", "--out", (dir / "data").string(), "--sequences", "4", "--frames", "9", "--seed", "2"}).code ==
            0);
    write_text(dir / "run.json", kTinyRun);

    auto r = cli({"train", "--data", (dir / "data").string(), "--out", (dir / "full").string(), "--config",
                  (dir / "run.json").string()});
    REQUIRE(r.code == 0);
    const auto full_log = lines_of(slurp(dir / "full" / "train_log.jsonl"));
    // 2 steps and one evaluation record per epoch.
    REQUIRE(full_log.size() == 9);
    const json last = json::parse(full_log.back());
    CHECK(last.at("epoch") == 2);
    CHECK(last.contains("mpjpe"));
    for (const char* d : {"epoch_000", "epoch_001", "epoch_002", "last"})
        CHECK(fs::exists(dir / "full" / "checkpoints" / d / "config.json"));

    // Interrupt after 3 steps, then resume with the full configuration.
    json partial = json::parse(kTinyRun);
    partial["max_steps"] = 3;
    write_text(dir / "partial.json", partial.dump());
    REQUIRE(cli({"train", "--data", (dir / "data").string(), "--out", (dir / "split").string(), "--config",
                 (dir / "partial.json").string()})
                .code == 0);
    r = cli({"train", "--data", (dir / "data").string(), "--out", (dir / "split").string(), "--config",
             (dir / "run.json").string(), "--resume", (dir / "split" / "checkpoints" / "last").string()});
    REQUIRE(r.code == 0);
    auto step_losses = [](const std::vector<std::string>& log) {
        std::vector<std::pair<std::size_t, double>> v;
        for (const auto& l : log) {
            const json j = json::parse(l);
            if (j.contains("loss")) v.emplace_back(j.at("step").get<std::size_t>(), j.at("loss").get<double>());
        }
        return v;
    };
    const auto split_steps = step_losses(lines_of(slurp(dir / "split" / "train_log.jsonl")));
    CHECK(split_steps == step_losses(full_log));
    CHECK(slurp(dir / "split" / "checkpoints" / "last" / "params" / "proxy.bin") ==
          slurp(dir / "full" / "checkpoints" / "last" / "params" / "proxy.bin"));

    r = cli({"train", "--data", (dir / "missing").string(), "--out", (dir / "x").string(), "--config",
             (dir / "run.json").string()});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find((dir / "missing").string()) != std::string::npos);

    json other = json::parse(kTinyRun);
    other["hidden"] = 16;
    write_text(dir / "other.json", other.dump());
    r = cli({"train", "--data", (dir / "data").string(), "--out", (dir / "y").string(), "--config",
             (dir / "other.json").string(), "--resume", (dir / "full" / "checkpoints" / "last").string()});
    CHECK(r.code == kExitUser);

    write_text(dir / "bad.json", "{\n  \"frames\": 9,\n  \"lr\": 0.1\n}\n");
    r = cli({"train", "--data", (dir / "data").string(), "--out", (dir / "z").string(), "--config",
             (dir / "bad.json").string()});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find("bad.json:3:") != std::string::npos);
}

TEST_CASE("cli eval: constant-output checkpoint matches direct metrics") {
    const fs::path dir = testutil::scratch_dir("cli_eval");
    const Skeleton sk = default_h36m17_skeleton();
    Rng rng(8);
    const auto seqs = synth_generate(rng, 2, 12, sk);
    write_dataset(dir / "data", seqs, sk);

    ModelConfig mc;
    mc.frames = 6;
    mc.hidden = 8;
    mc.heads = 2;
    mc.proxy_length = 2;
    mc.layers = 1;
    Model m(mc, 1);
    m.param("head.w2").value = Tensor::zeros(m.param("head.w2").value.shape());
    m.param("head.b2").value = Tensor({3}, {0.01, -0.02, 0.03});
    AdamW opt(m.trainable_parameters());
    save_checkpoint(dir / "ckpt", m, opt, TrainConfig{});

    // Every frame is predicted as (10, -20, 30) mm.
    Tensor y_hat({24, 17, 3}), y({24, 17, 3});
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < 12 * 51; ++i) {
            y[s * 12 * 51 + i] = seqs[s].pose3d[i];
            y_hat[s * 12 * 51 + i] = std::array<double, 3>{10.0, -20.0, 30.0}[i % 3];
        }
    const MetricReport expect = compute_metrics(y_hat, y);

    auto r = cli({"eval", "--data", (dir / "data").string(), "--ckpt", (dir / "ckpt").string()});
    REQUIRE(r.code == 0);
    const json rep = json::parse(r.out);
    std::set<std::string> keys;
    for (const auto& [k, _] : rep.items()) keys.insert(k);
    CHECK(keys == std::set<std::string>{"mpjpe_mm", "p_mpjpe_mm", "pck_pct", "auc_pct", "n_frames", "n_joints"});
    CHECK(rep["mpjpe_mm"].get<double>() == doctest::Approx(expect.mpjpe_mm).epsilon(1e-12));
    CHECK(rep["p_mpjpe_mm"].get<double>() == doctest::Approx(expect.p_mpjpe_mm).epsilon(1e-12));
    CHECK(rep["pck_pct"].get<double>() == doctest::Approx(expect.pck_pct).epsilon(1e-12));
    CHECK(rep["auc_pct"].get<double>() == doctest::Approx(expect.auc_pct).epsilon(1e-12));
    CHECK(rep["n_frames"] == 24);
    CHECK(rep["n_joints"] == 17);

    auto tta = cli({"eval", "--data", (dir / "data").string(), "--ckpt", (dir / "ckpt").string(), "--flip-tta"});
    REQUIRE(tta.code == 0);
    CHECK(json::parse(tta.out).at("n_frames") == 24);
    CHECK(cli({"eval", "--data", (dir / "data").string(), "--ckpt", (dir / "ckpt").string()}).out == r.out);

    mc.joints = 5;
    Model wrong(mc, 1);
    AdamW wrong_opt(wrong.trainable_parameters());
    save_checkpoint(dir / "wrong", wrong, wrong_opt, TrainConfig{});
    CHECK(cli({"eval", "--data", (dir / "data").string(), "--ckpt", (dir / "wrong").string()}).code == kExitUser);
}

TEST_CASE("cli gradcheck: groups, size guard, fault injection") {
    const fs::path dir = testutil::scratch_dir("cli_gradcheck");
    write_text(dir / "small.json", R"({"frames": 5, "joints": 3, "hidden": 4, "heads": 2, "proxy_length": 2,
                                       "layers": 1, "ffn_ratio": 1, "head_ratio": 1})");
    auto r = cli({"gradcheck", "--config", (dir / "small.json").string(), "--seed", "3"});
    CHECK(r.code == 0);
    for (const char* g : {"embed", "proxy", "layer0.mu", "layer0.pum", "layer0.pim", "layer0.pam", "head"})
        CHECK(r.out.find(std::string(g) + " ") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);

    r = cli({"gradcheck", "--config", (dir / "small.json").string(), "--fault-op", "layer_norm"});
    CHECK(r.code == kExitInternal);
    CHECK(r.out.find("FAIL") != std::string::npos);
    CHECK(backward_fault_factor("layer_norm") == 1.0);

    write_text(dir / "big.json", "{}");
    r = cli({"gradcheck", "--config", (dir / "big.json").string()});
    CHECK(r.code == kExitUser);
    CHECK(r.err.find("refused") != std::string::npos);
}

TEST_CASE("cli export-attention: files, shapes, stochasticity, mu endpoints") {
    const fs::path dir = testutil::scratch_dir("cli_export");
    ModelConfig mc;
    mc.frames = 9;
    mc.hidden = 8;
    mc.heads = 2;
    mc.proxy_length = 3;
    mc.layers = 2;
    mc.weight_init_std = 0.3;
    Model m(mc, 4);
    AdamW opt(m.trainable_parameters());
    save_checkpoint(dir / "ckpt", m, opt, TrainConfig{});
    Rng rng(6);
    const auto seq = synth_generate(rng, 1, 12, default_h36m17_skeleton());
    save_sequence(dir / "seq_2d", PoseSequence2D{seq[0].pose2d});

    auto r = cli({"export-attention", "--ckpt", (dir / "ckpt").string(), "--input", (dir / "seq_2d").string(),
                  "--layer", "1", "--joint", "4", "--head", "mean", "--out", (dir / "out").string()});
    REQUIRE(r.code == 0);
    const std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> expect{
        {"self_L1_j4_hmean_9x9.csv", {9, 9}},
        {"agg_L1_j4_hmean_9x9.csv", {9, 9}},
        {"fused_L1_j4_hmean_9x9.csv", {9, 9}},
        {"p2f_L1_j4_hmean_3x9.csv", {3, 9}},
        {"f2p_L1_j4_hmean_9x3.csv", {9, 3}}};
    for (const auto& [name, dims] : expect) {
        REQUIRE(fs::exists(dir / "out" / name));
        const auto rows = read_csv(dir / "out" / name);
        REQUIRE(rows.size() == dims.first);
        double lo = 1e300, hi = -1e300;
        for (const auto& row : rows) {
            CHECK(row.size() == dims.second);
            for (double v : row) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        CHECK(lo >= 0.0);
        CHECK(hi <= 1.0);
        if (name.rfind("p2f", 0) != 0 && name.rfind("f2p", 0) != 0) {
            CHECK(lo == 0.0);
            CHECK(hi == 1.0);
        }
    }

    const Tensor x = seq[0].pose2d;
    Tensor x9({9, 17, 2});
    std::copy_n(x.data().begin(), x9.numel(), x9.data().begin());
    for (std::optional<std::size_t> head : {std::optional<std::size_t>{}, std::optional<std::size_t>{1}}) {
        const AttentionExport ex = extract_attention(m, x9, 0, 2, head);
        for (const Tensor* t : {&ex.agg, &ex.self_attn, &ex.fused, &ex.p_to_f, &ex.f_to_p}) {
            for (std::size_t i = 0; i < t->dim(0); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < t->dim(1); ++j) s += (*t)[i * t->dim(1) + j];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }

    m.param("layer0.mu").value[0] = -20.0;
    const AttentionExport neg = extract_attention(m, x9, 0, 2, std::nullopt);
    CHECK(max_abs_diff(neg.self_attn, neg.fused) < 1e-6);
    m.param("layer0.mu").value[0] = 20.0;
    const AttentionExport pos = extract_attention(m, x9, 0, 2, std::nullopt);
    CHECK(max_abs_diff(pos.self_attn, pos.fused) > 1e-3);

    for (const char* bad : {"2", "x"}) {
        r = cli({"export-attention", "--ckpt", (dir / "ckpt").string(), "--input", (dir / "seq_2d").string(),
                 "--layer", std::string(bad) == "2" ? "2" : "0", "--head", bad, "--out", (dir / "bad").string()});
        CHECK(r.code == kExitUser);
    }
    r = cli({"export-attention", "--ckpt", (dir / "ckpt").string(), "--input", (dir / "seq_2d").string(),
             "--joint", "17", "--out", (dir / "bad").string()});
    CHECK(r.code == kExitUser);
}

TEST_CASE("cli params: breakdown sums and reference note") {
    const fs::path dir = testutil::scratch_dir("cli_params");
    write_text(dir / "cfg.json", R"({"frames": 27, "joints": 17, "hidden": 32, "heads": 4, "proxy_length": 9,
                                     "layers": 2})");
    const auto r = cli({"params", "--config", (dir / "cfg.json").string()});
    REQUIRE(r.code == 0);
    std::size_t sum = 0, total = 0, proxy = 0;
    for (const auto& l : lines_of(r.out)) {
        std::istringstream in(l);
        std::string name;
        std::size_t n = 0;
        if (!(in >> name >> n) || l.find("reference") == 0) continue;
        if (name == "total") total = n;
        else sum += n;
        if (name == "proxy") proxy = n;
    }
    CHECK(proxy == 17 * 9 * 32);
    CHECK(total == sum);
    CHECK(total == param_count(parse_run_config(slurp(dir / "cfg.json")).model));
    CHECK(r.out.find("35.1M") != std::string::npos);
    CHECK(cli({"params", "--config", (dir / "nope.json").string()}).code == kExitUser);
}
