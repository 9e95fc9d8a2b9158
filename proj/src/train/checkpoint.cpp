#include <fstream>

#include "proxyattn/tensor_io.hpp"
#include "proxyattn/trainer.hpp"

namespace proxyattn {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, Model& model, const AdamW& opt, const TrainConfig& cfg) {
    std::error_code ec;
    fs::create_directories(dir / "params", ec);
    fs::create_directories(dir / "optim", ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    for (Parameter* p : model.parameters()) save_tensor(dir / "params" / p->name, p->value);
    json tracked = json::array();
    for (std::size_t k = 0; k < opt.params().size(); ++k) {
        const std::string& name = opt.params()[k]->name;
        tracked.push_back(name);
        save_tensor(dir / "optim" / ("m." + name), opt.first_moments()[k]);
        save_tensor(dir / "optim" / ("v." + name), opt.second_moments()[k]);
    }
    json doc{{"version", kCheckpointVersion},
             {"model", to_json(model.config())},
             {"model_seed", model.seed()},
             {"train", to_json(cfg)},
             {"optimizer",
              {{"step", opt.step_count()},
               {"beta1", opt.config().beta1},
               {"beta2", opt.config().beta2},
               {"eps", opt.config().eps},
               {"weight_decay", opt.config().weight_decay},
               {"params", tracked}}}};
    // Written last so a partially written directory is never mistaken for a checkpoint.
    std::ofstream out(dir / "config.json");
    if (!out) throw IoError("cannot write " + (dir / "config.json").string());
    out << doc.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path file = dir / "config.json";
    if (!fs::exists(file)) throw MissingFileError("checkpoint not found: " + file.string());
    json doc;
    {
        std::ifstream in(file);
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw IoError("malformed checkpoint config " + file.string() + ": " + e.what());
        }
    }
    if (!doc.contains("version") || doc["version"] != kCheckpointVersion) {
        throw IoError(file.string() + ": unsupported checkpoint version " + doc.value("version", json()).dump());
    }
    Checkpoint ck;
    try {
        ck.train = train_config_from_json(doc.at("train"));
        const ModelConfig mc = model_config_from_json(doc.at("model"));
        ck.model = std::make_unique<Model>(mc, doc.at("model_seed").get<std::uint64_t>());
    } catch (const json::exception& e) {
        throw IoError("malformed checkpoint config " + file.string() + ": " + e.what());
    }

    for (Parameter* p : ck.model->parameters()) {
        Tensor t = load_tensor(dir / "params" / p->name);
        if (t.shape() != p->value.shape()) {
            throw ShapeMismatchError("checkpoint parameter " + p->name + " has shape " + shape_str(t.shape()) +
                                     ", config implies " + shape_str(p->value.shape()));
        }
        p->value = std::move(t);
    }

    AdamWConfig ac;
    std::vector<std::string> names;
    std::size_t step = 0;
    try {
        const json& o = doc.at("optimizer");
        ac = {o.at("beta1").get<double>(), o.at("beta2").get<double>(), o.at("eps").get<double>(),
              o.at("weight_decay").get<double>()};
        names = o.at("params").get<std::vector<std::string>>();
        step = o.at("step").get<std::size_t>();
    } catch (const json::exception& e) {
        throw IoError("malformed optimizer state in " + file.string() + ": " + e.what());
    }
    ck.opt = std::make_unique<AdamW>(ck.model->trainable_parameters(), ac);
    if (names.size() != ck.opt->params().size()) {
        throw ShapeMismatchError("checkpoint optimizer tracks " + std::to_string(names.size()) +
                                 " parameters, model has " + std::to_string(ck.opt->params().size()) +
                                 " trainable");
    }
    std::vector<Tensor> m, v;
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k] != ck.opt->params()[k]->name) {
            throw ShapeMismatchError("checkpoint optimizer order differs at " + names[k]);
        }
        m.push_back(load_tensor(dir / "optim" / ("m." + names[k])));
        v.push_back(load_tensor(dir / "optim" / ("v." + names[k])));
    }
    ck.opt->set_state(step, std::move(m), std::move(v));
    return ck;
}

}  // namespace proxyattn
