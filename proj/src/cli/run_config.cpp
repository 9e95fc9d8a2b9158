#include <fstream>
#include <set>
#include <sstream>

#include "proxyattn/cli.hpp"

namespace proxyattn {

using nlohmann::json;

namespace {

struct Location {
    std::size_t line = 1, col = 1;
    std::string text;
};

Location locate(const std::string& text, std::size_t offset) {
    Location loc;
    offset = std::min(offset, text.size());
    std::size_t line_start = 0;
    for (std::size_t i = 0; i < offset; ++i) {
        if (text[i] == '\n') {
            ++loc.line;
            line_start = i + 1;
        }
    }
    loc.col = offset - line_start + 1;
    const std::size_t end = text.find('\n', line_start);
    loc.text = text.substr(line_start, end == std::string::npos ? std::string::npos : end - line_start);
    return loc;
}

[[noreturn]] void fail_at(const std::string& source, const std::string& text, std::size_t offset,
                          const std::string& msg) {
    const Location loc = locate(text, offset);
    throw ConfigError(source + ":" + std::to_string(loc.line) + ":" + std::to_string(loc.col) + ": " + msg +
                      "\n  " + loc.text);
}

std::set<std::string> keys_of(const json& j) {
    std::set<std::string> out;
    for (const auto& [k, _] : j.items()) out.insert(k);
    return out;
}

}  // namespace

json to_json(const RunConfig& c) {
    json j = to_json(c.model);
    j.update(to_json(c.train));
    return j;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail_at(source, text, e.byte > 0 ? e.byte - 1 : 0, e.what());
    }
    if (!doc.is_object()) throw ConfigError(source + ": config must be a JSON object");

    static const std::set<std::string> model_keys = keys_of(to_json(ModelConfig{}));
    static const std::set<std::string> train_keys = keys_of(to_json(TrainConfig{}));

    RunConfig c;
    for (const auto& [key, value] : doc.items()) {
        const std::size_t at = text.find("\"" + key + "\"");
        const json single{{key, value}};
        try {
            if (model_keys.count(key)) {
                c.model = model_config_from_json(single, c.model);
            } else if (train_keys.count(key)) {
                c.train = train_config_from_json(single, c.train);
            } else {
                fail_at(source, text, at, "unknown config key '" + key + "'");
            }
        } catch (const ConfigError& e) {
            if (std::string(e.what()).rfind(source + ":", 0) == 0) throw;
            fail_at(source, text, at, e.what());
        } catch (const std::exception& e) {
            fail_at(source, text, at, "config key '" + key + "': " + e.what());
        }
    }
    try {
        c.model.validate();
        c.train.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw MissingFileError("cannot read config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), file.string());
}

}  // namespace proxyattn
