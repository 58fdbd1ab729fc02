#pragma once

#include <hiflow/model.hpp>
#include <hiflow/scaling.hpp>

#include <fstream>
#include <map>
#include <sstream>

namespace hiflow {

/// Parses "key = value" lines; '#' starts a comment. Duplicate keys: last one wins.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
        kv[key] = value;
    }
    return kv;
}

namespace detail {
inline std::size_t parse_count(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long n = std::stol(v, &pos);
        if (pos != v.size() || n < 0) throw std::invalid_argument(v);
        return std::size_t(n);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}
}  // namespace detail

/// Keys accepted in model config files.
inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys{"task",       "scale",     "in_channels", "channels",
                                               "heads",      "gamma",     "p",           "s",
                                               "shift",      "variant",   "stages",      "layers_per_stage",
                                               "conv_kind",  "score_kind", "tau",        "tree_grid",
                                               "pad",        "init"};
    return keys;
}

/// Applies one key to the config; unknown keys are errors. `init` is stored in *init_name.
inline void apply_config_key(HiIRConfig& cfg, const std::string& key, const std::string& v,
                             std::string* init_name = nullptr) {
    using namespace detail;
    if (key == "task") {
        cfg.task = parse_task(v);
        if (cfg.task == Task::Denoise) cfg.scale = 1;
    } else if (key == "scale") cfg.scale = parse_count(key, v);
    else if (key == "in_channels") cfg.in_channels = parse_count(key, v);
    else if (key == "channels") cfg.channels = parse_count(key, v);
    else if (key == "heads") cfg.heads = parse_count(key, v);
    else if (key == "gamma") cfg.gamma = parse_count(key, v);
    else if (key == "p") cfg.p = parse_count(key, v);
    else if (key == "s") cfg.s = parse_count(key, v);
    else if (key == "shift") cfg.shift = parse_bool(key, v);
    else if (key == "variant") cfg.variant = parse_design(v);
    else if (key == "stages") cfg.stages = parse_count(key, v);
    else if (key == "layers_per_stage") cfg.layers_per_stage = parse_count(key, v);
    else if (key == "conv_kind") cfg.conv_kind = parse_conv_kind(v);
    else if (key == "score_kind") cfg.score = parse_score_kind(v);
    else if (key == "tau") cfg.tau = parse_real(key, v);
    else if (key == "tree_grid") cfg.tree_grid = parse_count(key, v);
    else if (key == "pad") cfg.pad = parse_bool(key, v);
    else if (key == "init") {
        parse_init_scheme(v);
        if (init_name) *init_name = v;
    } else
        throw ConfigError("unknown config key '" + key + "'");
}

inline HiIRConfig parse_config(std::istream& is, std::string* init_name = nullptr) {
    HiIRConfig cfg;
    auto kv = parse_key_values(is);
    // task first: it resets the scale default for denoising
    if (auto it = kv.find("task"); it != kv.end()) apply_config_key(cfg, "task", it->second, init_name);
    for (const auto& [k, v] : kv)
        if (k != "task") apply_config_key(cfg, k, v, init_name);
    cfg.validate();
    return cfg;
}

inline HiIRConfig load_config(const std::string& path, std::string* init_name = nullptr) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    return parse_config(is, init_name);
}

inline std::string config_to_text(const HiIRConfig& c, const std::string& init_name = "default") {
    std::ostringstream os;
    os << "task = " << to_string(c.task) << '\n'
       << "scale = " << c.scale << '\n'
       << "in_channels = " << c.in_channels << '\n'
       << "channels = " << c.channels << '\n'
       << "heads = " << c.heads << '\n'
       << "gamma = " << c.gamma << '\n'
       << "p = " << c.p << '\n'
       << "s = " << c.s << '\n'
       << "shift = " << (c.shift ? "true" : "false") << '\n'
       << "variant = " << to_string(c.variant) << '\n'
       << "stages = " << c.stages << '\n'
       << "layers_per_stage = " << c.layers_per_stage << '\n'
       << "conv_kind = " << to_string(c.conv_kind) << '\n'
       << "score_kind = " << to_string(c.score) << '\n'
       << "tau = " << c.tau << '\n'
       << "tree_grid = " << c.tree_grid << '\n'
       << "pad = " << (c.pad ? "true" : "false") << '\n'
       << "init = " << init_name << '\n';
    return os.str();
}

}  // namespace hiflow
