// SPDX-License-Identifier: Apache-2.0
#include "simdet/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace simdet {

namespace {

using njson = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw ConfigError("config key '" + path + "': " + what);
}

void check_keys(const njson& obj, const std::string& path, const std::set<std::string>& allowed) {
    if (!obj.is_object()) bad(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [k, v] : obj.items()) {
        if (!allowed.count(k)) bad(path.empty() ? k : path + "." + k, "unknown key");
    }
}

template <typename T>
void get_num(const njson& obj, const std::string& path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number()) bad(path + "." + key, "expected a number");
    out = v.get<T>();
}

void get_str(const njson& obj, const std::string& path, const char* key, std::string& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_string()) bad(path + "." + key, "expected a string");
    out = v.get<std::string>();
}

void get_bool(const njson& obj, const std::string& path, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) bad(path + "." + key, "expected a boolean");
    out = v.get<bool>();
}

void check_enum(const std::string& path, const std::string& v, std::initializer_list<const char*> opts) {
    for (const char* o : opts)
        if (v == o) return;
    std::string msg = "must be one of {";
    bool first = true;
    for (const char* o : opts) {
        if (!first) msg += ", ";
        msg += o;
        first = false;
    }
    bad(path, msg + "}, got '" + v + "'");
}

void require_pow2(const std::string& path, double v) {
    int e = 0;
    if (v <= 0.0 || std::frexp(v, &e) != 0.5) bad(path, "must be a positive power of two");
}

} // namespace

void Config::validate() const {
    if (model.hidden < 1) bad("model.hidden", "must be >= 1");
    if (model.pad_layers < 0) bad("model.pad_layers", "must be >= 0");
    check_enum("precision.mode", precision.mode, {"fp32", "mixed"});
    check_enum("precision.scaling", precision.scaling, {"dynamic", "static"});
    require_pow2("precision.scale_init", precision.scale_init);
    require_pow2("precision.min_scale", precision.min_scale);
    require_pow2("precision.max_scale", precision.max_scale);
    if (precision.growth_interval < 1) bad("precision.growth_interval", "must be >= 1");
    if (precision.growth_factor <= 1.0) bad("precision.growth_factor", "must be > 1");
    if (precision.backoff_factor <= 0.0 || precision.backoff_factor >= 1.0)
        bad("precision.backoff_factor", "must be in (0,1)");
    if (precision.min_scale > precision.max_scale) bad("precision.min_scale", "exceeds max_scale");
    check_enum("bn.mode", bn.mode, {"plain", "sync", "iabn"});
    if (bn.eps <= 0.0) bad("bn.eps", "must be > 0");
    if (bn.momentum <= 0.0 || bn.momentum > 1.0) bad("bn.momentum", "must be in (0,1]");
    if (bn.slope <= 0.0) bad("bn.slope", "must be > 0");
    check_enum("memory.policy", memory.policy, {"sqrt"});
    check_enum("comm.backend", comm.backend, {"ring", "ps"});
    check_enum("comm.transport", comm.transport, {"inproc", "socket"});
    if (comm.workers < 1) bad("comm.workers", "must be >= 1");
    if (comm.bandwidth <= 0.0) bad("comm.bandwidth", "must be > 0");
    if (comm.latency < 0.0) bad("comm.latency", "must be >= 0");
    if (comm.compute_seconds <= 0.0) bad("comm.compute_seconds", "must be > 0");
    if (comm.overlap < 0.0 || comm.overlap > 1.0) bad("comm.overlap", "must be in [0,1]");
    if (train.lr <= 0.0) bad("train.lr", "must be > 0");
    if (train.momentum < 0.0 || train.momentum >= 1.0) bad("train.momentum", "must be in [0,1)");
    if (train.steps < 1) bad("train.steps", "must be >= 1");
    if (train.batch_per_worker < 1) bad("train.batch_per_worker", "must be >= 1");
    if (data.samples < 1) bad("data.samples", "must be >= 1");
    if (data.classes < 2) bad("data.classes", "must be >= 2");
    if (data.image < 4) bad("data.image", "must be >= 4");
    if (data.channels < 1) bad("data.channels", "must be >= 1");
    if (data.noise < 0.0) bad("data.noise", "must be >= 0");
    if (output.dir.empty()) bad("output.dir", "must not be empty");
    // the global batch must be normalizable
    if (comm.workers * train.batch_per_worker < 2) bad("train.batch_per_worker", "global batch must be >= 2");
    if (model.pad_layers != 0 && model.pad_layers < 16) bad("model.pad_layers", "must be 0 or >= 16");
}

Config parse_config(const std::string& text) {
    njson j;
    try {
        j = njson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "", {"model", "precision", "bn", "memory", "comm", "train", "data", "output"});
    for (const char* req : {"model", "train"}) {
        if (!j.contains(req)) throw ConfigError(std::string("config key '") + req + "': missing required section");
    }

    Config c;
    {
        const auto& o = j.at("model");
        check_keys(o, "model", {"hidden", "pad_layers"});
        get_num(o, "model", "hidden", c.model.hidden);
        get_num(o, "model", "pad_layers", c.model.pad_layers);
    }
    if (j.contains("precision")) {
        const auto& o = j.at("precision");
        check_keys(o, "precision",
                   {"mode", "scaling", "scale_init", "growth_interval", "growth_factor", "backoff_factor",
                    "min_scale", "max_scale"});
        get_str(o, "precision", "mode", c.precision.mode);
        get_str(o, "precision", "scaling", c.precision.scaling);
        get_num(o, "precision", "scale_init", c.precision.scale_init);
        get_num(o, "precision", "growth_interval", c.precision.growth_interval);
        get_num(o, "precision", "growth_factor", c.precision.growth_factor);
        get_num(o, "precision", "backoff_factor", c.precision.backoff_factor);
        get_num(o, "precision", "min_scale", c.precision.min_scale);
        get_num(o, "precision", "max_scale", c.precision.max_scale);
    }
    if (j.contains("bn")) {
        const auto& o = j.at("bn");
        check_keys(o, "bn", {"mode", "eps", "momentum", "slope"});
        get_str(o, "bn", "mode", c.bn.mode);
        get_num(o, "bn", "eps", c.bn.eps);
        get_num(o, "bn", "momentum", c.bn.momentum);
        get_num(o, "bn", "slope", c.bn.slope);
    }
    if (j.contains("memory")) {
        const auto& o = j.at("memory");
        check_keys(o, "memory", {"checkpoint", "policy"});
        get_bool(o, "memory", "checkpoint", c.memory.checkpoint);
        get_str(o, "memory", "policy", c.memory.policy);
    }
    if (j.contains("comm")) {
        const auto& o = j.at("comm");
        check_keys(o, "comm",
                   {"backend", "workers", "transport", "bandwidth", "latency", "compute_seconds", "overlap"});
        get_str(o, "comm", "backend", c.comm.backend);
        get_num(o, "comm", "workers", c.comm.workers);
        get_str(o, "comm", "transport", c.comm.transport);
        get_num(o, "comm", "bandwidth", c.comm.bandwidth);
        get_num(o, "comm", "latency", c.comm.latency);
        get_num(o, "comm", "compute_seconds", c.comm.compute_seconds);
        get_num(o, "comm", "overlap", c.comm.overlap);
    }
    {
        const auto& o = j.at("train");
        check_keys(o, "train", {"lr", "momentum", "steps", "batch_per_worker", "seed"});
        get_num(o, "train", "lr", c.train.lr);
        get_num(o, "train", "momentum", c.train.momentum);
        get_num(o, "train", "steps", c.train.steps);
        get_num(o, "train", "batch_per_worker", c.train.batch_per_worker);
        get_num(o, "train", "seed", c.train.seed);
    }
    if (j.contains("data")) {
        const auto& o = j.at("data");
        check_keys(o, "data", {"samples", "classes", "image", "channels", "noise"});
        get_num(o, "data", "samples", c.data.samples);
        get_num(o, "data", "classes", c.data.classes);
        get_num(o, "data", "image", c.data.image);
        get_num(o, "data", "channels", c.data.channels);
        get_num(o, "data", "noise", c.data.noise);
    }
    if (j.contains("output")) {
        const auto& o = j.at("output");
        check_keys(o, "output", {"dir", "metrics", "checkpoint", "resolved"});
        get_str(o, "output", "dir", c.output.dir);
        get_str(o, "output", "metrics", c.output.metrics);
        get_str(o, "output", "checkpoint", c.output.checkpoint);
        get_str(o, "output", "resolved", c.output.resolved);
    }
    c.validate();
    return c;
}

Config load_config_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

namespace {

njson resolved_tree(const Config& c) {
    njson j;
    j["model"] = {{"hidden", c.model.hidden}, {"pad_layers", c.model.pad_layers}};
    j["precision"] = {{"mode", c.precision.mode},
                      {"scaling", c.precision.scaling},
                      {"scale_init", c.precision.scale_init},
                      {"growth_interval", c.precision.growth_interval},
                      {"growth_factor", c.precision.growth_factor},
                      {"backoff_factor", c.precision.backoff_factor},
                      {"min_scale", c.precision.min_scale},
                      {"max_scale", c.precision.max_scale}};
    j["bn"] = {{"mode", c.bn.mode}, {"eps", c.bn.eps}, {"momentum", c.bn.momentum}, {"slope", c.bn.slope}};
    j["memory"] = {{"checkpoint", c.memory.checkpoint}, {"policy", c.memory.policy}};
    j["comm"] = {{"backend", c.comm.backend},       {"workers", c.comm.workers},
                 {"transport", c.comm.transport},   {"bandwidth", c.comm.bandwidth},
                 {"latency", c.comm.latency},       {"compute_seconds", c.comm.compute_seconds},
                 {"overlap", c.comm.overlap}};
    j["train"] = {{"lr", c.train.lr},
                  {"momentum", c.train.momentum},
                  {"steps", c.train.steps},
                  {"batch_per_worker", c.train.batch_per_worker},
                  {"seed", c.train.seed}};
    j["data"] = {{"samples", c.data.samples},
                 {"classes", c.data.classes},
                 {"image", c.data.image},
                 {"channels", c.data.channels},
                 {"noise", c.data.noise}};
    j["output"] = {{"dir", c.output.dir},
                   {"metrics", c.output.metrics},
                   {"checkpoint", c.output.checkpoint},
                   {"resolved", c.output.resolved}};
    return j;
}

} // namespace

std::string resolved_json(const Config& c) { return resolved_tree(c).dump(2) + "\n"; }

uint64_t config_digest(const Config& c) {
    njson j = resolved_tree(c);
    j["train"]["steps"] = 0; // resume may extend the horizon
    j.erase("output");       // paths do not identify the experiment
    const std::string s = j.dump();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace simdet
