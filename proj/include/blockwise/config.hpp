#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/backend.hpp"
#include "blockwise/common.hpp"
#include "blockwise/http.hpp"
#include "blockwise/mock.hpp"
#include "blockwise/pipeline.hpp"

namespace blockwise {

inline std::vector<BackendRef> load_backend_refs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open backend config: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("backend config " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw FormatError("backend config " + path + ": expected an array");
    std::vector<BackendRef> refs;
    for (const auto& b : doc) refs.push_back(b.get<BackendRef>());
    return refs;
}

inline std::shared_ptr<ModelBackend> make_backend(const BackendRef& ref,
                                                  const MockScript* script = nullptr) {
    if (ref.kind == "scripted_mock")
        return std::make_shared<MockBackend>(script ? *script : MockScript(), ref.name,
                                             ref.model.empty() ? "mock-model" : ref.model,
                                             ref.supports_thinking);
    return std::make_shared<HttpCompletionBackend>(ref);
}

inline BackendSet build_backend_set(const std::vector<BackendRef>& refs,
                                    const MockScript* script = nullptr) {
    BackendSet set;
    for (const auto& ref : refs) set.add(make_backend(ref, script));
    return set;
}

inline MethodConfig load_method_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open method config: " + path);
    try {
        return nlohmann::json::parse(in).get<MethodConfig>();
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("method config " + path + ": " + e.what());
    }
}

/// A benchmark methods file is a JSON array of method configs.
inline std::vector<MethodConfig> load_method_configs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open methods config: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("methods config " + path + ": " + e.what());
    }
    std::vector<MethodConfig> configs;
    if (doc.is_array()) {
        for (const auto& m : doc) configs.push_back(m.get<MethodConfig>());
    } else if (doc.is_object() && doc.contains("methods")) {
        for (const auto& m : doc["methods"]) configs.push_back(m.get<MethodConfig>());
    } else {
        configs.push_back(doc.get<MethodConfig>());
    }
    if (configs.empty()) throw FormatError("methods config " + path + ": no methods");
    return configs;
}

/// Top-level application configuration: where everything lives. All paths are
/// resolved relative to the config file's directory.
struct AppConfig {
    std::string curriculum;
    std::string backends;
    std::string method;
    std::string state_dir = "state";
    std::string assets_dir = "assets";
    std::uint64_t seed = 0;
    int verbosity = 0;
};

inline void from_json(const nlohmann::json& j, AppConfig& c) {
    c.curriculum = j.value("curriculum", "");
    c.backends = j.value("backends", "");
    c.method = j.value("method", "");
    c.state_dir = j.value("state_dir", "state");
    c.assets_dir = j.value("assets_dir", "assets");
    c.seed = j.value("seed", std::uint64_t{0});
    c.verbosity = j.value("verbosity", 0);
}

inline AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("config " + path + ": " + e.what());
    }
    AppConfig cfg = doc.get<AppConfig>();
    // Paths in the file are relative to the file itself.
    auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
    };
    resolve(cfg.curriculum);
    resolve(cfg.backends);
    resolve(cfg.method);
    resolve(cfg.state_dir);
    resolve(cfg.assets_dir);

    // Referenced files must exist and parse before any command runs.
    if (!cfg.curriculum.empty()) load_curriculum(cfg.curriculum);
    if (!cfg.backends.empty()) load_backend_refs(cfg.backends);
    if (!cfg.method.empty()) load_method_config(cfg.method);
    if (!cfg.assets_dir.empty() && !std::filesystem::is_directory(cfg.assets_dir))
        throw ConfigError("config " + path + ": assets_dir '" + cfg.assets_dir +
                          "' is not a directory");
    return cfg;
}


}  // namespace blockwise
