#pragma once

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/detail/text.hpp"
#include "datg/errors.hpp"
#include "datg/gateway.hpp"
#include "datg/loop_detector.hpp"

namespace datg {

// Run-wide settings. Resolution order is flags > environment > config file >
// defaults; each layer is a JSON object overlaid on the previous one.
struct RunConfig {
    struct Paths {
        std::string dags;
        std::string traces;
        std::string alignments;
        std::string cache = "gateway_cache";
        std::string templates;
        std::string prompts = "data/prompts";
        std::string output;
    };

    Paths paths;
    std::map<std::string, size_t> budgets{{"low", 4096}, {"medium", 8192}, {"high", 16384}};
    DetectorConfig detector;
    GatewayConfig gateway;
    std::vector<uint64_t> seeds{42, 215, 316};
    size_t jobs = 1;

    static RunConfig from_json(const nlohmann::json& doc) {
        RunConfig cfg;
        if (doc.contains("paths") && doc["paths"].is_object()) {
            const auto& p = doc["paths"];
            cfg.paths.dags = p.value("dags", cfg.paths.dags);
            cfg.paths.traces = p.value("traces", cfg.paths.traces);
            cfg.paths.alignments = p.value("alignments", cfg.paths.alignments);
            cfg.paths.cache = p.value("cache", cfg.paths.cache);
            cfg.paths.templates = p.value("templates", cfg.paths.templates);
            cfg.paths.prompts = p.value("prompts", cfg.paths.prompts);
            cfg.paths.output = p.value("output", cfg.paths.output);
        }
        if (doc.contains("budgets") && doc["budgets"].is_object()) {
            for (const auto& [k, v] : doc["budgets"].items())
                if (v.is_number_integer()) cfg.budgets[k] = v.get<size_t>();
        }
        if (doc.contains("detector") && doc["detector"].is_object())
            cfg.detector = DetectorConfig::from_json(doc["detector"]);
        if (doc.contains("gateway") && doc["gateway"].is_object())
            cfg.gateway = GatewayConfig::from_json(doc["gateway"]);
        if (doc.contains("seeds") && doc["seeds"].is_array())
            cfg.seeds = doc["seeds"].get<std::vector<uint64_t>>();
        if (doc.contains("jobs") && doc["jobs"].is_number_integer())
            cfg.jobs = doc["jobs"].get<size_t>();
        // the gateway cache path is reachable from both sections; paths wins
        if (doc.contains("paths") && doc["paths"].is_object() &&
            doc["paths"].contains("cache"))
            cfg.gateway.cache_dir = cfg.paths.cache;
        return cfg;
    }

    size_t budget_for(const std::string& difficulty) const {
        std::string d = difficulty;
        if (d == "med") d = "medium";
        auto it = budgets.find(d);
        if (it == budgets.end()) throw ConfigError("unknown difficulty: " + difficulty);
        return it->second;
    }
};

namespace detail_config {

// Recursive overlay: object values merge, everything else replaces.
inline void overlay(nlohmann::json& base, const nlohmann::json& layer) {
    if (!layer.is_object() || !base.is_object()) {
        base = layer;
        return;
    }
    for (const auto& [key, value] : layer.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object())
            overlay(base[key], value);
        else
            base[key] = value;
    }
}

// Environment variables map onto config paths: DATG_ENDPOINT, DATG_MODEL,
// DATG_CACHE_DIR, DATG_TEMPLATES, DATG_PROMPTS, DATG_JOBS, DATG_SEEDS.
inline nlohmann::json env_layer(const std::map<std::string, std::string>& env) {
    nlohmann::json layer = nlohmann::json::object();
    auto get = [&](const char* name) -> std::optional<std::string> {
        auto it = env.find(name);
        if (it != env.end()) return it->second;
        return std::nullopt;
    };
    if (auto v = get("DATG_ENDPOINT")) layer["gateway"]["endpoint"] = *v;
    if (auto v = get("DATG_MODEL")) layer["gateway"]["model"] = *v;
    if (auto v = get("DATG_CACHE_DIR")) layer["paths"]["cache"] = *v;
    if (auto v = get("DATG_TEMPLATES")) layer["paths"]["templates"] = *v;
    if (auto v = get("DATG_PROMPTS")) layer["paths"]["prompts"] = *v;
    if (auto v = get("DATG_JOBS")) layer["jobs"] = std::stoull(*v);
    if (auto v = get("DATG_SEEDS")) {
        std::vector<uint64_t> seeds;
        for (const auto& part : detail::split(*v, ','))
            if (!detail::trim(part).empty()) seeds.push_back(std::stoull(detail::trim(part)));
        layer["seeds"] = seeds;
    }
    return layer;
}

inline std::map<std::string, std::string> process_env() {
    std::map<std::string, std::string> env;
    for (const char* name : {"DATG_ENDPOINT", "DATG_MODEL", "DATG_CACHE_DIR", "DATG_TEMPLATES",
                             "DATG_PROMPTS", "DATG_JOBS", "DATG_SEEDS"}) {
        if (const char* v = std::getenv(name)) env[name] = v;
    }
    return env;
}

}  // namespace detail_config

// Layered resolution. `file_json` comes from --config, `flag_json` from
// explicit command-line flags; both may be empty objects.
inline RunConfig resolve_config(const nlohmann::json& file_json,
                                const std::map<std::string, std::string>& env,
                                const nlohmann::json& flag_json) {
    nlohmann::json merged = nlohmann::json::object();
    detail_config::overlay(merged, file_json);
    detail_config::overlay(merged, detail_config::env_layer(env));
    detail_config::overlay(merged, flag_json);
    return RunConfig::from_json(merged);
}

}  // namespace datg
