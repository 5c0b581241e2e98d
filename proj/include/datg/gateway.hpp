#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/dag.hpp"
#include "datg/detail/sha256.hpp"
#include "datg/detail/text.hpp"
#include "datg/errors.hpp"
#include "datg/retry.hpp"
#include "datg/trace.hpp"

namespace datg {

enum class Purpose { DagBuild, Align, Scaffold, Probe };

inline const char* to_string(Purpose p) {
    switch (p) {
        case Purpose::DagBuild: return "dag_build";
        case Purpose::Align: return "align";
        case Purpose::Scaffold: return "scaffold";
        case Purpose::Probe: return "probe";
    }
    return "?";
}

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;  // system, user, [assistant prefix]
    GenerationParams params;
    Purpose purpose = Purpose::Probe;

    // Content digest over messages and params; stable across serialization
    // round-trips. Purpose is routing metadata and does not participate.
    std::string cache_key() const {
        nlohmann::ordered_json canon;
        canon["messages"] = nlohmann::ordered_json::array();
        for (const auto& m : messages)
            canon["messages"].push_back({{"role", m.role}, {"content", m.content}});
        canon["params"] = params.to_json();
        return detail::sha256_hex(canon.dump());
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json doc;
        doc["purpose"] = to_string(purpose);
        doc["messages"] = nlohmann::ordered_json::array();
        for (const auto& m : messages)
            doc["messages"].push_back({{"role", m.role}, {"content", m.content}});
        doc["params"] = params.to_json();
        doc["cache_key"] = cache_key();
        return doc;
    }

    static ChatRequest from_json(const nlohmann::json& doc) {
        ChatRequest req;
        std::string p = doc.value("purpose", "probe");
        if (p == "dag_build") req.purpose = Purpose::DagBuild;
        else if (p == "align") req.purpose = Purpose::Align;
        else if (p == "scaffold") req.purpose = Purpose::Scaffold;
        else req.purpose = Purpose::Probe;
        if (doc.contains("messages"))
            for (const auto& m : doc["messages"])
                req.messages.push_back({m.value("role", ""), m.value("content", "")});
        if (doc.contains("params")) req.params = GenerationParams::from_json(doc["params"]);
        return req;
    }
};

// ---------------------------------------------------------------------------
// Prompt templates and builders. Prompt texts are versioned data files with
// {slot} substitution; only known slot names are replaced, so literal braces
// in the prompt bodies survive untouched.
// ---------------------------------------------------------------------------

inline std::string substitute(std::string text,
                              const std::map<std::string, std::string>& slots) {
    for (const auto& [key, value] : slots) {
        std::string needle = "{" + key + "}";
        size_t pos = 0;
        while ((pos = text.find(needle, pos)) != std::string::npos) {
            text.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    return text;
}

struct PromptTemplate {
    std::string system;
    std::string prefix;  // assistant-side direct-first prefix
};

// Per-language solver system prompts and direct-first prefixes. English and
// Swahili ship as defaults; other languages load from a data file.
class PromptTemplateSet {
public:
    static PromptTemplateSet builtin() {
        PromptTemplateSet set;
        set.templates_["en"] = {
            "You are a careful mathematical problem solver. Reason step by step in English "
            "and give the final answer as \\boxed{...}.",
            "<think>\n I will start thinking in English.\n First,"};
        set.templates_["sw"] = {
            "Wewe ni msuluhishi makini wa matatizo ya hisabati. Fikiri hatua kwa hatua kwa "
            "Kiswahili na utoe jibu la mwisho kama \\boxed{...}.",
            "<think>\n Nitaanza kufikiri kwa Kiswahili.\n Kwanza,"};
        return set;
    }

    static PromptTemplateSet load(const std::string& path) {
        PromptTemplateSet set = builtin();
        nlohmann::json doc = nlohmann::json::parse(detail::read_file(path), nullptr, false);
        if (doc.is_discarded() || !doc.is_object())
            throw MalformedDocument("template file is not a JSON object: " + path);
        for (const auto& [lang, entry] : doc.items()) {
            if (!entry.is_object()) throw SchemaViolation("template entries must be objects");
            PromptTemplate t;
            t.system = entry.value("system", "");
            t.prefix = entry.value("prefix", "");
            if (t.system.empty() || t.prefix.empty())
                throw SchemaViolation("template for '" + lang +
                                      "' needs both system and prefix");
            set.templates_[lang] = std::move(t);
        }
        return set;
    }

    const PromptTemplate& get(const std::string& lang) const {
        auto it = templates_.find(lang);
        if (it == templates_.end())
            throw MissingTemplate("no prompt template for language: " + lang);
        return it->second;
    }

    bool has(const std::string& lang) const { return templates_.count(lang) != 0; }

    void set(const std::string& lang, PromptTemplate t) { templates_[lang] = std::move(t); }

private:
    std::map<std::string, PromptTemplate> templates_;
};

// Direction settings: the problem language and the requested reasoning-trace
// language vary independently.
enum class ProbeSetting { EnEn, EnX, XEn, XX };

inline ProbeSetting parse_probe_setting(const std::string& s) {
    if (s == "en_en") return ProbeSetting::EnEn;
    if (s == "en_x") return ProbeSetting::EnX;
    if (s == "x_en") return ProbeSetting::XEn;
    if (s == "x_x") return ProbeSetting::XX;
    throw UsageError("unknown direction setting: " + s + " (want en_en|en_x|x_en|x_x)");
}

inline const char* to_string(ProbeSetting s) {
    switch (s) {
        case ProbeSetting::EnEn: return "en_en";
        case ProbeSetting::EnX: return "en_x";
        case ProbeSetting::XEn: return "x_en";
        case ProbeSetting::XX: return "x_x";
    }
    return "?";
}

// System message and assistant prefix follow the requested reasoning
// language; the user message carries the problem in the input language.
inline ChatRequest build_probe_request(ProbeSetting setting, const std::string& problem_en,
                                       const std::string& problem_x, const std::string& lang,
                                       const PromptTemplateSet& templates) {
    bool reasoning_in_x = setting == ProbeSetting::EnX || setting == ProbeSetting::XX;
    bool problem_in_x = setting == ProbeSetting::XEn || setting == ProbeSetting::XX;

    const std::string& problem = problem_in_x ? problem_x : problem_en;
    if (problem.empty())
        throw MissingProblemVariant(std::string("missing ") +
                                    (problem_in_x ? "target-language" : "English") +
                                    " problem statement");
    const PromptTemplate& t = templates.get(reasoning_in_x ? lang : "en");

    ChatRequest req;
    req.purpose = Purpose::Probe;
    req.messages = {{"system", t.system}, {"user", problem}, {"assistant", t.prefix}};
    return req;
}

// Verbatim prompt bodies loaded from a prompts directory. They are data, not
// code: editing a file changes the request content and therefore the cache
// key.
class PromptLibrary {
public:
    static PromptLibrary load(const std::string& dir) {
        namespace fs = std::filesystem;
        PromptLibrary lib;
        auto read = [&](const char* name) {
            return detail::read_file((fs::path(dir) / name).string());
        };
        lib.dag_system_ = read("dag_construction.system.txt");
        lib.dag_user_ = read("dag_construction.user.txt");
        lib.align_system_ = read("alignment.system.txt");
        lib.align_user_ = read("alignment.user.txt");
        lib.scaffold_system_ = read("formula_scaffold.system.txt");
        lib.scaffold_prefill_ = read("formula_scaffold.prefill.txt");
        return lib;
    }

    const std::string& dag_system() const { return dag_system_; }
    const std::string& dag_user() const { return dag_user_; }
    const std::string& align_system() const { return align_system_; }
    const std::string& align_user() const { return align_user_; }
    const std::string& scaffold_system() const { return scaffold_system_; }
    const std::string& scaffold_prefill() const { return scaffold_prefill_; }

private:
    std::string dag_system_, dag_user_;
    std::string align_system_, align_user_;
    std::string scaffold_system_, scaffold_prefill_;
};

struct DagPromptBudgets {
    int target_max_nodes = 30;
    int target_max_desc_chars_per_node = 80;
    int target_max_pre_nodes_per_node = 4;
};

inline ChatRequest build_dag_request(const PromptLibrary& lib, const std::string& reference_cot,
                                     const std::string& trace_tail,
                                     const std::string& final_response,
                                     const DagPromptBudgets& budgets = {}) {
    if (detail::trim(reference_cot).empty())
        throw EmptyTrace("reference derivation is empty");
    std::map<std::string, std::string> slots{
        {"verified_reference_cot", reference_cot},
        {"reasoning_trace_tail", trace_tail},
        {"final_response", final_response},
        {"target_max_nodes", std::to_string(budgets.target_max_nodes)},
        {"target_max_desc_chars_per_node",
         std::to_string(budgets.target_max_desc_chars_per_node)},
        {"target_max_pre_nodes_per_node",
         std::to_string(budgets.target_max_pre_nodes_per_node)},
    };
    ChatRequest req;
    req.purpose = Purpose::DagBuild;
    req.messages = {{"system", substitute(lib.dag_system(), slots)},
                    {"user", substitute(lib.dag_user(), slots)}};
    req.params.temperature = 0.0;  // deterministic-leaning extraction
    req.params.top_p = 1.0;
    req.params.repetition_penalty = 1.0;
    req.params.max_tokens = 4096;
    return req;
}

inline ChatRequest build_align_request(const PromptLibrary& lib, const ReferenceDag& dag,
                                       const TraceDocument& trace, const std::string& lang) {
    std::map<std::string, std::string> slots{
        {"target_lang", lang},
        {"dag_json", to_json(dag).dump(2)},
        {"raw_trace", trace.text()},
    };
    ChatRequest req;
    req.purpose = Purpose::Align;
    req.messages = {{"system", substitute(lib.align_system(), slots)},
                    {"user", substitute(lib.align_user(), slots)}};
    req.params.temperature = 0.0;
    req.params.top_p = 1.0;
    req.params.repetition_penalty = 1.0;
    req.params.max_tokens = 4096;
    return req;
}

inline ChatRequest build_scaffold_request(const PromptLibrary& lib,
                                          const std::string& problem_statement,
                                          const std::string& language) {
    if (detail::trim(problem_statement).empty()) throw EmptyTrace("problem statement is empty");
    std::map<std::string, std::string> slots{{"problem_statement", problem_statement},
                                             {"language", language}};
    ChatRequest req;
    req.purpose = Purpose::Scaffold;
    req.messages = {{"system", substitute(lib.scaffold_system(), slots)},
                    {"user", problem_statement},
                    {"assistant", substitute(lib.scaffold_prefill(), slots)}};
    req.params = GenerationParams::scaffold();
    return req;
}

// ---------------------------------------------------------------------------
// Record/replay cache and transport.
// ---------------------------------------------------------------------------

enum class GatewayMode { Live, Record, Replay };

inline GatewayMode parse_gateway_mode(const std::string& s) {
    if (s == "live") return GatewayMode::Live;
    if (s == "record") return GatewayMode::Record;
    if (s == "replay") return GatewayMode::Replay;
    throw UsageError("unknown gateway mode: " + s + " (want live|record|replay)");
}

struct GatewayConfig {
    std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
    std::string model = "local-model";
    std::string credential_env = "DATG_API_KEY";
    std::string cache_dir = "gateway_cache";
    int max_retries = 3;        // on transient failures (5xx, 429, transport)
    int retry_backoff_ms = 250;
    int timeout_sec = 120;
    int max_in_flight = 4;

    static GatewayConfig from_json(const nlohmann::json& doc) {
        GatewayConfig cfg;
        cfg.endpoint = doc.value("endpoint", cfg.endpoint);
        cfg.model = doc.value("model", cfg.model);
        cfg.credential_env = doc.value("credential_env", cfg.credential_env);
        cfg.cache_dir = doc.value("cache_dir", cfg.cache_dir);
        cfg.max_retries = doc.value("max_retries", cfg.max_retries);
        cfg.retry_backoff_ms = doc.value("retry_backoff_ms", cfg.retry_backoff_ms);
        cfg.timeout_sec = doc.value("timeout_sec", cfg.timeout_sec);
        cfg.max_in_flight = doc.value("max_in_flight", cfg.max_in_flight);
        return cfg;
    }
};

struct ChatResponse {
    std::string content;   // assistant message content
    std::string raw_body;  // exact provider body, byte-preserved by the cache
    int status = 200;
    int retries_used = 0;
    bool from_cache = false;
};

// Content-addressed response store: one JSON file per cache key. Safe for
// concurrent readers; writes serialize through a mutex and land atomically.
class ResponseCache {
public:
    explicit ResponseCache(std::string dir) : dir_(std::move(dir)) {}

    std::string path_for(const std::string& key) const {
        return (std::filesystem::path(dir_) / (key + ".json")).string();
    }

    std::optional<std::string> get(const std::string& key) const {
        std::string path = path_for(key);
        if (!std::filesystem::exists(path)) return std::nullopt;
        return detail::read_file(path);
    }

    void put(const std::string& key, std::string_view raw_body) {
        std::lock_guard<std::mutex> lock(write_mutex_);
        detail::write_file_atomic(path_for(key), raw_body);
    }

    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    std::mutex write_mutex_;
};

namespace detail_gateway {

struct ParsedEndpoint {
    std::string host_port;  // scheme://host:port for the client
    std::string path;
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
    size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint needs a scheme: " + url);
    size_t path_start = url.find('/', scheme + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

// Assistant content from a chat-completions-style body; tolerates a bare
// {"content": ...} shape for hand-written fixtures.
inline std::string extract_content(const std::string& raw_body) {
    nlohmann::json body = nlohmann::json::parse(raw_body, nullptr, false);
    if (body.is_discarded()) throw ProviderError(200, "response body is not valid JSON");
    if (body.contains("choices") && body["choices"].is_array() && !body["choices"].empty()) {
        const auto& choice = body["choices"][0];
        if (choice.contains("message") && choice["message"].contains("content"))
            return choice["message"]["content"].get<std::string>();
        if (choice.contains("text")) return choice["text"].get<std::string>();
    }
    if (body.contains("content") && body["content"].is_string())
        return body["content"].get<std::string>();
    throw ProviderError(200, "unrecognized response shape");
}

}  // namespace detail_gateway

// Provider-agnostic chat-completions client behind a record/replay cache.
// Replay never opens a socket, which makes the whole pipeline runnable with
// zero network access.
class Gateway {
public:
    explicit Gateway(GatewayConfig config)
        : config_(std::move(config)),
          cache_(config_.cache_dir),
          in_flight_(config_.max_in_flight > 0 ? config_.max_in_flight : 1) {}

    ChatResponse complete(const ChatRequest& request, GatewayMode mode) {
        std::string key = request.cache_key();
        if (mode == GatewayMode::Replay) {
            auto raw = cache_.get(key);
            if (!raw) throw CacheMiss("no cached response for request " + key);
            ChatResponse resp;
            resp.raw_body = *raw;
            resp.content = detail_gateway::extract_content(*raw);
            resp.from_cache = true;
            return resp;
        }
        ChatResponse resp = send(request);
        if (mode == GatewayMode::Record) cache_.put(key, resp.raw_body);
        return resp;
    }

    ResponseCache& cache() { return cache_; }
    const GatewayConfig& config() const { return config_; }

private:
    ChatResponse send(const ChatRequest& request);

    GatewayConfig config_;
    ResponseCache cache_;
    std::counting_semaphore<> in_flight_;
};

// Adapts the gateway to the retry controller's generator interface.
class GatewayGenerator final : public Generator {
public:
    GatewayGenerator(Gateway& gateway, GatewayMode mode, Purpose purpose = Purpose::Probe)
        : gateway_(gateway), mode_(mode), purpose_(purpose) {}

    GenerationResult generate(const PromptParts& prompt, const GenerationParams& params) override {
        ChatRequest req;
        req.purpose = purpose_;
        req.messages = {{"system", prompt.system}, {"user", prompt.user}};
        if (!prompt.assistant_prefix.empty())
            req.messages.push_back({"assistant", prompt.assistant_prefix});
        req.params = params;
        ChatResponse resp = gateway_.complete(req, mode_);
        GenerationResult result;
        result.text = resp.content;
        result.token_count = default_tokenizer(result.text).size();
        return result;
    }

private:
    Gateway& gateway_;
    GatewayMode mode_;
    Purpose purpose_;
};

}  // namespace datg

// The transport lives out of line so that only translation units that
// actually talk to the network pay for the HTTP client.
#ifdef DATG_GATEWAY_ENABLE_HTTP
#include <chrono>
#include <thread>

#include <httplib.h>

namespace datg {

inline ChatResponse Gateway::send(const ChatRequest& request) {
    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<>* sem;
        ~Release() { sem->release(); }
    } release{&in_flight_};

    auto endpoint = detail_gateway::parse_endpoint(config_.endpoint);
    httplib::Client client(endpoint.host_port);
    client.set_connection_timeout(config_.timeout_sec, 0);
    client.set_read_timeout(config_.timeout_sec, 0);

    httplib::Headers headers;
    if (const char* cred = std::getenv(config_.credential_env.c_str()); cred && *cred)
        headers.emplace("Authorization", std::string("Bearer ") + cred);

    nlohmann::ordered_json body;
    body["model"] = config_.model;
    body["messages"] = nlohmann::ordered_json::array();
    for (const auto& m : request.messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = request.params.temperature;
    body["top_p"] = request.params.top_p;
    body["repetition_penalty"] = request.params.repetition_penalty;
    if (request.params.max_tokens > 0) body["max_tokens"] = request.params.max_tokens;
    if (!request.params.stop_markers.empty()) body["stop"] = request.params.stop_markers;
    if (request.params.seed) body["seed"] = *request.params.seed;
    std::string payload = body.dump();

    int attempts = config_.max_retries + 1;
    std::string last_error;
    int last_status = 0;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0 && config_.retry_backoff_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry_backoff_ms));
        auto res = client.Post(endpoint.path, headers, payload, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            last_status = 0;
            continue;  // transport failure, retry
        }
        if (res->status >= 500 || res->status == 429) {
            last_error = res->body;
            last_status = res->status;
            continue;  // transient, retry
        }
        if (res->status != 200) throw ProviderError(res->status, res->body);
        ChatResponse resp;
        resp.raw_body = res->body;
        resp.content = detail_gateway::extract_content(res->body);
        resp.status = res->status;
        resp.retries_used = attempt;
        return resp;
    }
    if (last_status == 0)
        throw GatewayTimeout("no response from " + config_.endpoint + ": " + last_error);
    throw ProviderError(last_status, last_error);
}

}  // namespace datg
#else
namespace datg {

inline ChatResponse Gateway::send(const ChatRequest&) {
    throw ProviderError(0,
                        "live gateway transport not compiled in; define "
                        "DATG_GATEWAY_ENABLE_HTTP before including datg/gateway.hpp");
}

}  // namespace datg
#endif
