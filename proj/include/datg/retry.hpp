#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/detail/text.hpp"
#include "datg/errors.hpp"
#include "datg/loop_detector.hpp"

namespace datg {

inline constexpr const char* kExecutionStateOpen = "<execution_state>";
inline constexpr const char* kExecutionStateClose = "</execution_state>";

struct GenerationParams {
    double temperature = 0.6;
    double top_p = 0.95;
    double repetition_penalty = 1.08;
    size_t max_tokens = 0;
    std::vector<std::string> stop_markers;
    std::optional<uint64_t> seed;

    // Reasoning continuations: temperature 0.6, top-p 0.95, max budget B;
    // first trial penalty 1.08, retry trials 1.13.
    static GenerationParams reasoning(size_t budget_tokens, bool first_trial) {
        GenerationParams p;
        p.temperature = 0.6;
        p.top_p = 0.95;
        p.repetition_penalty = first_trial ? 1.08 : 1.13;
        p.max_tokens = budget_tokens;
        return p;
    }

    // Scaffold generation: temperature 0.2, top-p 0.95, penalty 1.02, max
    // 4096 tokens, stopping at the execution-state close tag.
    static GenerationParams scaffold() {
        GenerationParams p;
        p.temperature = 0.2;
        p.top_p = 0.95;
        p.repetition_penalty = 1.02;
        p.max_tokens = 4096;
        p.stop_markers = {kExecutionStateClose};
        return p;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json doc;
        doc["temperature"] = temperature;
        doc["top_p"] = top_p;
        doc["repetition_penalty"] = repetition_penalty;
        doc["max_tokens"] = max_tokens;
        doc["stop_markers"] = stop_markers;
        if (seed) doc["seed"] = *seed;
        return doc;
    }

    static GenerationParams from_json(const nlohmann::json& doc) {
        GenerationParams p;
        p.temperature = doc.value("temperature", p.temperature);
        p.top_p = doc.value("top_p", p.top_p);
        p.repetition_penalty = doc.value("repetition_penalty", p.repetition_penalty);
        p.max_tokens = doc.value("max_tokens", p.max_tokens);
        if (doc.contains("stop_markers"))
            p.stop_markers = doc["stop_markers"].get<std::vector<std::string>>();
        if (doc.contains("seed")) p.seed = doc["seed"].get<uint64_t>();
        return p;
    }
};

// A chat-shaped prompt: system instruction, user message, and an
// assistant-side prefix the continuation must extend.
struct PromptParts {
    std::string system;
    std::string user;
    std::string assistant_prefix;
};

struct GenerationResult {
    std::string text;
    size_t token_count = 0;
};

class Generator {
public:
    virtual ~Generator() = default;
    virtual GenerationResult generate(const PromptParts& prompt,
                                      const GenerationParams& params) = 0;
};

// Deterministic generator fed from a fixed list of continuations; used by
// tests and the scripted CLI mode. Token counts default to the detector
// tokenizer when the script does not state them.
class ScriptedGenerator final : public Generator {
public:
    explicit ScriptedGenerator(std::vector<GenerationResult> responses)
        : responses_(std::move(responses)) {}

    static ScriptedGenerator from_json(const nlohmann::json& doc) {
        std::vector<GenerationResult> responses;
        const nlohmann::json* list = nullptr;
        if (doc.is_array()) list = &doc;
        else if (doc.is_object() && doc.contains("responses")) list = &doc["responses"];
        if (!list || !list->is_array())
            throw SchemaViolation("scripted generator expects an array or {\"responses\": [...]}");
        for (const auto& item : *list) {
            GenerationResult r;
            if (item.is_string()) {
                r.text = item.get<std::string>();
            } else if (item.is_object()) {
                r.text = item.value("text", "");
                r.token_count = item.value("tokens", size_t{0});
            } else {
                throw SchemaViolation("scripted responses must be strings or objects");
            }
            if (r.token_count == 0) r.token_count = default_tokenizer(r.text).size();
            responses.push_back(std::move(r));
        }
        return ScriptedGenerator(std::move(responses));
    }

    GenerationResult generate(const PromptParts&, const GenerationParams&) override {
        if (next_ >= responses_.size())
            throw Error("scripted generator exhausted after " + std::to_string(next_) +
                        " responses");
        return responses_[next_++];
    }

    size_t consumed() const { return next_; }

private:
    std::vector<GenerationResult> responses_;
    size_t next_ = 0;
};

enum class RetryMethod { Base, Loop, Formula };

inline const char* to_string(RetryMethod m) {
    switch (m) {
        case RetryMethod::Base: return "base";
        case RetryMethod::Loop: return "loop";
        case RetryMethod::Formula: return "formula";
    }
    return "?";
}

struct Trial {
    GenerationParams params;
    size_t emitted_tokens = 0;
    bool aborted = false;
    std::optional<DetectorReport> detector;
};

struct KnownAssignment {
    std::string name;
    std::string value;
};

// Answer-free execution-state scaffold: no boxed answers, no Final/Answer
// lines, every computed Plan result masked as "?".
struct SanitizedScaffold {
    std::string text;
    std::vector<KnownAssignment> knowns;
    size_t masked_count = 0;
};

struct RetrySession {
    RetryMethod method = RetryMethod::Base;
    std::vector<Trial> trials;
    std::optional<SanitizedScaffold> scaffold;
    size_t scaffold_tokens = 0;
    std::string final_text;
    bool forced_accept = false;
    std::vector<std::string> diagnostics;

    size_t decoded_tokens() const {
        size_t total = scaffold_tokens;
        for (const auto& t : trials) total += t.emitted_tokens;
        return total;
    }
};

// Generator failures carry the partially built session for post-mortems.
class GeneratorFailure : public Error {
public:
    GeneratorFailure(const std::string& what, RetrySession partial)
        : Error(what), partial_session(std::move(partial)) {}
    RetrySession partial_session;
};

struct RetryConfig {
    DetectorConfig detector;
    size_t max_trials = 5;
    // Canonical multi-seed run set for controlled-execution experiments.
    std::vector<uint64_t> seeds = {42, 215, 316};
    std::string target_language_starter;
    Tokenizer tokenizer;  // optional override, shared with the detector
};

// ---------------------------------------------------------------------------
// Scaffold sanitization.
// ---------------------------------------------------------------------------

namespace detail_retry {

// A line is Final/Answer-labeled when, after bullets, its label token is
// "final", "answer" or "final answer" followed by ':' or '='.
inline bool is_final_answer_line(const std::string& line) {
    std::string t = detail::to_lower_ascii(detail::trim(line));
    while (!t.empty() && (t[0] == '-' || t[0] == '*' || t[0] == '>'))
        t = detail::trim(t.substr(1));
    for (const char* label : {"final answer", "final", "answer"}) {
        std::string l = label;
        if (t.size() > l.size() && t.compare(0, l.size(), l) == 0) {
            std::string rest = detail::trim(t.substr(l.size()));
            if (!rest.empty() && (rest[0] == ':' || rest[0] == '=')) return true;
        }
    }
    return false;
}

// Removes every \boxed{...} occurrence (balanced scan), marker and payload.
inline std::string strip_boxed(const std::string& text, size_t& removed) {
    static constexpr std::string_view marker = "\\boxed{";
    std::string out;
    size_t pos = 0;
    while (true) {
        size_t at = text.find(marker, pos);
        if (at == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        out += text.substr(pos, at - pos);
        size_t i = at + marker.size();
        int depth = 1;
        while (i < text.size() && depth > 0) {
            if (text[i] == '{') ++depth;
            else if (text[i] == '}') --depth;
            ++i;
        }
        ++removed;
        pos = i;  // unbalanced tail is dropped with the marker
    }
    return out;
}

struct NumericLiteral {
    size_t begin = 0;
    size_t end = 0;  // one past the literal
};

// Numeric literal after position i (skipping spaces): sign? digits
// (.digits)? (/digits)?  Returns nullopt if none.
inline std::optional<NumericLiteral> match_literal(const std::string& s, size_t i) {
    size_t b = i;
    while (b < s.size() && s[b] == ' ') ++b;
    size_t j = b;
    if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
    size_t digits = 0;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
        ++j;
        ++digits;
    }
    if (digits == 0) return std::nullopt;
    if (j < s.size() && s[j] == '.') {
        size_t k = j + 1;
        while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
        if (k > j + 1) j = k;
    }
    if (j < s.size() && s[j] == '/') {
        size_t k = j + 1;
        while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
        if (k > j + 1) j = k;
    }
    return NumericLiteral{b, j};
}

inline bool is_expression_continuation(const std::string& s, size_t i) {
    while (i < s.size() && s[i] == ' ') ++i;
    if (i >= s.size()) return false;
    char c = s[i];
    return c == '+' || c == '-' || c == '*' || c == '/' || c == '^' || c == '(' ||
           s.compare(i, 3, "\xC3\x97") == 0 /* multiplication sign */;
}

// In a Plan line, every "= <numeric literal>" whose literal does not continue
// into a larger expression is masked to "= ?".
inline std::string mask_plan_results(const std::string& line, size_t& masked) {
    std::string out;
    size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        out.push_back(c);
        ++i;
        if (c != '=') continue;
        auto lit = match_literal(line, i);
        if (!lit) continue;
        if (is_expression_continuation(line, lit->end)) continue;
        out += " ?";
        ++masked;
        i = lit->end;
    }
    return out;
}

// A Plan line still carries an evaluated result the masker cannot neutralize
// when it ends in a numeric literal introduced by ':' or an arrow.
inline bool has_unmaskable_result(const std::string& line) {
    std::string t = detail::trim(line);
    while (!t.empty() && (t.back() == '.' || t.back() == ';' || t.back() == ')')) t.pop_back();
    t = detail::trim(t);
    if (t.empty()) return false;
    size_t end = t.size();
    size_t b = end;
    while (b > 0 && (std::isdigit(static_cast<unsigned char>(t[b - 1])) || t[b - 1] == '.' ||
                     t[b - 1] == '/' || t[b - 1] == ','))
        --b;
    if (b == end) return false;
    bool any_digit = false;
    for (size_t k = b; k < end; ++k)
        if (std::isdigit(static_cast<unsigned char>(t[k]))) any_digit = true;
    if (!any_digit) return false;
    std::string head = detail::trim(t.substr(0, b));
    if (head.empty()) return false;
    if (head.back() == ':') return true;
    if (head.size() >= 2 && head.compare(head.size() - 2, 2, "->") == 0) return true;
    if (head.size() >= 3 && head.compare(head.size() - 3, 3, "\xE2\x86\x92") == 0) return true;
    return false;
}

inline std::string section_of(const std::string& line, const std::string& current) {
    std::string t = detail::to_lower_ascii(detail::trim(line));
    if (t.empty()) return current;
    if (t.back() == ':' && t.find(' ') == std::string::npos) {
        return t.substr(0, t.size() - 1);
    }
    return current;
}

}  // namespace detail_retry

// Transforms raw execution-state content into a compliant answer-free
// scaffold. Throws ScaffoldRejected when a Plan line still ends in a fully
// evaluated result after masking.
inline SanitizedScaffold sanitize_scaffold(const std::string& raw_text) {
    size_t boxed_removed = 0;
    std::string text = detail_retry::strip_boxed(raw_text, boxed_removed);

    SanitizedScaffold scaffold;
    std::vector<std::string> kept;
    std::string section;
    for (const std::string& line : detail::split_lines(text)) {
        section = detail_retry::section_of(line, section);
        if (detail_retry::is_final_answer_line(line)) continue;
        std::string out = line;
        if (section == "plan") {
            out = detail_retry::mask_plan_results(out, scaffold.masked_count);
            if (detail_retry::has_unmaskable_result(out))
                throw ScaffoldRejected("scaffold Plan line ends in an evaluated result", line);
        }
        if (section == "known") {
            std::string t = detail::trim(out);
            while (!t.empty() && (t[0] == '-' || t[0] == '*')) t = detail::trim(t.substr(1));
            size_t eq = t.find('=');
            if (eq != std::string::npos && eq > 0) {
                std::string name = detail::trim(t.substr(0, eq));
                std::string value = detail::trim(t.substr(eq + 1));
                if (!name.empty() && !value.empty())
                    scaffold.knowns.push_back({std::move(name), std::move(value)});
            }
        }
        kept.push_back(std::move(out));
    }

    // reassemble, dropping trailing blank lines
    while (!kept.empty() && detail::trim(kept.back()).empty()) kept.pop_back();
    std::string joined;
    for (size_t i = 0; i < kept.size(); ++i) {
        joined += kept[i];
        if (i + 1 < kept.size()) joined += '\n';
    }
    scaffold.text = std::move(joined);
    return scaffold;
}

// ---------------------------------------------------------------------------
// Retry state machines.
// ---------------------------------------------------------------------------

namespace detail_retry {

// Text of the first `limit` tokens; the checkpoint view of a continuation.
// Boundaries follow the default tokenizer regardless of any detector
// tokenizer override, since only the default defines text offsets.
inline std::string truncate_to_tokens(const std::string& text, size_t limit) {
    std::vector<std::string> tokens = default_tokenizer(text);
    if (tokens.size() <= limit) return text;
    // walk the original text matching token boundaries
    std::u32string cps = detail::utf8_decode(text);
    size_t count = 0;
    size_t i = 0;
    while (i < cps.size() && count < limit) {
        if (detail::is_space(cps[i])) {
            ++i;
            continue;
        }
        if (detail::is_ascii_punct(cps[i]) && cps[i] != U'_') {
            ++i;
            ++count;
            continue;
        }
        while (i < cps.size() && !detail::is_space(cps[i]) &&
               !(detail::is_ascii_punct(cps[i]) && cps[i] != U'_'))
            ++i;
        ++count;
    }
    return detail::utf8_encode(std::u32string_view(cps).substr(0, i));
}

// Shared trial loop: resample the same prompt on abort, accept otherwise;
// the final trial is always accepted (forced accept when it triggered).
inline void run_trials(RetrySession& session, const PromptParts& prompt, Generator& generator,
                       size_t budget_tokens, const RetryConfig& cfg) {
    size_t checkpoint = budget_tokens / 4;
    for (size_t trial_index = 0; trial_index < cfg.max_trials; ++trial_index) {
        Trial trial;
        trial.params = GenerationParams::reasoning(budget_tokens, trial_index == 0);
        GenerationResult result;
        try {
            result = generator.generate(prompt, trial.params);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw GeneratorFailure(std::string("generator failed: ") + e.what(), session);
        }
        std::string partial = truncate_to_tokens(result.text, checkpoint);
        DetectorReport report = should_abort(partial, budget_tokens, cfg.detector, cfg.tokenizer);
        trial.detector = report;
        bool last_trial = trial_index + 1 == cfg.max_trials;
        if (report.triggered && !last_trial) {
            // discard at the checkpoint: only the tokens decoded so far count
            trial.aborted = true;
            trial.emitted_tokens =
                result.token_count < checkpoint ? result.token_count : checkpoint;
            session.trials.push_back(std::move(trial));
            continue;
        }
        trial.aborted = false;
        trial.emitted_tokens = result.token_count;
        session.trials.push_back(std::move(trial));
        session.final_text = result.text;
        session.forced_accept = report.triggered && last_trial;
        return;
    }
}

}  // namespace detail_retry

// Single-trial baseline: no checkpoint, no resampling.
inline RetrySession run_base(const PromptParts& prompt, Generator& generator,
                             size_t budget_tokens, const RetryConfig& cfg = {}) {
    (void)cfg;
    RetrySession session;
    session.method = RetryMethod::Base;
    Trial trial;
    trial.params = GenerationParams::reasoning(budget_tokens, true);
    GenerationResult result;
    try {
        result = generator.generate(prompt, trial.params);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw GeneratorFailure(std::string("generator failed: ") + e.what(), session);
    }
    trial.emitted_tokens = result.token_count;
    session.trials.push_back(std::move(trial));
    session.final_text = result.text;
    return session;
}

// Loop-Retry: inspect each continuation at the checkpoint C = B/4; on a
// trigger, discard it and resample from the bit-identical prompt with the
// retry repetition penalty. At most max_trials trials; a trigger on the last
// trial is accepted and flagged as an unhealthy forced accept.
inline RetrySession run_loop_retry(const PromptParts& prompt, Generator& generator,
                                   size_t budget_tokens, const RetryConfig& cfg = {}) {
    RetrySession session;
    session.method = RetryMethod::Loop;
    try {
        detail_retry::run_trials(session, prompt, generator, budget_tokens, cfg);
    } catch (GeneratorFailure& f) {
        f.partial_session.method = RetryMethod::Loop;
        throw;
    }
    return session;
}

// Formula-Retry: phase 1 generates the execution-state scaffold once and
// sanitizes it; phase 2 resamples only the continuation after the scaffold.
// A rejected scaffold degrades the session to base behavior with a
// diagnostic; the scaffold is one-time and is never regenerated.
inline RetrySession run_formula_retry(const PromptParts& scaffold_prompt,
                                      const PromptParts& reasoning_prompt, Generator& generator,
                                      size_t budget_tokens, const RetryConfig& cfg = {}) {
    RetrySession session;
    session.method = RetryMethod::Formula;

    GenerationResult scaffold_raw;
    try {
        scaffold_raw = generator.generate(scaffold_prompt, GenerationParams::scaffold());
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw GeneratorFailure(std::string("scaffold generation failed: ") + e.what(), session);
    }
    session.scaffold_tokens = scaffold_raw.token_count;

    // isolate the execution-state payload
    std::string content = scaffold_raw.text;
    if (size_t open = content.find(kExecutionStateOpen); open != std::string::npos)
        content = content.substr(open + std::string(kExecutionStateOpen).size());
    if (size_t close = content.find(kExecutionStateClose); close != std::string::npos)
        content = content.substr(0, close);
    if (size_t think = content.find("<think>"); think != std::string::npos)
        content.erase(think, 7);

    try {
        session.scaffold = sanitize_scaffold(content);
    } catch (const ScaffoldRejected& e) {
        session.diagnostics.push_back(std::string("scaffold rejected, running base: ") +
                                      e.what());
        Trial trial;
        trial.params = GenerationParams::reasoning(budget_tokens, true);
        GenerationResult result = generator.generate(reasoning_prompt, trial.params);
        trial.emitted_tokens = result.token_count;
        session.trials.push_back(std::move(trial));
        session.final_text = result.text;
        return session;
    }

    // phase 2 starts right after the closed execution state; the starter
    // carries its own leading whitespace
    PromptParts phase2 = reasoning_prompt;
    phase2.assistant_prefix += std::string("<think>\n") + kExecutionStateOpen + "\n" +
                               session.scaffold->text + "\n" + kExecutionStateClose +
                               cfg.target_language_starter;
    try {
        detail_retry::run_trials(session, phase2, generator, budget_tokens, cfg);
    } catch (GeneratorFailure& f) {
        f.partial_session = session;
        throw;
    }
    return session;
}

struct CostReport {
    size_t decoded_tokens_total = 0;  // trials plus scaffolds, no prompt tokens
    double retry_rate = 0.0;          // share of sessions with at least one retry
    double mean_trials = 0.0;
    size_t sessions = 0;
};

inline CostReport account_costs(std::span<const RetrySession> sessions) {
    CostReport report;
    report.sessions = sessions.size();
    if (sessions.empty()) return report;
    size_t retried = 0, total_trials = 0;
    for (const auto& s : sessions) {
        report.decoded_tokens_total += s.decoded_tokens();
        total_trials += s.trials.size();
        if (s.trials.size() >= 2) ++retried;
    }
    report.retry_rate = static_cast<double>(retried) / static_cast<double>(sessions.size());
    report.mean_trials = static_cast<double>(total_trials) / static_cast<double>(sessions.size());
    return report;
}

// --- serialization ---

inline nlohmann::ordered_json to_json(const RetrySession& session) {
    nlohmann::ordered_json doc;
    doc["method"] = to_string(session.method);
    doc["trials"] = nlohmann::ordered_json::array();
    for (const auto& t : session.trials) {
        nlohmann::ordered_json jt;
        jt["params"] = t.params.to_json();
        jt["emitted_tokens"] = t.emitted_tokens;
        jt["aborted"] = t.aborted;
        if (t.detector) jt["detector"] = to_json(*t.detector);
        doc["trials"].push_back(std::move(jt));
    }
    if (session.scaffold) {
        nlohmann::ordered_json js;
        js["text"] = session.scaffold->text;
        js["knowns"] = nlohmann::ordered_json::array();
        for (const auto& k : session.scaffold->knowns)
            js["knowns"].push_back({{"name", k.name}, {"value", k.value}});
        js["masked_count"] = session.scaffold->masked_count;
        doc["scaffold"] = std::move(js);
        doc["scaffold_tokens"] = session.scaffold_tokens;
    }
    doc["final_text"] = session.final_text;
    doc["forced_accept"] = session.forced_accept;
    doc["decoded_tokens"] = session.decoded_tokens();
    if (!session.diagnostics.empty()) doc["diagnostics"] = session.diagnostics;
    return doc;
}

inline nlohmann::ordered_json to_json(const CostReport& report) {
    nlohmann::ordered_json doc;
    doc["decoded_tokens_total"] = report.decoded_tokens_total;
    doc["retry_rate"] = report.retry_rate;
    doc["mean_trials"] = report.mean_trials;
    doc["sessions"] = report.sessions;
    return doc;
}

}  // namespace datg
