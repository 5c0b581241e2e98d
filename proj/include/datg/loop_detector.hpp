#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/detail/text.hpp"
#include "datg/trace.hpp"

namespace datg {

// Early-checkpoint surface-loop detector. All thresholds follow the retry
// protocol; the tokenizer is a deterministic whitespace/punctuation surrogate
// and is pluggable.
struct DetectorConfig {
    size_t window_tokens = 256;
    double rep16_hard = 0.65;
    double rep32_hard = 0.30;
    double rep16_soft = 0.50;
    double ttr_soft = 0.16;
    size_t motif_len_min = 4;
    size_t motif_len_max = 32;
    size_t motif_repeats = 3;
    size_t tail_chars = 1600;
    double min_length_factor = 0.8;

    static DetectorConfig from_json(const nlohmann::json& doc) {
        DetectorConfig cfg;
        cfg.window_tokens = doc.value("window_tokens", cfg.window_tokens);
        cfg.rep16_hard = doc.value("rep16_hard", cfg.rep16_hard);
        cfg.rep32_hard = doc.value("rep32_hard", cfg.rep32_hard);
        cfg.rep16_soft = doc.value("rep16_soft", cfg.rep16_soft);
        cfg.ttr_soft = doc.value("ttr_soft", cfg.ttr_soft);
        cfg.motif_len_min = doc.value("motif_len_min", cfg.motif_len_min);
        cfg.motif_len_max = doc.value("motif_len_max", cfg.motif_len_max);
        cfg.motif_repeats = doc.value("motif_repeats", cfg.motif_repeats);
        cfg.tail_chars = doc.value("tail_chars", cfg.tail_chars);
        cfg.min_length_factor = doc.value("min_length_factor", cfg.min_length_factor);
        return cfg;
    }
};

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

// Whitespace separates tokens; each ASCII punctuation code point is its own
// token; everything else accumulates into runs.
inline std::vector<std::string> default_tokenizer(std::string_view text) {
    std::u32string cps = detail::utf8_decode(text);
    std::vector<std::string> tokens;
    std::u32string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(detail::utf8_encode(current));
            current.clear();
        }
    };
    for (char32_t cp : cps) {
        if (detail::is_space(cp)) {
            flush();
        } else if (detail::is_ascii_punct(cp) && cp != U'_') {
            flush();
            tokens.push_back(detail::utf8_encode(std::u32string(1, cp)));
        } else {
            current.push_back(cp);
        }
    }
    flush();
    return tokens;
}

// Repeated n-gram rate over the given window: sum over grams of
// max(0, count - 1), divided by the number of observed n-grams. Zero when the
// window holds fewer than n tokens.
inline double rep_rate(std::span<const std::string> tokens, size_t n) {
    if (n == 0 || tokens.size() < n) return 0.0;
    size_t total = tokens.size() - n + 1;
    std::map<std::string, size_t> counts;
    std::string key;
    for (size_t i = 0; i < total; ++i) {
        key.clear();
        for (size_t k = 0; k < n; ++k) {
            key += tokens[i + k];
            key.push_back('\x1f');
        }
        ++counts[key];
    }
    size_t repeated = 0;
    for (const auto& [gram, count] : counts) repeated += count - 1;
    return static_cast<double>(repeated) / static_cast<double>(total);
}

// Unique tokens over window length; shorter windows divide by their actual
// length. An empty window is treated as fully diverse.
inline double type_token_ratio(std::span<const std::string> tokens) {
    if (tokens.empty()) return 1.0;
    std::set<std::string_view> unique(tokens.begin(), tokens.end());
    return static_cast<double>(unique.size()) / static_cast<double>(tokens.size());
}

struct MotifHit {
    size_t unit_len = 0;
    size_t repeats = 0;
};

// Smallest suffix unit in [min, max] tokens repeated at least `min_repeats`
// consecutive times at the end of the sequence. Reports the maximal repeat
// count for that unit.
inline std::optional<MotifHit> detect_suffix_motif(std::span<const std::string> tokens,
                                                   size_t len_min = 4, size_t len_max = 32,
                                                   size_t min_repeats = 3) {
    for (size_t unit = len_min; unit <= len_max; ++unit) {
        if (tokens.size() < unit * min_repeats) break;
        size_t repeats = 1;
        while (unit * (repeats + 1) <= tokens.size()) {
            bool match = true;
            size_t base = tokens.size() - unit;
            size_t prev = tokens.size() - unit * (repeats + 1);
            for (size_t k = 0; k < unit; ++k) {
                if (tokens[base + k] != tokens[prev + k]) {
                    match = false;
                    break;
                }
            }
            if (!match) break;
            ++repeats;
        }
        if (repeats >= min_repeats) return MotifHit{unit, repeats};
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mathematical progress guard.
// ---------------------------------------------------------------------------

namespace detail_math {

inline bool is_relation(char32_t cp) {
    return cp == U'=' || cp == U'<' || cp == 0x2264 /* <= */ || cp == 0x2265 /* >= */;
}

inline bool is_operator(char32_t cp) {
    return cp == U'+' || cp == U'-' || cp == 0x2212 /* minus */ || cp == U'*' ||
           cp == 0x00D7 /* x */ || cp == 0x00B7 /* dot */ || cp == U'/' || cp == U'^';
}

// Characters allowed inside an extracted equation/expression segment.
inline bool is_math_char(char32_t cp) {
    return detail::is_ascii_digit(cp) || detail::is_ascii_alpha(cp) || cp == U'_' ||
           cp == U'.' || cp == U',' || cp == U'(' || cp == U')' || cp == U'{' || cp == U'}' ||
           cp == U'[' || cp == U']' || cp == U'\\' || cp == U' ' || cp == U'>' ||
           is_relation(cp) || is_operator(cp);
}

// Strip spaces, unify multiplication and minus glyphs, lowercase variable
// names.
inline std::string normalize_span(std::u32string_view span) {
    std::u32string out;
    out.reserve(span.size());
    for (char32_t cp : span) {
        if (detail::is_space(cp)) continue;
        if (cp == 0x00D7 || cp == 0x00B7) cp = U'*';
        else if (cp == 0x2212) cp = U'-';
        else cp = detail::lower_ascii(cp);
        out.push_back(cp);
    }
    return detail::utf8_encode(out);
}

}  // namespace detail_math

// Extracts normalized mathematical spans: line-bounded segments containing a
// relation (equations, assignments), segments with at least two arithmetic
// operators, and every number with up to six code points of context on each
// side (clipped at line boundaries).
inline std::set<std::string> extract_math_spans(std::string_view text) {
    std::set<std::string> spans;
    std::u32string cps = detail::utf8_decode(text);

    size_t line_start = 0;
    for (size_t i = 0; i <= cps.size(); ++i) {
        if (i != cps.size() && cps[i] != U'\n') continue;
        std::u32string_view line(cps.data() + line_start, i - line_start);

        // maximal math-charset segments within the line
        size_t s = 0;
        while (s < line.size()) {
            if (!detail_math::is_math_char(line[s])) {
                ++s;
                continue;
            }
            size_t e = s;
            while (e < line.size() && detail_math::is_math_char(line[e])) ++e;
            std::u32string_view seg = line.substr(s, e - s);
            bool relation = false;
            size_t operators = 0;
            bool has_digit_or_name = false;
            for (char32_t cp : seg) {
                if (detail_math::is_relation(cp)) relation = true;
                if (detail_math::is_operator(cp)) ++operators;
                if (detail::is_ascii_digit(cp) || detail::is_ascii_alpha(cp))
                    has_digit_or_name = true;
            }
            if (has_digit_or_name && (relation || operators >= 2)) {
                std::string norm = detail_math::normalize_span(seg);
                if (!norm.empty()) spans.insert(norm);
            }
            s = e;
        }

        // number contexts: +/- 6 code points, clipped at the line
        size_t p = 0;
        while (p < line.size()) {
            if (!detail::is_ascii_digit(line[p])) {
                ++p;
                continue;
            }
            size_t q = p;
            while (q < line.size() &&
                   (detail::is_ascii_digit(line[q]) || line[q] == U'.' || line[q] == U','))
                ++q;
            size_t ctx_start = p >= 6 ? p - 6 : 0;
            size_t ctx_end = q + 6 < line.size() ? q + 6 : line.size();
            std::string norm = detail_math::normalize_span(line.substr(ctx_start, ctx_end - ctx_start));
            if (!norm.empty()) spans.insert(norm);
            p = q;
        }
        line_start = i + 1;
    }
    return spans;
}

// True iff the tail introduces a normalized mathematical span absent from
// the prefix. The tail boundary can clip a span mid-line, so a tail span
// also counts as previously seen when it occurs inside a prefix span.
inline bool math_progress(std::string_view prefix_text, std::string_view tail_text) {
    std::set<std::string> prefix = extract_math_spans(prefix_text);
    std::set<std::string> tail = extract_math_spans(tail_text);
    for (const auto& span : tail) {
        if (prefix.count(span)) continue;
        bool contained = false;
        for (const auto& known : prefix) {
            if (known.find(span) != std::string::npos) {
                contained = true;
                break;
            }
        }
        if (!contained) return true;
    }
    return false;
}

enum class TriggerReason {
    None,            // no surface loop
    Rep16Hard,
    Rep32Hard,
    SuffixMotif,
    SoftRepTtr,
    MathProgress,    // surface loop vetoed: new math in the tail
    BoxedAnswer,     // surface loop vetoed: boxed answer already present
    BelowMinLength,  // surface loop vetoed: ended before the checkpoint
};

inline const char* to_string(TriggerReason r) {
    switch (r) {
        case TriggerReason::None: return "none";
        case TriggerReason::Rep16Hard: return "rep16_hard";
        case TriggerReason::Rep32Hard: return "rep32_hard";
        case TriggerReason::SuffixMotif: return "suffix_motif";
        case TriggerReason::SoftRepTtr: return "soft_rep_ttr";
        case TriggerReason::MathProgress: return "math_progress";
        case TriggerReason::BoxedAnswer: return "boxed_answer";
        case TriggerReason::BelowMinLength: return "below_min_length";
    }
    return "?";
}

struct DetectorReport {
    double rep16 = 0.0;
    double rep32 = 0.0;
    double ttr = 1.0;
    std::optional<MotifHit> motif;
    bool math_progress = false;
    bool boxed_present = false;
    bool triggered = false;
    TriggerReason reason = TriggerReason::None;
    size_t token_count = 0;
    size_t checkpoint_tokens = 0;
};

// Pure trigger decision over precomputed statistics. Fires only when a
// surface loop holds, no new math appeared, no boxed answer is present, and
// the partial reached at least min_length_factor * C tokens.
inline std::pair<bool, TriggerReason> decide_trigger(
    double rep16, double rep32, double ttr, const std::optional<MotifHit>& motif,
    bool math_progress, bool boxed_present, size_t token_count, size_t checkpoint_tokens,
    const DetectorConfig& cfg) {
    TriggerReason surface = TriggerReason::None;
    if (rep16 >= cfg.rep16_hard) surface = TriggerReason::Rep16Hard;
    else if (rep32 >= cfg.rep32_hard) surface = TriggerReason::Rep32Hard;
    else if (motif) surface = TriggerReason::SuffixMotif;
    else if (rep16 >= cfg.rep16_soft && ttr <= cfg.ttr_soft) surface = TriggerReason::SoftRepTtr;

    if (surface == TriggerReason::None) return {false, TriggerReason::None};
    double min_tokens = cfg.min_length_factor * static_cast<double>(checkpoint_tokens);
    if (static_cast<double>(token_count) < min_tokens)
        return {false, TriggerReason::BelowMinLength};
    if (boxed_present) return {false, TriggerReason::BoxedAnswer};
    if (math_progress) return {false, TriggerReason::MathProgress};
    return {true, surface};
}

// Checkpoint inspection of a partial generation against budget B; the
// checkpoint is the first quarter of the budget, C = B / 4.
inline DetectorReport should_abort(const std::string& partial_text, size_t budget_tokens,
                                   const DetectorConfig& cfg = {},
                                   const Tokenizer& tokenizer = nullptr) {
    DetectorReport report;
    report.checkpoint_tokens = budget_tokens / 4;

    std::vector<std::string> tokens =
        tokenizer ? tokenizer(partial_text) : default_tokenizer(partial_text);
    report.token_count = tokens.size();

    size_t window_len = tokens.size() < cfg.window_tokens ? tokens.size() : cfg.window_tokens;
    std::span<const std::string> window(tokens.data() + (tokens.size() - window_len), window_len);
    report.rep16 = rep_rate(window, 16);
    report.rep32 = rep_rate(window, 32);
    report.ttr = type_token_ratio(window);
    report.motif = detect_suffix_motif(window, cfg.motif_len_min, cfg.motif_len_max,
                                       cfg.motif_repeats);

    std::u32string cps = detail::utf8_decode(partial_text);
    size_t tail_start = cps.size() > cfg.tail_chars ? cps.size() - cfg.tail_chars : 0;
    std::string prefix = detail::utf8_encode(std::u32string_view(cps).substr(0, tail_start));
    std::string tail = detail::utf8_encode(std::u32string_view(cps).substr(tail_start));
    report.math_progress = math_progress(prefix, tail);
    report.boxed_present = extract_boxed(partial_text).has_value();

    auto [triggered, reason] =
        decide_trigger(report.rep16, report.rep32, report.ttr, report.motif,
                       report.math_progress, report.boxed_present, report.token_count,
                       report.checkpoint_tokens, cfg);
    report.triggered = triggered;
    report.reason = reason;
    return report;
}

inline DetectorReport should_abort(const TraceDocument& partial, size_t budget_tokens,
                                   const DetectorConfig& cfg = {},
                                   const Tokenizer& tokenizer = nullptr) {
    return should_abort(partial.text(), budget_tokens, cfg, tokenizer);
}

inline nlohmann::ordered_json to_json(const DetectorReport& report) {
    nlohmann::ordered_json doc;
    doc["rep16"] = report.rep16;
    doc["rep32"] = report.rep32;
    doc["ttr"] = report.ttr;
    if (report.motif) {
        doc["motif"] = {{"unit_len", report.motif->unit_len}, {"repeats", report.motif->repeats}};
    } else {
        doc["motif"] = nullptr;
    }
    doc["math_progress"] = report.math_progress;
    doc["boxed_present"] = report.boxed_present;
    doc["triggered"] = report.triggered;
    doc["reason"] = to_string(report.reason);
    doc["token_count"] = report.token_count;
    doc["checkpoint_tokens"] = report.checkpoint_tokens;
    return doc;
}

}  // namespace datg
