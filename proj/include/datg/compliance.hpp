#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/detail/text.hpp"
#include "datg/trace.hpp"

namespace datg {

struct StripResult {
    std::string text;
    int unterminated = 0;  // openers left intact
};

namespace detail_compliance {

// Removes delimiter-kind spans non-greedily, left to right. Unterminated
// openers are kept and counted.
inline std::string strip_kind(const std::string& text, std::string_view open,
                              std::string_view close, int& unterminated) {
    std::string out;
    size_t pos = 0;
    while (true) {
        size_t at = text.find(open, pos);
        if (at == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        size_t end = text.find(close, at + open.size());
        if (end == std::string::npos) {
            ++unterminated;
            out += text.substr(pos, at + open.size() - pos);
            pos = at + open.size();
            continue;
        }
        out += text.substr(pos, at - pos);
        pos = end + close.size();
    }
    return out;
}

}  // namespace detail_compliance

// Strips display and inline math: $$...$$, \(...\), \[...\], then $...$
// last so the double-dollar form is not half-eaten. Idempotent.
inline StripResult strip_math_spans_ex(const std::string& text) {
    StripResult result;
    result.text = detail_compliance::strip_kind(text, "$$", "$$", result.unterminated);
    result.text = detail_compliance::strip_kind(result.text, "\\(", "\\)", result.unterminated);
    result.text = detail_compliance::strip_kind(result.text, "\\[", "\\]", result.unterminated);
    result.text = detail_compliance::strip_kind(result.text, "$", "$", result.unterminated);
    return result;
}

inline std::string strip_math_spans(const std::string& text) {
    return strip_math_spans_ex(text).text;
}

// Language-identification backend; implementations must be safe for
// concurrent calls or wrapped in a serializing adapter.
class LanguageDetector {
public:
    virtual ~LanguageDetector() = default;
    // (language, confidence) entries, most confident first.
    virtual std::vector<std::pair<std::string, double>> detect(const std::string& text) const = 0;
};

// Deterministic offline detector: Unicode script-range voting, with a small
// function-word vote to separate the Latin-script languages. Reports every
// language holding at least 20% of the letter mass.
class ScriptRangeDetector final : public LanguageDetector {
public:
    std::vector<std::pair<std::string, double>> detect(const std::string& text) const override {
        std::map<std::string, size_t> votes;
        size_t latin = 0, kana = 0, han = 0;
        std::u32string cps = detail::utf8_decode(text);
        for (char32_t cp : cps) {
            if (detail::is_ascii_alpha(cp) || (cp >= 0x00C0 && cp <= 0x024F)) ++latin;
            else if ((cp >= 0x3040 && cp <= 0x30FF)) ++kana;
            else if ((cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF)) ++han;
            else if (cp >= 0x0400 && cp <= 0x04FF) ++votes["ru"];
            else if (cp >= 0x0E00 && cp <= 0x0E7F) ++votes["th"];
            else if (cp >= 0x0980 && cp <= 0x09FF) ++votes["bn"];
            else if (cp >= 0x0C00 && cp <= 0x0C7F) ++votes["te"];
            else if ((cp >= 0xAC00 && cp <= 0xD7AF) || (cp >= 0x1100 && cp <= 0x11FF)) ++votes["ko"];
        }
        // Kana marks Japanese; Han without kana reads as Chinese.
        if (kana > 0) votes["ja"] += kana + han;
        else if (han > 0) votes["zh-cn"] += han;
        if (latin > 0) votes[classify_latin(text)] += latin;

        size_t total = 0;
        for (const auto& [lang, n] : votes) total += n;
        std::vector<std::pair<std::string, double>> out;
        if (total == 0) return out;
        for (const auto& [lang, n] : votes) {
            double share = static_cast<double>(n) / static_cast<double>(total);
            if (share >= 0.2) out.emplace_back(lang, share);
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
        return out;
    }

private:
    // Function-word vote among the Latin-script languages of the benchmark.
    // Malay and Indonesian share one cluster reported as "id", mirroring how
    // common detectors collapse them.
    static std::string classify_latin(const std::string& text) {
        static const std::map<std::string, std::set<std::string>> words = {
            {"en", {"the", "and", "is", "of", "to", "we", "then", "that", "first", "so"}},
            {"fr", {"le", "la", "les", "et", "est", "de", "des", "une", "nous", "donc", "alors"}},
            {"sw",
             {"na", "ni", "kwa", "ya", "wa", "za", "kisha", "kwanza", "hivyo", "kila", "jibu"}},
            {"id",
             {"yang", "dan", "adalah", "dengan", "untuk", "dari", "ini", "itu", "kita", "jadi",
              "ialah", "kemudian"}},
        };
        std::map<std::string, size_t> hits;
        std::string lower = detail::to_lower_ascii(text);
        std::string word;
        auto flush = [&] {
            if (word.empty()) return;
            for (const auto& [lang, set] : words)
                if (set.count(word)) ++hits[lang];
            word.clear();
        };
        for (char c : lower) {
            if (std::isalpha(static_cast<unsigned char>(c))) word.push_back(c);
            else flush();
        }
        flush();
        std::string best = "en";
        size_t best_hits = 0;
        for (const auto& [lang, n] : hits) {
            if (n > best_hits) {
                best = lang;
                best_hits = n;
            }
        }
        return best;
    }
};

struct ComplianceResult {
    std::string requested_lang;
    std::vector<std::pair<std::string, double>> detected;
    bool consistent = false;
    size_t stripped_length = 0;  // code points after math stripping
    std::string reason;          // set when inconsistent
};

// Chinese maps to zh-cn on both sides; Malay and Indonesian alias each other
// symmetrically.
inline std::string normalize_lang_tag(const std::string& lang) {
    return lang == "zh" ? "zh-cn" : lang;
}

inline bool lang_matches(const std::string& requested, const std::string& detected) {
    std::string r = normalize_lang_tag(requested);
    std::string d = normalize_lang_tag(detected);
    if (r == d) return true;
    if ((r == "ms" && d == "id") || (r == "id" && d == "ms")) return true;
    return false;
}

// Strips math spans, runs the detector, and accepts only a single detected
// language matching the requested one under the alias rules. Compliance is
// reported separately from scoring and never feeds it.
inline ComplianceResult check_compliance(const TraceDocument& trace,
                                         const std::string& requested_lang,
                                         const LanguageDetector& detector) {
    ComplianceResult result;
    result.requested_lang = requested_lang;

    std::string stripped = strip_math_spans(trace.text());
    std::string trimmed = detail::normalize_ws(stripped);
    result.stripped_length = detail::utf8_decode(stripped).size();
    if (trimmed.empty()) {
        result.consistent = false;
        result.reason = "empty_after_strip";
        return result;
    }

    result.detected = detector.detect(stripped);
    if (result.detected.empty()) {
        result.reason = "no_language_detected";
    } else if (result.detected.size() > 1) {
        result.reason = "multiple_languages";
    } else if (!lang_matches(requested_lang, result.detected[0].first)) {
        result.reason = "language_mismatch";
    } else {
        result.consistent = true;
    }
    return result;
}

inline nlohmann::ordered_json to_json(const ComplianceResult& result) {
    nlohmann::ordered_json doc;
    doc["requested_lang"] = result.requested_lang;
    doc["detected"] = nlohmann::ordered_json::array();
    for (const auto& [lang, conf] : result.detected)
        doc["detected"].push_back({{"lang", lang}, {"confidence", conf}});
    doc["consistent"] = result.consistent;
    doc["stripped_length"] = result.stripped_length;
    if (!result.reason.empty()) doc["reason"] = result.reason;
    return doc;
}

}  // namespace datg
