#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/detail/text.hpp"
#include "datg/errors.hpp"

namespace datg {

// A raw reasoning trace (the generated CoT after the opening thinking tag).
// All offsets into the text are code-point offsets; the decoded form is
// cached once at construction and shared by every operation.
class TraceDocument {
public:
    TraceDocument() = default;
    TraceDocument(std::string trace_id, std::string text,
                  std::optional<std::string> final_response = std::nullopt,
                  std::map<std::string, std::string> meta = {})
        : trace_id_(std::move(trace_id)),
          text_(std::move(text)),
          final_response_(std::move(final_response)),
          meta_(std::move(meta)),
          code_points_(detail::utf8_decode(text_)) {}

    const std::string& trace_id() const { return trace_id_; }
    const std::string& text() const { return text_; }
    const std::optional<std::string>& final_response() const { return final_response_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }
    const std::u32string& code_points() const { return code_points_; }
    size_t length() const { return code_points_.size(); }

    std::string meta_value(const std::string& key, std::string fallback = "") const {
        auto it = meta_.find(key);
        return it == meta_.end() ? fallback : it->second;
    }

    // Trace record line: {trace_id, text, final_response?, meta{...}}.
    static TraceDocument from_json(const nlohmann::json& doc) {
        if (!doc.is_object()) throw SchemaViolation("trace record must be a JSON object");
        if (!doc.contains("trace_id") || !doc["trace_id"].is_string())
            throw SchemaViolation("trace record missing string field: trace_id");
        if (!doc.contains("text") || !doc["text"].is_string())
            throw SchemaViolation("trace record missing string field: text");
        std::optional<std::string> final_response;
        if (doc.contains("final_response") && doc["final_response"].is_string())
            final_response = doc["final_response"].get<std::string>();
        std::map<std::string, std::string> meta;
        if (doc.contains("meta")) {
            if (!doc["meta"].is_object())
                throw SchemaViolation("trace record meta must be an object");
            for (const auto& [k, v] : doc["meta"].items())
                if (v.is_string()) meta[k] = v.get<std::string>();
        }
        return TraceDocument(doc["trace_id"].get<std::string>(), doc["text"].get<std::string>(),
                             std::move(final_response), std::move(meta));
    }

    static TraceDocument parse_line(const std::string& line) {
        nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
        if (doc.is_discarded()) throw MalformedDocument("trace record is not valid JSON");
        return from_json(doc);
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json doc;
        doc["trace_id"] = trace_id_;
        doc["text"] = text_;
        if (final_response_) doc["final_response"] = *final_response_;
        doc["meta"] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : meta_) doc["meta"][k] = v;
        return doc;
    }

private:
    std::string trace_id_;
    std::string text_;
    std::optional<std::string> final_response_;
    std::map<std::string, std::string> meta_;
    std::u32string code_points_;
};

struct Block {
    int block_id = 0;
    size_t start_char = 0;
    size_t end_char = 0;
};

// Blank-line segmentation: block boundaries at runs of >= 2 newlines.
// Whitespace-only segments are dropped.
inline std::vector<Block> segment_blocks(const TraceDocument& trace) {
    const std::u32string& cps = trace.code_points();
    std::vector<Block> blocks;
    size_t i = 0;
    while (i < cps.size()) {
        // skip a separator: maximal newline run of length >= 2 (single
        // newlines stay inside a block)
        size_t seg_start = i;
        size_t j = i;
        while (j < cps.size()) {
            if (cps[j] == U'\n') {
                size_t run_end = j;
                while (run_end < cps.size() && cps[run_end] == U'\n') ++run_end;
                if (run_end - j >= 2) break;
                j = run_end;
            } else {
                ++j;
            }
        }
        size_t seg_end = j;
        bool all_ws = true;
        for (size_t k = seg_start; k < seg_end; ++k) {
            if (!detail::is_space(cps[k])) {
                all_ws = false;
                break;
            }
        }
        if (seg_end > seg_start && !all_ws) {
            blocks.push_back({static_cast<int>(blocks.size()), seg_start, seg_end});
        }
        // advance past the newline run that terminated the segment
        i = seg_end;
        while (i < cps.size() && cps[i] == U'\n') ++i;
    }
    return blocks;
}

// Block containing the offset; offsets inside a separator gap map to the
// preceding block (floor rule). Returns 0 for offsets before the first block.
inline int block_of(const std::vector<Block>& blocks, size_t char_offset) {
    int id = 0;
    for (const auto& b : blocks) {
        if (b.start_char <= char_offset) id = b.block_id;
        if (b.start_char > char_offset) break;
    }
    return id;
}

enum class MatchMode { Exact, WhitespaceNormalized };

struct SpanLocation {
    size_t start_char = 0;
    size_t end_char = 0;
    int block_id = 0;
    double commit_progress = 0.0;  // start_char / trace length
    MatchMode mode = MatchMode::Exact;
};

inline constexpr size_t kDefaultMaxSpanChars = 240;

// Earliest exact match of the quoted span; falls back to matching with
// whitespace runs collapsed on both sides. nullopt is a localization failure
// the caller must record, not an error.
inline std::optional<SpanLocation> locate_span(const TraceDocument& trace,
                                               std::string_view quoted_span,
                                               size_t max_span_chars = kDefaultMaxSpanChars) {
    if (quoted_span.empty() || trace.length() == 0) return std::nullopt;
    std::u32string needle = detail::utf8_decode(quoted_span);
    if (needle.size() > max_span_chars) return std::nullopt;
    const std::u32string& hay = trace.code_points();

    auto finish = [&](size_t start, size_t end, MatchMode mode) {
        SpanLocation loc;
        loc.start_char = start;
        loc.end_char = end;
        loc.block_id = block_of(segment_blocks(trace), start);
        loc.commit_progress = static_cast<double>(start) / static_cast<double>(trace.length());
        loc.mode = mode;
        return loc;
    };

    size_t pos = hay.find(needle);
    if (pos != std::u32string::npos)
        return finish(pos, pos + needle.size(), MatchMode::Exact);

    detail::NormalizedText nhay = detail::normalize_keep_origin(hay);
    detail::NormalizedText nneedle = detail::normalize_keep_origin(needle);
    if (nneedle.text.empty()) return std::nullopt;
    size_t npos = nhay.text.find(nneedle.text);
    if (npos == std::u32string::npos) return std::nullopt;
    size_t start = nhay.origin[npos];
    size_t end = nhay.origin[npos + nneedle.text.size() - 1] + 1;
    return finish(start, end, MatchMode::WhitespaceNormalized);
}

struct BoxedScan {
    std::optional<std::string> content;  // last balanced \boxed{...} payload
    bool unbalanced = false;             // some occurrence failed to balance
};

inline BoxedScan scan_boxed(std::string_view text) {
    BoxedScan result;
    static constexpr std::string_view marker = "\\boxed{";
    size_t pos = 0;
    while (true) {
        size_t at = text.find(marker, pos);
        if (at == std::string_view::npos) break;
        size_t i = at + marker.size();
        int depth = 1;
        size_t content_start = i;
        while (i < text.size() && depth > 0) {
            if (text[i] == '{') ++depth;
            else if (text[i] == '}') --depth;
            ++i;
        }
        if (depth == 0) {
            result.content = std::string(text.substr(content_start, i - 1 - content_start));
        } else {
            result.unbalanced = true;
        }
        pos = at + marker.size();
    }
    return result;
}

// Content of the last balanced \boxed{...}; unbalanced markers count as
// absent.
inline std::optional<std::string> extract_boxed(std::string_view text) {
    return scan_boxed(text).content;
}

using VerifierHook = std::function<std::optional<bool>(const std::string&, const std::string&)>;

// Built-in comparator: exact rational equality for simple integer / decimal /
// fraction forms, whitespace-stripped string equality otherwise. A pluggable
// hook may override the decision entirely.
inline bool verify_answer(const std::string& predicted, const std::string& gold,
                          const VerifierHook& hook = nullptr) {
    if (hook) {
        if (auto v = hook(predicted, gold)) return *v;
    }
    auto p = detail::parse_rational(predicted);
    auto g = detail::parse_rational(gold);
    if (p && g) return p->num == g->num && p->den == g->den;

    auto strip = [](const std::string& s) {
        std::string out;
        for (char c : s)
            if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
        return out;
    };
    return strip(predicted) == strip(gold);
}

}  // namespace datg
