#pragma once

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/dag.hpp"
#include "datg/detail/text.hpp"
#include "datg/errors.hpp"
#include "datg/trace.hpp"

namespace datg {

// Aligner-emitted statuses. Missing is a scoring status, assigned during
// resolution, never emitted by the aligner.
enum class EventStatus { Commit, Attempt, Error };
enum class FinalStatus { Commit, Attempt, Error, Missing };

inline const char* to_string(EventStatus s) {
    switch (s) {
        case EventStatus::Commit: return "COMMIT";
        case EventStatus::Attempt: return "ATTEMPT";
        case EventStatus::Error: return "ERROR";
    }
    return "?";
}

inline const char* to_string(FinalStatus s) {
    switch (s) {
        case FinalStatus::Commit: return "COMMIT";
        case FinalStatus::Attempt: return "ATTEMPT";
        case FinalStatus::Error: return "ERROR";
        case FinalStatus::Missing: return "MISSING";
    }
    return "?";
}

struct NodeEvent {
    EventStatus status = EventStatus::Attempt;
    std::string evidence;       // short quote, <= 80 chars nominal
    std::string evidence_span;  // continuous quote, <= 120 chars nominal
    std::optional<SpanLocation> location;  // filled by resolution
};

struct HarmfulItem {
    std::string evidence;
    std::optional<std::string> evidence_span;
    std::string category;
};

inline constexpr size_t kHarmfulListCap = 2;
inline constexpr size_t kDegenerateListCap = 1;

// Closed-set aligner output for one (trace, DAG) pair. audit_results carries
// one entry per DAG node in DAG order; nodes the aligner omitted get empty
// event lists.
struct AlignmentRecord {
    std::string dag_ref;
    std::vector<std::pair<std::string, std::vector<NodeEvent>>> audit_results;
    std::vector<HarmfulItem> contradictory_steps;
    std::vector<HarmfulItem> harmful_loop_steps;
    std::vector<HarmfulItem> degenerate_steps;
    std::vector<std::string> warnings;  // list-budget truncations and similar

    const std::vector<NodeEvent>* events_for(const std::string& node_id) const {
        for (const auto& [id, events] : audit_results)
            if (id == node_id) return &events;
        return nullptr;
    }
};

namespace detail_align {

inline EventStatus parse_status(const std::string& s) {
    std::string u = detail::to_lower_ascii(s);
    if (u == "commit") return EventStatus::Commit;
    if (u == "attempt") return EventStatus::Attempt;
    if (u == "error") return EventStatus::Error;
    throw SchemaViolation("unknown node event status: " + s);
}

inline std::vector<HarmfulItem> parse_harmful_list(const nlohmann::json& doc, const char* key,
                                                   const char* default_category, size_t cap,
                                                   std::vector<std::string>& warnings) {
    std::vector<HarmfulItem> items;
    if (!doc.contains(key)) return items;
    const auto& arr = doc[key];
    if (!arr.is_array()) throw SchemaViolation(std::string(key) + " must be an array");
    for (const auto& j : arr) {
        if (!j.is_object()) throw SchemaViolation(std::string(key) + " entries must be objects");
        HarmfulItem item;
        if (j.contains("evidence") && j["evidence"].is_string())
            item.evidence = j["evidence"].get<std::string>();
        if (j.contains("evidence_span") && j["evidence_span"].is_string())
            item.evidence_span = j["evidence_span"].get<std::string>();
        item.category = default_category;
        if (j.contains("category") && j["category"].is_string())
            item.category = j["category"].get<std::string>();
        items.push_back(std::move(item));
    }
    if (items.size() > cap) {
        warnings.push_back(std::string(key) + " over budget (" + std::to_string(items.size()) +
                           " > " + std::to_string(cap) + "), truncated");
        items.resize(cap);
    }
    return items;
}

}  // namespace detail_align

inline AlignmentRecord parse_alignment_json(const nlohmann::json& doc, const ReferenceDag& dag) {
    if (!doc.is_object()) throw SchemaViolation("alignment document must be a JSON object");
    AlignmentRecord record;
    record.dag_ref = dag.source_id;

    std::vector<std::pair<std::string, std::vector<NodeEvent>>> parsed;
    if (doc.contains("audit_results")) {
        if (!doc["audit_results"].is_object())
            throw SchemaViolation("audit_results must be an object");
        for (const auto& [node_id, events_json] : doc["audit_results"].items()) {
            if (!dag.has_node(node_id))
                throw ClosedSetViolation("audit_results key '" + node_id +
                                         "' is not a node of the referenced DAG");
            if (!events_json.is_array())
                throw SchemaViolation("audit_results entry for '" + node_id +
                                      "' must be an array");
            std::vector<NodeEvent> events;
            for (const auto& e : events_json) {
                if (!e.is_object())
                    throw SchemaViolation("node events must be objects (node '" + node_id + "')");
                if (!e.contains("status") || !e["status"].is_string())
                    throw SchemaViolation("node event missing string field: status (node '" +
                                          node_id + "')");
                NodeEvent event;
                event.status = detail_align::parse_status(e["status"].get<std::string>());
                if (e.contains("evidence") && e["evidence"].is_string())
                    event.evidence = e["evidence"].get<std::string>();
                if (e.contains("evidence_span") && e["evidence_span"].is_string())
                    event.evidence_span = e["evidence_span"].get<std::string>();
                events.push_back(std::move(event));
            }
            parsed.emplace_back(node_id, std::move(events));
        }
    }

    // Materialize in DAG node order; omitted nodes get empty lists (missing).
    for (const auto& node : dag.nodes) {
        std::vector<NodeEvent> events;
        for (auto& [id, ev] : parsed)
            if (id == node.node_id) events = std::move(ev);
        record.audit_results.emplace_back(node.node_id, std::move(events));
    }

    record.contradictory_steps = detail_align::parse_harmful_list(
        doc, "contradictory_steps", "contradiction", kHarmfulListCap, record.warnings);
    record.harmful_loop_steps = detail_align::parse_harmful_list(
        doc, "harmful_loop_steps", "loop", kHarmfulListCap, record.warnings);
    record.degenerate_steps = detail_align::parse_harmful_list(
        doc, "degenerate_steps", "collapse", kDegenerateListCap, record.warnings);
    return record;
}

inline AlignmentRecord parse_alignment(const std::string& text, const ReferenceDag& dag) {
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw MalformedDocument("alignment document is not valid JSON");
    return parse_alignment_json(doc, dag);
}

struct ResolvedStatus {
    std::string node_id;
    FinalStatus final_status = FinalStatus::Missing;
    std::optional<SpanLocation> commit_location;
};

struct LocatedEvent {
    std::string node_id;
    NodeEvent event;  // location filled
};

struct Resolution {
    std::vector<ResolvedStatus> statuses;    // one per DAG node, DAG order
    std::vector<LocatedEvent> located_events;
    std::vector<std::string> diagnostics;    // dropped events, one line each
};

// Per node: locate each event's evidence span in the trace, drop events that
// cannot be located, then resolve COMMIT > ERROR > ATTEMPT > MISSING. The
// earliest located COMMIT supplies the commit location.
inline Resolution resolve_statuses(const AlignmentRecord& record, const TraceDocument& trace,
                                   const ReferenceDag& dag) {
    Resolution out;
    static const std::vector<NodeEvent> kNoEvents;
    for (const auto& node : dag.nodes) {
        const std::string& node_id = node.node_id;
        const std::vector<NodeEvent>* found = record.events_for(node_id);
        const std::vector<NodeEvent>& events = found ? *found : kNoEvents;
        ResolvedStatus resolved;
        resolved.node_id = node_id;
        std::optional<SpanLocation> best_commit;
        bool any_error = false, any_attempt = false;
        for (size_t k = 0; k < events.size(); ++k) {
            const NodeEvent& event = events[k];
            const std::string& span =
                event.evidence_span.empty() ? event.evidence : event.evidence_span;
            auto loc = locate_span(trace, span);
            if (!loc) {
                out.diagnostics.push_back("node " + node_id + ": event " + std::to_string(k) +
                                          " (" + to_string(event.status) +
                                          ") evidence span not locatable, dropped");
                continue;
            }
            NodeEvent located = event;
            located.location = *loc;
            out.located_events.push_back({node_id, std::move(located)});
            switch (event.status) {
                case EventStatus::Commit:
                    if (!best_commit || loc->start_char < best_commit->start_char)
                        best_commit = *loc;
                    break;
                case EventStatus::Error:
                    any_error = true;
                    break;
                case EventStatus::Attempt:
                    any_attempt = true;
                    break;
            }
        }
        if (best_commit) {
            resolved.final_status = FinalStatus::Commit;
            resolved.commit_location = best_commit;
        } else if (any_error) {
            resolved.final_status = FinalStatus::Error;
        } else if (any_attempt) {
            resolved.final_status = FinalStatus::Attempt;
        } else {
            resolved.final_status = FinalStatus::Missing;
        }
        out.statuses.push_back(std::move(resolved));
    }
    return out;
}

// Deduplicated action sets for HAR. Keys are whitespace-normalized evidence
// spans (evidence as fallback); the judgeable set is located node events plus
// all harmful-list items, the harmful set the harmful-list items alone.
struct EffectiveActionSet {
    std::vector<std::string> judgeable;  // dedup keys, first-seen order
    std::vector<std::string> harmful;

    size_t judge_count() const { return judgeable.size(); }
    size_t harm_count() const { return harmful.size(); }
};

inline EffectiveActionSet effective_actions(const AlignmentRecord& record,
                                            const Resolution& resolution) {
    EffectiveActionSet set;
    std::set<std::string> judge_seen, harm_seen;
    auto key_of = [](const std::string& span, const std::string& evidence) {
        std::string k = detail::normalize_ws(span.empty() ? evidence : span);
        return k;
    };
    auto add_judge = [&](const std::string& key) {
        if (key.empty()) return;
        if (judge_seen.insert(key).second) set.judgeable.push_back(key);
    };

    for (const auto& located : resolution.located_events)
        add_judge(key_of(located.event.evidence_span, located.event.evidence));

    auto add_harmful = [&](const std::vector<HarmfulItem>& items) {
        for (const auto& item : items) {
            std::string key = key_of(item.evidence_span.value_or(""), item.evidence);
            if (key.empty()) continue;
            add_judge(key);
            if (harm_seen.insert(key).second) set.harmful.push_back(key);
        }
    };
    add_harmful(record.contradictory_steps);
    add_harmful(record.harmful_loop_steps);
    add_harmful(record.degenerate_steps);
    return set;
}

}  // namespace datg
