#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "datg/errors.hpp"

namespace datg {

// One anchor node of a reference DAG. `anchor` holds the compact symbolic
// mathematical state; `description` is a readability gloss only. Edges are
// parent-defined: u -> v exists iff u appears in v's parents.
struct AnchorNode {
    std::string node_id;
    std::string anchor;
    std::string description;
    std::vector<std::string> parents;
};

struct Violation {
    std::string rule_id;
    std::optional<std::string> node_id;
    std::string message;
};

struct ValidationReport {
    bool ok = true;
    std::vector<Violation> violations;
};

// Immutable after parse; safe to share across concurrent readers.
struct ReferenceDag {
    std::vector<AnchorNode> nodes;  // document order, expected topological
    std::string final_node_id;
    std::string source_id;  // opaque provenance tag, optional in documents
    // Duplicate parent entries are collapsed at parse time; each collapse is
    // recorded here and surfaces as a warning violation in validate_dag.
    std::vector<Violation> parse_warnings;

    std::optional<size_t> index_of(const std::string& node_id) const {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].node_id == node_id) return i;
        return std::nullopt;
    }
    bool has_node(const std::string& node_id) const { return index_of(node_id).has_value(); }
};

inline ReferenceDag parse_dag_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaViolation("DAG document must be a JSON object");
    if (!doc.contains("final_node_id"))
        throw SchemaViolation("missing required field: final_node_id");
    if (!doc["final_node_id"].is_string())
        throw SchemaViolation("final_node_id must be a string");
    if (!doc.contains("nodes")) throw SchemaViolation("missing required field: nodes");
    if (!doc["nodes"].is_array()) throw SchemaViolation("nodes must be an array");

    ReferenceDag dag;
    dag.final_node_id = doc["final_node_id"].get<std::string>();
    if (doc.contains("source_id") && doc["source_id"].is_string())
        dag.source_id = doc["source_id"].get<std::string>();

    for (const auto& n : doc["nodes"]) {
        if (!n.is_object()) throw SchemaViolation("node entries must be objects");
        AnchorNode node;
        if (!n.contains("node_id") || !n["node_id"].is_string())
            throw SchemaViolation("node missing string field: node_id");
        node.node_id = n["node_id"].get<std::string>();
        if (!n.contains("anchor") || !n["anchor"].is_string())
            throw SchemaViolation("node " + node.node_id + " missing string field: anchor");
        node.anchor = n["anchor"].get<std::string>();
        if (n.contains("description")) {
            if (!n["description"].is_string())
                throw SchemaViolation("node " + node.node_id + ": description must be a string");
            node.description = n["description"].get<std::string>();
        }
        if (n.contains("parents")) {
            if (!n["parents"].is_array())
                throw SchemaViolation("node " + node.node_id + ": parents must be an array");
            std::set<std::string> seen;
            for (const auto& p : n["parents"]) {
                if (!p.is_string())
                    throw SchemaViolation("node " + node.node_id + ": parent ids must be strings");
                std::string pid = p.get<std::string>();
                if (!seen.insert(pid).second) {
                    dag.parse_warnings.push_back(
                        {"duplicate_parent", node.node_id,
                         "duplicate parent '" + pid + "' collapsed to one edge"});
                    continue;
                }
                node.parents.push_back(std::move(pid));
            }
        }
        dag.nodes.push_back(std::move(node));
    }
    return dag;
}

// Parses the UTF-8 JSON wire format {"final_node_id": ..., "nodes": [...]}.
// Unknown extra fields are ignored.
inline ReferenceDag parse_dag(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw MalformedDocument("DAG document is not valid JSON");
    return parse_dag_json(doc);
}

inline nlohmann::ordered_json to_json(const ReferenceDag& dag) {
    nlohmann::ordered_json doc;
    doc["final_node_id"] = dag.final_node_id;
    doc["nodes"] = nlohmann::ordered_json::array();
    for (const auto& n : dag.nodes) {
        nlohmann::ordered_json jn;
        jn["node_id"] = n.node_id;
        jn["anchor"] = n.anchor;
        jn["description"] = n.description;
        jn["parents"] = n.parents;
        doc["nodes"].push_back(std::move(jn));
    }
    if (!dag.source_id.empty()) doc["source_id"] = dag.source_id;
    return doc;
}

// One edge per distinct (parent, child) pair, in child order then parent
// order. Length always equals the sum of stored parent-list lengths.
inline std::vector<std::pair<std::string, std::string>> edges(const ReferenceDag& dag) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& node : dag.nodes)
        for (const auto& parent : node.parents) out.emplace_back(parent, node.node_id);
    return out;
}

// Reports every violated structural rule; never throws. ok iff no entries.
inline ValidationReport validate_dag(const ReferenceDag& dag) {
    ValidationReport report;
    auto add = [&](std::string rule, std::optional<std::string> node, std::string msg) {
        report.violations.push_back({std::move(rule), std::move(node), std::move(msg)});
    };

    for (const auto& w : dag.parse_warnings) report.violations.push_back(w);

    if (dag.nodes.empty()) add("empty_nodes", std::nullopt, "DAG has no nodes");

    std::map<std::string, size_t> index;
    for (size_t i = 0; i < dag.nodes.size(); ++i) {
        const auto& n = dag.nodes[i];
        if (!index.emplace(n.node_id, i).second)
            add("duplicate_node_id", n.node_id, "node id appears more than once");
        if (n.anchor.empty()) add("empty_anchor", n.node_id, "anchor must be non-empty");
    }

    bool forward_or_unknown = false;
    for (size_t i = 0; i < dag.nodes.size(); ++i) {
        const auto& n = dag.nodes[i];
        for (const auto& p : n.parents) {
            auto it = index.find(p);
            if (it == index.end()) {
                add("unknown_parent", n.node_id, "parent '" + p + "' is not a node of this DAG");
                forward_or_unknown = true;
            } else if (it->second >= i) {
                add("forward_parent", n.node_id,
                    "parent '" + p + "' is not emitted earlier in the node list");
                forward_or_unknown = true;
            }
        }
    }

    // Cycle check over known edges (Kahn). Parent-first order already implies
    // acyclicity, so this only fires alongside forward references.
    if (forward_or_unknown && !dag.nodes.empty()) {
        std::map<std::string, int> indegree;
        std::map<std::string, std::vector<std::string>> children;
        for (const auto& n : dag.nodes) indegree[n.node_id];
        for (const auto& n : dag.nodes) {
            for (const auto& p : n.parents) {
                if (!index.count(p)) continue;
                ++indegree[n.node_id];
                children[p].push_back(n.node_id);
            }
        }
        std::vector<std::string> queue;
        for (const auto& [id, deg] : indegree)
            if (deg == 0) queue.push_back(id);
        size_t removed = 0;
        while (!queue.empty()) {
            std::string id = queue.back();
            queue.pop_back();
            ++removed;
            for (const auto& c : children[id])
                if (--indegree[c] == 0) queue.push_back(c);
        }
        if (removed != indegree.size())
            add("cycle", std::nullopt, "parent references form a cycle");
    }

    auto final_it = index.find(dag.final_node_id);
    if (dag.final_node_id.empty() || final_it == index.end()) {
        add("final_missing", std::nullopt,
            "final_node_id '" + dag.final_node_id + "' is not a node of this DAG");
    } else {
        for (const auto& n : dag.nodes) {
            for (const auto& p : n.parents) {
                if (p == dag.final_node_id) {
                    add("final_not_sink", n.node_id,
                        "final node is not a terminal sink: listed as parent of '" + n.node_id +
                            "'");
                }
            }
        }
        // Every node must support the final node: walk ancestors from final.
        std::set<std::string> support;
        std::vector<std::string> stack{dag.final_node_id};
        while (!stack.empty()) {
            std::string id = stack.back();
            stack.pop_back();
            if (!support.insert(id).second) continue;
            auto it = index.find(id);
            if (it == index.end()) continue;
            for (const auto& p : dag.nodes[it->second].parents) stack.push_back(p);
        }
        for (const auto& n : dag.nodes) {
            if (!support.count(n.node_id))
                add("unreachable_node", n.node_id, "node does not support the final node");
        }
    }

    report.ok = report.violations.empty();
    return report;
}

inline nlohmann::ordered_json to_json(const ValidationReport& report) {
    nlohmann::ordered_json doc;
    doc["ok"] = report.ok;
    doc["violations"] = nlohmann::ordered_json::array();
    for (const auto& v : report.violations) {
        nlohmann::ordered_json jv;
        jv["rule_id"] = v.rule_id;
        if (v.node_id) jv["node_id"] = *v.node_id;
        jv["message"] = v.message;
        doc["violations"].push_back(std::move(jv));
    }
    return doc;
}

}  // namespace datg
