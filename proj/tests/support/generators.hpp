#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "datg/alignment.hpp"
#include "datg/dag.hpp"
#include "datg/trace.hpp"

namespace testsupport {

// Random DAG emitted in topological order; every node supports the final
// sink.
inline datg::ReferenceDag random_dag(std::mt19937& rng, size_t min_nodes = 2,
                                     size_t max_nodes = 8, size_t max_edges = 12) {
    std::uniform_int_distribution<size_t> node_count(min_nodes, max_nodes);
    size_t n = node_count(rng);
    datg::ReferenceDag dag;
    size_t edges_used = 0;
    for (size_t i = 0; i < n; ++i) {
        datg::AnchorNode node;
        node.node_id = "n" + std::to_string(i + 1);
        node.anchor = "v" + std::to_string(i + 1) + " = " + std::to_string(i);
        if (i > 0 && edges_used < max_edges) {
            std::uniform_int_distribution<size_t> parent_count(
                1, std::min<size_t>({3, i, max_edges - edges_used}));
            std::uniform_int_distribution<size_t> pick(0, i - 1);
            std::set<size_t> chosen;
            size_t want = parent_count(rng);
            while (chosen.size() < want) chosen.insert(pick(rng));
            for (size_t p : chosen) node.parents.push_back("n" + std::to_string(p + 1));
            edges_used += chosen.size();
        }
        dag.nodes.push_back(std::move(node));
    }
    // wire unsupported nodes into the final sink
    std::set<std::string> supports{dag.nodes.back().node_id};
    for (size_t i = n; i-- > 0;) {
        if (supports.count(dag.nodes[i].node_id))
            for (const auto& p : dag.nodes[i].parents) supports.insert(p);
    }
    for (size_t i = 0; i + 1 < n; ++i) {
        if (!supports.count(dag.nodes[i].node_id))
            dag.nodes.back().parents.push_back(dag.nodes[i].node_id);
    }
    dag.final_node_id = dag.nodes.back().node_id;
    return dag;
}

// Random per-node statuses with synthetic commit locations (random progress
// and block assignments).
inline std::vector<datg::ResolvedStatus> random_statuses(const datg::ReferenceDag& dag,
                                                         std::mt19937& rng) {
    std::uniform_int_distribution<int> status(0, 3);
    std::uniform_real_distribution<double> progress(0.0, 1.0);
    std::uniform_int_distribution<int> block(0, 3);
    std::vector<datg::ResolvedStatus> out;
    for (const auto& node : dag.nodes) {
        datg::ResolvedStatus r;
        r.node_id = node.node_id;
        switch (status(rng)) {
            case 0: r.final_status = datg::FinalStatus::Commit; break;
            case 1: r.final_status = datg::FinalStatus::Attempt; break;
            case 2: r.final_status = datg::FinalStatus::Error; break;
            default: r.final_status = datg::FinalStatus::Missing; break;
        }
        if (r.final_status == datg::FinalStatus::Commit) {
            datg::SpanLocation loc;
            loc.commit_progress = progress(rng);
            loc.block_id = block(rng);
            loc.start_char = static_cast<size_t>(loc.commit_progress * 1000);
            loc.end_char = loc.start_char + 1;
            r.commit_location = loc;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace testsupport
