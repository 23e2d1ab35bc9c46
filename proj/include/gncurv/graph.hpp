#pragma once

// Directed multigraph values and batching. Everything here is immutable
// after construction and safe to share across threads.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "gncurv/errors.hpp"
#include "gncurv/tensor.hpp"

namespace gncurv {

struct Edge {
    std::int64_t src = 0;
    std::int64_t dst = 0;
    std::int64_t key = 0;
    std::vector<double> feat;
};

/// A directed multigraph: node feature rows, keyed directed edges with
/// feature vectors, and one scalar target per task.
struct Multigraph {
    std::string id;
    Tensor node_features;       // N x V
    std::vector<Edge> edges;    // (src, dst, key) triples unique
    std::vector<double> targets; // length T

    std::int64_t num_nodes() const { return node_features.rows(); }
    std::int64_t node_dim() const { return node_features.cols(); }
    std::int64_t num_edges() const { return static_cast<std::int64_t>(edges.size()); }

    /// Edge feature width; -1 when the graph has no edges.
    std::int64_t edge_dim() const {
        return edges.empty() ? -1 : static_cast<std::int64_t>(edges.front().feat.size());
    }
};

/// Checks every Multigraph invariant; returns human-readable violations
/// instead of throwing so callers can report all problems at once.
inline std::vector<std::string> validate_graph(const Multigraph& g) {
    std::vector<std::string> issues;
    const std::int64_t n = g.num_nodes();
    if (n == 0) issues.push_back("graph has no nodes");
    if (!g.node_features.all_finite()) issues.push_back("non-finite node feature");
    std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> triples;
    std::int64_t feat_len = -1;
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const Edge& e = g.edges[i];
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
            issues.push_back("edge " + std::to_string(i) + ": index out of range");
        if (e.key < 0) issues.push_back("edge " + std::to_string(i) + ": negative key");
        if (!triples.insert({e.src, e.dst, e.key}).second)
            issues.push_back("edge " + std::to_string(i) + ": duplicate multi-edge key");
        if (feat_len < 0) feat_len = static_cast<std::int64_t>(e.feat.size());
        if (static_cast<std::int64_t>(e.feat.size()) != feat_len)
            issues.push_back("edge " + std::to_string(i) + ": feature width differs");
        for (double x : e.feat)
            if (!std::isfinite(x)) {
                issues.push_back("edge " + std::to_string(i) + ": non-finite feature");
                break;
            }
    }
    for (double y : g.targets)
        if (!std::isfinite(y)) {
            issues.push_back("non-finite target");
            break;
        }
    return issues;
}

/// Adds the reverse of every directed edge that lacks one, carrying the same
/// key and feature vector. Idempotent. A reverse edge already present with a
/// different feature vector is an error.
inline Multigraph symmetrize_edges(const Multigraph& g) {
    Multigraph out = g;
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, const Edge*> by_triple;
    for (const Edge& e : g.edges) by_triple[{e.src, e.dst, e.key}] = &e;
    for (const Edge& e : g.edges) {
        if (e.src == e.dst) continue; // a self-loop is its own reverse
        auto it = by_triple.find({e.dst, e.src, e.key});
        if (it == by_triple.end()) {
            out.edges.push_back(Edge{e.dst, e.src, e.key, e.feat});
        } else if (it->second->feat != e.feat) {
            throw DataError("graph '" + g.id + "': asymmetric duplicate edge (" +
                            std::to_string(e.src) + "," + std::to_string(e.dst) + "," +
                            std::to_string(e.key) + ")");
        }
    }
    return out;
}

/// Relabels nodes by a permutation: node r of the result is node perm[r] of
/// the input. Edge order and keys are preserved.
inline Multigraph permute_nodes(const Multigraph& g, const std::vector<std::int64_t>& perm) {
    const std::int64_t n = g.num_nodes();
    if (static_cast<std::int64_t>(perm.size()) != n)
        throw DataError("permute_nodes: permutation length mismatch");
    std::vector<std::int64_t> inverse(n, -1);
    for (std::int64_t r = 0; r < n; ++r) {
        if (perm[r] < 0 || perm[r] >= n || inverse[perm[r]] != -1)
            throw DataError("permute_nodes: not a permutation");
        inverse[perm[r]] = r;
    }
    Multigraph out = g;
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < g.node_dim(); ++c)
            out.node_features.at(r, c) = g.node_features.at(perm[r], c);
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        out.edges[i].src = inverse[g.edges[i].src];
        out.edges[i].dst = inverse[g.edges[i].dst];
    }
    return out;
}

/// Graphs packed into one index space: node/edge features concatenated, edge
/// endpoints offset, and per-row graph membership retained for unbatching
/// and segment reductions.
struct GraphBatch {
    Tensor node_features; // (sum N_i) x V
    Tensor edge_features; // (sum E_i) x E
    std::vector<std::int64_t> edge_src, edge_dst, edge_key; // global node ids
    std::vector<std::int64_t> node_graph, edge_graph;       // row -> graph index
    std::vector<std::int64_t> node_offsets;                 // per graph
    Tensor targets; // B x T
    std::vector<std::string> ids;

    std::int64_t num_graphs() const { return static_cast<std::int64_t>(ids.size()); }
    std::int64_t total_nodes() const { return node_features.rows(); }
    std::int64_t total_edges() const { return edge_features.rows(); }
};

inline GraphBatch batch_graphs(const std::vector<Multigraph>& graphs) {
    if (graphs.empty()) throw DataError("batch_graphs: empty list");
    const std::int64_t v_dim = graphs.front().node_dim();
    const std::int64_t t_dim = static_cast<std::int64_t>(graphs.front().targets.size());
    std::int64_t e_dim = -1;
    std::int64_t total_n = 0, total_e = 0;
    for (const Multigraph& g : graphs) {
        if (g.node_dim() != v_dim)
            throw DataError("batch_graphs: node feature widths differ");
        if (static_cast<std::int64_t>(g.targets.size()) != t_dim)
            throw DataError("batch_graphs: target counts differ");
        if (g.edge_dim() >= 0) {
            if (e_dim >= 0 && g.edge_dim() != e_dim)
                throw DataError("batch_graphs: edge feature widths differ");
            e_dim = g.edge_dim();
        }
        total_n += g.num_nodes();
        total_e += g.num_edges();
    }
    if (e_dim < 0) e_dim = 0;

    GraphBatch b;
    b.node_features = Tensor({total_n, v_dim});
    b.edge_features = Tensor({total_e, e_dim});
    b.targets = Tensor({static_cast<std::int64_t>(graphs.size()), t_dim});
    b.edge_src.reserve(total_e);
    b.edge_dst.reserve(total_e);
    b.edge_key.reserve(total_e);
    b.node_graph.reserve(total_n);
    b.edge_graph.reserve(total_e);

    std::int64_t node_off = 0, edge_off = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const Multigraph& g = graphs[gi];
        b.node_offsets.push_back(node_off);
        b.ids.push_back(g.id);
        for (std::int64_t r = 0; r < g.num_nodes(); ++r) {
            for (std::int64_t c = 0; c < v_dim; ++c)
                b.node_features.at(node_off + r, c) = g.node_features.at(r, c);
            b.node_graph.push_back(static_cast<std::int64_t>(gi));
        }
        for (std::int64_t r = 0; r < g.num_edges(); ++r) {
            const Edge& e = g.edges[r];
            for (std::int64_t c = 0; c < e_dim; ++c)
                b.edge_features.at(edge_off + r, c) = e.feat[c];
            b.edge_src.push_back(node_off + e.src);
            b.edge_dst.push_back(node_off + e.dst);
            b.edge_key.push_back(e.key);
            b.edge_graph.push_back(static_cast<std::int64_t>(gi));
        }
        for (std::int64_t t = 0; t < t_dim; ++t)
            b.targets.at(static_cast<std::int64_t>(gi), t) = g.targets[t];
        node_off += g.num_nodes();
        edge_off += g.num_edges();
    }
    return b;
}

/// Exact inverse of batch_graphs.
inline std::vector<Multigraph> unbatch(const GraphBatch& b) {
    std::vector<Multigraph> out(b.num_graphs());
    const std::int64_t v_dim = b.node_features.cols();
    const std::int64_t e_dim = b.edge_features.cols();
    std::vector<std::int64_t> node_counts(b.num_graphs(), 0);
    for (std::int64_t g : b.node_graph) ++node_counts[g];

    for (std::int64_t gi = 0; gi < b.num_graphs(); ++gi) {
        Multigraph& g = out[gi];
        g.id = b.ids[gi];
        g.node_features = Tensor({node_counts[gi], v_dim});
        for (std::int64_t r = 0; r < node_counts[gi]; ++r)
            for (std::int64_t c = 0; c < v_dim; ++c)
                g.node_features.at(r, c) = b.node_features.at(b.node_offsets[gi] + r, c);
        g.targets.resize(b.targets.cols());
        for (std::int64_t t = 0; t < b.targets.cols(); ++t)
            g.targets[t] = b.targets.at(gi, t);
    }
    for (std::int64_t r = 0; r < b.total_edges(); ++r) {
        const std::int64_t gi = b.edge_graph[r];
        Edge e;
        e.src = b.edge_src[r] - b.node_offsets[gi];
        e.dst = b.edge_dst[r] - b.node_offsets[gi];
        e.key = b.edge_key[r];
        e.feat.resize(e_dim);
        for (std::int64_t c = 0; c < e_dim; ++c) e.feat[c] = b.edge_features.at(r, c);
        out[gi].edges.push_back(std::move(e));
    }
    return out;
}

} // namespace gncurv
