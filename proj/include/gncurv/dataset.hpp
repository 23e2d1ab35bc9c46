#pragma once

// Dataset ingestion and preprocessing: JSONL load/save, percentile
// filtering, log transform, target standardization, one-hot and decile
// featurization, train/test splitting, and a deterministic synthetic
// multigraph generator whose targets are physically coupled.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gncurv/errors.hpp"
#include "gncurv/graph.hpp"
#include "gncurv/rng.hpp"

namespace gncurv {

// ---------------------------------------------------------------------------
// JSONL dataset format: one graph per line,
// {"id": str, "nodes": [[f;V];N], "edges": [{"src","dst","key","feat"}],
//  "targets": [f;T]}
// ---------------------------------------------------------------------------

inline nlohmann::json graph_to_json(const Multigraph& g) {
    nlohmann::json j;
    j["id"] = g.id;
    auto nodes = nlohmann::json::array();
    for (std::int64_t r = 0; r < g.num_nodes(); ++r) {
        auto row = nlohmann::json::array();
        for (std::int64_t c = 0; c < g.node_dim(); ++c) row.push_back(g.node_features.at(r, c));
        nodes.push_back(std::move(row));
    }
    j["nodes"] = std::move(nodes);
    auto edges = nlohmann::json::array();
    for (const Edge& e : g.edges)
        edges.push_back({{"src", e.src}, {"dst", e.dst}, {"key", e.key}, {"feat", e.feat}});
    j["edges"] = std::move(edges);
    j["targets"] = g.targets;
    return j;
}

inline Multigraph graph_from_json(const nlohmann::json& j) {
    Multigraph g;
    g.id = j.at("id").get<std::string>();
    try {
        const auto& nodes = j.at("nodes");
        const std::int64_t n = static_cast<std::int64_t>(nodes.size());
        const std::int64_t v = n > 0 ? static_cast<std::int64_t>(nodes[0].size()) : 0;
        std::vector<double> vals;
        vals.reserve(n * v);
        for (const auto& row : nodes) {
            if (static_cast<std::int64_t>(row.size()) != v)
                throw DataError("ragged node feature rows");
            for (const auto& x : row) vals.push_back(x.get<double>());
        }
        g.node_features = Tensor({n, v}, std::move(vals)); // rejects non-finite
        for (const auto& je : j.at("edges")) {
            Edge e;
            e.src = je.at("src").get<std::int64_t>();
            e.dst = je.at("dst").get<std::int64_t>();
            e.key = je.at("key").get<std::int64_t>();
            e.feat = je.at("feat").get<std::vector<double>>();
            g.edges.push_back(std::move(e));
        }
        g.targets = j.at("targets").get<std::vector<double>>();
    } catch (const DataError& e) {
        throw DataError("graph '" + g.id + "': " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("graph '" + g.id + "': bad record: " + e.what());
    }
    const auto issues = validate_graph(g);
    if (!issues.empty())
        throw DataError("graph '" + g.id + "': " + issues.front());
    return g;
}

inline std::vector<Multigraph> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<Multigraph> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
        }
        try {
            out.push_back(graph_from_json(j));
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad record: " +
                            e.what());
        }
    }
    return out;
}

inline void save_dataset(const std::vector<Multigraph>& graphs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const Multigraph& g : graphs) out << graph_to_json(g).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Scalar preprocessing
// ---------------------------------------------------------------------------

/// Percentile by linear interpolation on the sorted values (rank
/// p/100 * (n-1)), the convention that keeps filter results reproducible.
inline double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw DataError("percentile: empty input");
    std::sort(values.begin(), values.end());
    const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

/// Indices whose values lie inside [lo_pct, hi_pct] percentiles (inclusive).
inline std::vector<std::size_t> percentile_filter(const std::vector<double>& values,
                                                  double lo_pct = 5.0,
                                                  double hi_pct = 95.0) {
    if (values.empty()) throw DataError("percentile_filter: empty input");
    if (lo_pct < 0.0 || hi_pct > 100.0 || lo_pct >= hi_pct)
        throw DataError("percentile_filter: bad percentile bounds");
    const double lo = percentile(values, lo_pct);
    const double hi = percentile(values, hi_pct);
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] >= lo && values[i] <= hi) kept.push_back(i);
    return kept;
}

inline std::vector<double> log_transform(const std::vector<double>& values) {
    std::vector<double> out;
    out.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] <= 0.0)
            throw DataError("log_transform: nonpositive value at index " +
                            std::to_string(i));
        out.push_back(std::log(values[i]));
    }
    return out;
}

/// Per-task mean and population standard deviation, fitted on the training
/// split only.
struct TaskStats {
    double mean = 0.0;
    double std = 1.0;
};

using TargetStats = std::vector<TaskStats>;

inline TaskStats fit_stats(const std::vector<double>& train_values) {
    if (train_values.empty()) throw DataError("fit_stats: empty input");
    double mean = 0.0;
    for (double v : train_values) mean += v;
    mean /= static_cast<double>(train_values.size());
    double var = 0.0;
    for (double v : train_values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(train_values.size());
    const double std = std::sqrt(var);
    if (std <= 0.0) throw DataError("fit_stats: degenerate target");
    return {mean, std};
}

inline double standardize(double value, const TaskStats& s) {
    return (value - s.mean) / s.std;
}

inline std::vector<double> standardize(const std::vector<double>& values,
                                       const TaskStats& s) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(standardize(v, s));
    return out;
}

/// Stats for every task of a dataset, from the training split.
inline TargetStats fit_target_stats(const std::vector<Multigraph>& train) {
    if (train.empty()) throw DataError("fit_target_stats: empty training split");
    const std::size_t t_dim = train.front().targets.size();
    TargetStats stats(t_dim);
    for (std::size_t t = 0; t < t_dim; ++t) {
        std::vector<double> col;
        col.reserve(train.size());
        for (const Multigraph& g : train) col.push_back(g.targets[t]);
        stats[t] = fit_stats(col);
    }
    return stats;
}

inline std::vector<double> one_hot(const std::string& category,
                                   const std::vector<std::string>& vocabulary) {
    std::vector<double> v(vocabulary.size(), 0.0);
    for (std::size_t i = 0; i < vocabulary.size(); ++i)
        if (vocabulary[i] == category) {
            v[i] = 1.0;
            return v;
        }
    throw DataError("one_hot: unknown category '" + category + "'");
}

/// Nine interior edges at the 10th..90th percentiles of the training values.
inline std::vector<double> decile_bins(const std::vector<double>& train_values) {
    if (train_values.empty()) throw DataError("decile_bins: empty training set");
    std::vector<double> edges;
    for (int d = 1; d <= 9; ++d)
        edges.push_back(percentile(train_values, 10.0 * d));
    return edges;
}

/// Left-closed bin index: bin i covers [edge_{i-1}, edge_i); out-of-range
/// values clamp to the end bins.
inline std::size_t bin_index(double value, const std::vector<double>& edges) {
    std::size_t b = 0;
    while (b < edges.size() && value >= edges[b]) ++b;
    return b;
}

inline std::vector<double> apply_bins(double value, const std::vector<double>& edges) {
    std::vector<double> v(edges.size() + 1, 0.0);
    v[bin_index(value, edges)] = 1.0;
    return v;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
    double train_fraction = 0.70;
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<Multigraph> train;
    std::vector<Multigraph> test;
};

/// Deterministic shuffle (Fisher-Yates on our own engine), first
/// floor(fraction * n) records to train.
inline Split split(const std::vector<Multigraph>& dataset, const SplitSpec& spec) {
    if (dataset.empty()) throw DataError("split: empty dataset");
    if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
        throw DataError("split: fraction must be in (0,1)");
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(spec.seed, "split"));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.index(i)]);
    const std::size_t n_train =
        static_cast<std::size_t>(spec.train_fraction * static_cast<double>(dataset.size()));
    Split s;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_train ? s.train : s.test).push_back(dataset[order[i]]);
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Poisson ratio of an isotropic solid from shear modulus G and bulk
/// modulus K. This exact functional coupling between the generated targets
/// is what multi-task experiments probe.
inline double poisson_ratio(double g, double k) {
    return (3.0 * k - 2.0 * g) / (2.0 * (3.0 * k + g));
}

/// Random connected multigraphs with one-hot node features, random edge
/// features, and three coupled targets:
///   y1 = G = mean directed degree + mean first edge feature
///   y2 = K = G + 1 + (N - 4) / 12
///   y3 = poisson_ratio(G, K)
/// Deterministic per seed; graphs are edge-symmetrized.
inline std::vector<Multigraph> synth_generate(std::int64_t n, std::uint64_t seed,
                                              int node_vocab_size = 8,
                                              int edge_feat_dim = 4, int tasks = 3) {
    if (n < 1) throw DataError("synth_generate: n must be >= 1");
    if (tasks < 1 || tasks > 3) throw DataError("synth_generate: tasks must be 1..3");
    std::vector<Multigraph> out;
    out.reserve(n);
    for (std::int64_t gi = 0; gi < n; ++gi) {
        Rng rng(derive_seed(seed, "synth-graph", static_cast<std::uint64_t>(gi)));
        const std::int64_t nodes = 4 + static_cast<std::int64_t>(rng.index(13)); // 4..16

        Multigraph g;
        g.id = "synth-" + std::to_string(seed) + "-" + std::to_string(gi);
        g.node_features = Tensor({nodes, node_vocab_size});
        for (std::int64_t r = 0; r < nodes; ++r)
            g.node_features.at(r, static_cast<std::int64_t>(rng.index(node_vocab_size))) = 1.0;

        // Keys count edges already attached to the unordered pair, so the
        // later symmetrization never meets a conflicting reverse edge.
        std::map<std::pair<std::int64_t, std::int64_t>, std::int64_t> pair_count;
        auto add_edge = [&](std::int64_t a, std::int64_t b) {
            auto& count = pair_count[{std::min(a, b), std::max(a, b)}];
            Edge e;
            e.src = a;
            e.dst = b;
            e.key = count++;
            e.feat.resize(edge_feat_dim);
            for (int c = 0; c < edge_feat_dim; ++c) e.feat[c] = rng.uniform();
            g.edges.push_back(std::move(e));
        };

        for (std::int64_t a = 0; a < nodes; ++a)
            for (std::int64_t b = 0; b < nodes; ++b)
                if (a != b && rng.bernoulli(0.3)) add_edge(a, b);
        // spanning path over a random node order guarantees connectivity
        std::vector<std::int64_t> order(nodes);
        for (std::int64_t i = 0; i < nodes; ++i) order[i] = i;
        for (std::int64_t i = nodes; i > 1; --i)
            std::swap(order[i - 1], order[rng.index(static_cast<std::uint64_t>(i))]);
        for (std::int64_t i = 0; i + 1 < nodes; ++i) add_edge(order[i], order[i + 1]);
        // occasional extra parallel edge
        const std::size_t base_edges = g.edges.size();
        for (std::size_t i = 0; i < base_edges; ++i)
            if (rng.bernoulli(0.05)) add_edge(g.edges[i].src, g.edges[i].dst);

        g = symmetrize_edges(g);

        const double mean_degree =
            static_cast<double>(g.num_edges()) / static_cast<double>(nodes);
        double mean_first_feat = 0.0;
        for (const Edge& e : g.edges) mean_first_feat += e.feat[0];
        mean_first_feat /= static_cast<double>(g.num_edges());

        const double shear = mean_degree + mean_first_feat;
        const double bulk = shear + 1.0 + static_cast<double>(nodes - 4) / 12.0;
        g.targets = {shear, bulk, poisson_ratio(shear, bulk)};
        g.targets.resize(tasks);
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace gncurv
