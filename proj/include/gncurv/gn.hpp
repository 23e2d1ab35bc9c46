#pragma once

// Shared-encoder graph network with per-task heads.
//
// The encoder projects node and edge features to a common latent width,
// initializes the global state to ones, and runs M message-passing steps:
//
//   e' = phiE(cat(e, x_src, x_dst, u)) + e
//   h_out(v) = sum of e' over out-edges, h_in(v) = sum over in-edges
//   x' = phiV(cat(h_out, h_in, x, u)) + x
//   u' = phiU(cat(sum_edges e', sum_nodes x', u)) + u
//
// followed by layer normalization of each stream. Each phi is a two-layer
// tanh network with a skip connection on the second layer and a linear
// output layer. The final global state feeds one feedforward head per task.
// All activations are tanh, keeping the loss twice differentiable.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gncurv/autodiff.hpp"
#include "gncurv/graph.hpp"
#include "gncurv/param.hpp"
#include "gncurv/rng.hpp"
#include "gncurv/tape.hpp"

namespace gncurv {

struct GnConfig {
    int node_feat_dim = 8; // raw node feature width V
    int edge_feat_dim = 4; // raw edge feature width E
    int latent_dim = 64;   // projected width of node/edge/global streams
    int steps = 5;         // message-passing steps M
    int edge_hidden = 256;
    int node_hidden = 256;
    int global_hidden = 192;
    int head_hidden = 64;
    int tasks = 3;
    bool share_step_params = false; // one phi/layer-norm group reused per step

    void validate() const {
        const int widths[] = {node_feat_dim, edge_feat_dim, latent_dim, edge_hidden,
                              node_hidden,   global_hidden, head_hidden, tasks};
        for (int w : widths)
            if (w < 1) throw DataError("gn config: all widths must be >= 1");
        if (steps < 1) throw DataError("gn config: steps must be >= 1");
    }
};

namespace gnet {

inline std::string step_prefix(const GnConfig& cfg, int m) {
    return cfg.share_step_params ? std::string("step*") : "step" + std::to_string(m);
}

/// Node ids of the tape leaves, addressable by parameter name.
struct LeafMap {
    const ParamSet* params = nullptr;
    std::span<const NodeId> leaves;

    NodeId at(std::string_view name) const {
        for (std::size_t i = 0; i < params->size(); ++i)
            if (params->entry(i).name == name) return leaves[i];
        throw DataError("gn: missing parameter '" + std::string(name) + "'");
    }
};

} // namespace gnet

/// Glorot-uniform weights, zero biases, identity layer norms; one entry per
/// parameter tensor in a fixed canonical order, deterministic per seed.
inline ParamSet init_params(const GnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "gn-init"));

    auto glorot = [&](std::int64_t fan_in, std::int64_t fan_out) {
        Tensor w({fan_in, fan_out});
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& x : w.values()) x = rng.uniform(-a, a);
        return w;
    };
    auto zeros = [](std::int64_t n) { return Tensor({n}); };

    ParamSet p;
    p.add_shared("enc/W_V", glorot(cfg.node_feat_dim, cfg.latent_dim));
    p.add_shared("enc/W_E", glorot(cfg.edge_feat_dim, cfg.latent_dim));

    const int groups = cfg.share_step_params ? 1 : cfg.steps;
    for (int m = 0; m < groups; ++m) {
        const std::string sp = gnet::step_prefix(cfg, m);
        auto add_phi = [&](const std::string& net, int in_width, int hidden) {
            p.add_shared(sp + "/" + net + "/W1", glorot(in_width, hidden));
            p.add_shared(sp + "/" + net + "/b1", zeros(hidden));
            p.add_shared(sp + "/" + net + "/W2", glorot(hidden, hidden));
            p.add_shared(sp + "/" + net + "/b2", zeros(hidden));
            p.add_shared(sp + "/" + net + "/W3", glorot(hidden, cfg.latent_dim));
            p.add_shared(sp + "/" + net + "/b3", zeros(cfg.latent_dim));
        };
        add_phi("edge", 4 * cfg.latent_dim, cfg.edge_hidden);
        add_phi("node", 4 * cfg.latent_dim, cfg.node_hidden);
        add_phi("global", 3 * cfg.latent_dim, cfg.global_hidden);
        for (const char* stream : {"ln_edge", "ln_node", "ln_global"}) {
            p.add_shared(sp + "/" + std::string(stream) + "/scale",
                         Tensor::filled({cfg.latent_dim}, 1.0));
            p.add_shared(sp + "/" + std::string(stream) + "/offset",
                         zeros(cfg.latent_dim));
        }
    }

    for (int t = 0; t < cfg.tasks; ++t) {
        const std::string tp = "task" + std::to_string(t);
        p.add_task(t, tp + "/W1", glorot(cfg.latent_dim, cfg.head_hidden));
        p.add_task(t, tp + "/b1", zeros(cfg.head_hidden));
        p.add_task(t, tp + "/W2", glorot(cfg.head_hidden, 1));
        p.add_task(t, tp + "/b2", zeros(1));
    }
    return p;
}

/// Numeric arrays of a batch in the form the tape builders consume.
struct BatchInputs {
    Tensor node_features; // N x V
    Tensor edge_features; // E x E_raw
    std::shared_ptr<const IndexVec> src, dst, node_graph, edge_graph;
    std::int64_t n_graphs = 0;
    Tensor targets; // B x T; standardized by the caller before loss building
};

inline BatchInputs make_inputs(const GraphBatch& b) {
    BatchInputs in;
    in.node_features = b.node_features;
    in.edge_features = b.edge_features;
    in.src = std::make_shared<const IndexVec>(b.edge_src);
    in.dst = std::make_shared<const IndexVec>(b.edge_dst);
    in.node_graph = std::make_shared<const IndexVec>(b.node_graph);
    in.edge_graph = std::make_shared<const IndexVec>(b.edge_graph);
    in.n_graphs = b.num_graphs();
    in.targets = b.targets;
    return in;
}

namespace gnet {

/// phi: tanh(W1 x + b1) -> tanh(W2 h + b2) + h -> W3 h + b3
template <class S>
NodeId build_phi(Tape<S>& tp, const LeafMap& L, const std::string& prefix, NodeId in) {
    NodeId h1 = tp.tanh(tp.add_bias(tp.matmul(in, L.at(prefix + "/W1")), L.at(prefix + "/b1")));
    NodeId h2 = tp.add(
        tp.tanh(tp.add_bias(tp.matmul(h1, L.at(prefix + "/W2")), L.at(prefix + "/b2"))), h1);
    return tp.add_bias(tp.matmul(h2, L.at(prefix + "/W3")), L.at(prefix + "/b3"));
}

struct StepNodes {
    NodeId pre_x, pre_e, pre_u; // residual updates before layer normalization
    NodeId x, e, u;             // after layer normalization
};

template <class S>
StepNodes build_step(Tape<S>& tp, const LeafMap& L, const GnConfig& cfg,
                     const BatchInputs& in, NodeId x, NodeId e, NodeId u, int m) {
    const std::string sp = step_prefix(cfg, m);
    const std::int64_t total_nodes = tp.value(x).rows();

    NodeId e_in = tp.concat({e, tp.gather(x, in.src), tp.gather(x, in.dst),
                             tp.gather(u, in.edge_graph)});
    NodeId pre_e = tp.add(build_phi(tp, L, sp + "/edge", e_in), e);

    NodeId h_out = tp.segment_sum(pre_e, in.src, total_nodes);
    NodeId h_in = tp.segment_sum(pre_e, in.dst, total_nodes);
    NodeId x_in = tp.concat({h_out, h_in, x, tp.gather(u, in.node_graph)});
    NodeId pre_x = tp.add(build_phi(tp, L, sp + "/node", x_in), x);

    NodeId u_in = tp.concat({tp.segment_sum(pre_e, in.edge_graph, in.n_graphs),
                             tp.segment_sum(pre_x, in.node_graph, in.n_graphs), u});
    NodeId pre_u = tp.add(build_phi(tp, L, sp + "/global", u_in), u);

    StepNodes s;
    s.pre_x = pre_x;
    s.pre_e = pre_e;
    s.pre_u = pre_u;
    s.x = tp.layer_norm(pre_x, L.at(sp + "/ln_node/scale"), L.at(sp + "/ln_node/offset"));
    s.e = tp.layer_norm(pre_e, L.at(sp + "/ln_edge/scale"), L.at(sp + "/ln_edge/offset"));
    s.u = tp.layer_norm(pre_u, L.at(sp + "/ln_global/scale"), L.at(sp + "/ln_global/offset"));
    return s;
}

/// Projections, ones-initialized global state, and M steps; returns the
/// final global state node (B x D).
template <class S>
NodeId build_encoding(Tape<S>& tp, const LeafMap& L, const GnConfig& cfg,
                      const BatchInputs& in) {
    if (in.node_features.cols() != cfg.node_feat_dim)
        throw DataError("gn: node feature width mismatch");
    if (in.edge_features.rows() > 0 && in.edge_features.cols() != cfg.edge_feat_dim)
        throw DataError("gn: edge feature width mismatch");

    NodeId x = tp.matmul(tp.input(to_scalar<S>(in.node_features)), L.at("enc/W_V"));
    NodeId e;
    if (in.edge_features.rows() > 0) {
        e = tp.matmul(tp.input(to_scalar<S>(in.edge_features)), L.at("enc/W_E"));
    } else {
        e = tp.input(TensorT<S>({0, cfg.latent_dim}));
    }
    NodeId u = tp.input(TensorT<S>::filled({in.n_graphs, cfg.latent_dim}, S(1.0)));

    for (int m = 0; m < cfg.steps; ++m) {
        auto s = build_step(tp, L, cfg, in, x, e, u, m);
        x = s.x;
        e = s.e;
        u = s.u;
    }
    return u;
}

template <class S>
NodeId build_head(Tape<S>& tp, const LeafMap& L, NodeId encoding, int task) {
    const std::string tpfx = "task" + std::to_string(task);
    NodeId h = tp.tanh(
        tp.add_bias(tp.matmul(encoding, L.at(tpfx + "/W1")), L.at(tpfx + "/b1")));
    return tp.add_bias(tp.matmul(h, L.at(tpfx + "/W2")), L.at(tpfx + "/b2"));
}

/// Mean squared error of one task over the batch, given a B x 1 prediction
/// node and the standardized target column.
template <class S>
NodeId build_task_residual_loss(Tape<S>& tp, NodeId pred, const BatchInputs& in, int task) {
    const std::int64_t batch = in.targets.rows();
    Tensor col({batch, 1});
    for (std::int64_t r = 0; r < batch; ++r) col.at(r, 0) = in.targets.at(r, task);
    NodeId target = tp.input(to_scalar<S>(col));
    NodeId sq = tp.square(tp.sub(pred, target));
    return tp.scale(tp.sum_all(sq), 1.0 / static_cast<double>(batch));
}

} // namespace gnet

/// Loss builders in the shape grad/hvp expect. The per-task builder touches
/// only that task's head, so its gradient treats other heads as constants.
template <class S>
NodeId build_task_loss(Tape<S>& tp, std::span<const NodeId> leaves, const ParamSet& params,
                       const GnConfig& cfg, const BatchInputs& in, int task) {
    if (task < 0 || task >= cfg.tasks) throw DataError("gn: task index out of range");
    gnet::LeafMap L{&params, leaves};
    NodeId u = gnet::build_encoding(tp, L, cfg, in);
    NodeId pred = gnet::build_head(tp, L, u, task);
    return gnet::build_task_residual_loss(tp, pred, in, task);
}

template <class S>
NodeId build_total_loss(Tape<S>& tp, std::span<const NodeId> leaves, const ParamSet& params,
                        const GnConfig& cfg, const BatchInputs& in) {
    gnet::LeafMap L{&params, leaves};
    NodeId u = gnet::build_encoding(tp, L, cfg, in);
    NodeId total = -1;
    for (int t = 0; t < cfg.tasks; ++t) {
        NodeId pred = gnet::build_head(tp, L, u, t);
        NodeId lt = gnet::build_task_residual_loss(tp, pred, in, t);
        total = (t == 0) ? lt : tp.add(total, lt);
    }
    return total;
}

/// Predictions for every task of a batch, as a B x T tensor.
inline Tensor forward_batch(const BatchInputs& in, const ParamSet& params,
                            const GnConfig& cfg) {
    Tape<double> tp;
    auto leaves = detail::make_leaves(tp, params);
    gnet::LeafMap L{&params, std::span<const NodeId>(leaves)};
    NodeId u = gnet::build_encoding(tp, L, cfg, in);
    Tensor out({in.n_graphs, cfg.tasks});
    for (int t = 0; t < cfg.tasks; ++t) {
        NodeId pred = gnet::build_head(tp, L, u, t);
        for (std::int64_t r = 0; r < in.n_graphs; ++r)
            out.at(r, t) = tp.value(pred).at(r, 0);
    }
    return out;
}

/// Predictions for one validated, edge-symmetric graph.
inline std::vector<double> forward(const Multigraph& g, const ParamSet& params,
                                   const GnConfig& cfg) {
    const auto issues = validate_graph(g);
    if (!issues.empty()) throw DataError("forward: invalid graph: " + issues.front());
    const Tensor preds = forward_batch(make_inputs(batch_graphs({g})), params, cfg);
    std::vector<double> out(cfg.tasks);
    for (int t = 0; t < cfg.tasks; ++t) out[t] = preds.at(0, t);
    return out;
}

/// Mean squared error of one task over a batch (targets already standardized).
inline double per_task_loss(const BatchInputs& in, const ParamSet& params,
                            const GnConfig& cfg, int task) {
    return eval_loss(
        [&](auto& tp, std::span<const NodeId> leaves) {
            return build_task_loss(tp, leaves, params, cfg, in, task);
        },
        params);
}

inline double total_loss(const BatchInputs& in, const ParamSet& params,
                         const GnConfig& cfg) {
    return eval_loss(
        [&](auto& tp, std::span<const NodeId> leaves) {
            return build_total_loss(tp, leaves, params, cfg, in);
        },
        params);
}

/// One message-passing step applied outside a loss context, exposing the
/// state both before and after layer normalization.
struct StepState {
    Tensor x, e, u;
};

struct StepResult {
    StepState pre_norm;
    StepState post;
};

inline StepResult message_pass_step(const StepState& state, const BatchInputs& topo,
                                    const ParamSet& params, const GnConfig& cfg,
                                    int step) {
    Tape<double> tp;
    auto leaves = detail::make_leaves(tp, params);
    gnet::LeafMap L{&params, std::span<const NodeId>(leaves)};
    NodeId x = tp.input(state.x);
    NodeId e = tp.input(state.e);
    NodeId u = tp.input(state.u);
    auto s = gnet::build_step(tp, L, cfg, topo, x, e, u, step);
    auto grab = [&](NodeId id) { return tp.value(id); };
    return StepResult{{grab(s.pre_x), grab(s.pre_e), grab(s.pre_u)},
                      {grab(s.x), grab(s.e), grab(s.u)}};
}

} // namespace gncurv
