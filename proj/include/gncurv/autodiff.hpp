#pragma once

// Differentiation entry points. A loss is supplied as a builder callable
//
//     NodeId builder(Tape<S>& tape, std::span<const NodeId> leaves)
//
// generic in the scalar S, where `leaves` holds one tape input per ParamSet
// entry in canonical order. The same builder is replayed on a double tape
// for values/gradients and on a Dual tape for directional derivatives, so
// the Hessian-vector product is the exact forward-over-reverse composition:
// the tangent of the gradient map along the seeded direction.

#include <cmath>
#include <span>
#include <vector>

#include "gncurv/dual.hpp"
#include "gncurv/param.hpp"
#include "gncurv/tape.hpp"

namespace gncurv {

namespace detail {

inline std::vector<NodeId> make_leaves(Tape<double>& tape, const ParamSet& params) {
    std::vector<NodeId> leaves;
    leaves.reserve(params.size());
    for (const auto& e : params.entries()) leaves.push_back(tape.input(e.tensor));
    return leaves;
}

/// Dual leaves with the tangent seeded on the selected block, zero elsewhere.
inline std::vector<NodeId> make_dual_leaves(Tape<Dual>& tape, const ParamSet& params,
                                            Block block, const FlatVector& direction) {
    if (static_cast<std::int64_t>(direction.size()) != params.block_size(block))
        throw DataError("direction length does not match block size");
    std::vector<NodeId> leaves;
    leaves.reserve(params.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& t = params.entry(i).tensor;
        TensorT<Dual> d(t.shape());
        auto vd = d.values();
        const auto vt = t.values();
        if (params.in_block(i, block)) {
            for (std::int64_t j = 0; j < t.numel(); ++j)
                vd[j] = Dual(vt[j], direction[off++]);
        } else {
            for (std::int64_t j = 0; j < t.numel(); ++j) vd[j] = Dual(vt[j]);
        }
        leaves.push_back(tape.input(std::move(d)));
    }
    return leaves;
}

template <class S>
void check_scalar(const Tape<S>& tape, NodeId loss) {
    if (tape.value(loss).numel() != 1) throw DataError("loss must be scalar");
}

} // namespace detail

/// Evaluates a scalar loss at the given parameters.
template <class F>
double eval_loss(F&& builder, const ParamSet& params) {
    Tape<double> tape;
    auto leaves = detail::make_leaves(tape, params);
    const NodeId loss = builder(tape, std::span<const NodeId>(leaves));
    detail::check_scalar(tape, loss);
    return tape.value(loss)[0];
}

/// Reverse-mode gradient of the loss with respect to one parameter block.
template <class F>
FlatVector grad(F&& builder, const ParamSet& params, Block block) {
    Tape<double> tape;
    auto leaves = detail::make_leaves(tape, params);
    const NodeId loss = builder(tape, std::span<const NodeId>(leaves));
    detail::check_scalar(tape, loss);

    std::vector<NodeId> selected;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params.in_block(i, block)) selected.push_back(leaves[i]);
    const auto adj = tape.gradient(loss, selected);

    FlatVector out;
    out.reserve(params.block_size(block));
    for (const auto& t : adj) {
        const auto v = t.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

/// Loss value and gradient from a single tape.
template <class F>
std::pair<double, FlatVector> loss_and_grad(F&& builder, const ParamSet& params,
                                            Block block) {
    Tape<double> tape;
    auto leaves = detail::make_leaves(tape, params);
    const NodeId loss = builder(tape, std::span<const NodeId>(leaves));
    detail::check_scalar(tape, loss);

    std::vector<NodeId> selected;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params.in_block(i, block)) selected.push_back(leaves[i]);
    const auto adj = tape.gradient(loss, selected);

    FlatVector g;
    g.reserve(params.block_size(block));
    for (const auto& t : adj) {
        const auto v = t.values();
        g.insert(g.end(), v.begin(), v.end());
    }
    return {tape.value(loss)[0], std::move(g)};
}

/// Forward-mode directional derivative of a (possibly vector-valued) map:
/// returns d/de f(theta + e*direction) at e = 0, flattened.
template <class F>
FlatVector jvp(F&& builder, const ParamSet& params, Block block,
               const FlatVector& direction) {
    Tape<Dual> tape;
    auto leaves = detail::make_dual_leaves(tape, params, block, direction);
    const NodeId out = builder(tape, std::span<const NodeId>(leaves));
    FlatVector tangents;
    tangents.reserve(tape.value(out).numel());
    for (const Dual& d : tape.value(out).values()) tangents.push_back(d.t);
    return tangents;
}

/// Hessian-vector product over a block: H * v with all other parameters
/// held constant. One Dual-tape forward plus one reverse pass, so the cost
/// stays within a small constant factor of a gradient call.
template <class F>
FlatVector hvp(F&& builder, const ParamSet& params, Block block, const FlatVector& v) {
    Tape<Dual> tape;
    auto leaves = detail::make_dual_leaves(tape, params, block, v);
    const NodeId loss = builder(tape, std::span<const NodeId>(leaves));
    detail::check_scalar(tape, loss);

    std::vector<NodeId> selected;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params.in_block(i, block)) selected.push_back(leaves[i]);
    const auto adj = tape.gradient(loss, selected);

    FlatVector out;
    out.reserve(params.block_size(block));
    for (const auto& t : adj)
        for (const Dual& d : t.values()) out.push_back(d.t);
    return out;
}

/// Central-difference gradient oracle with per-coordinate step
/// eps * (1 + |theta_i|). Used for validation, never in training paths.
template <class F>
FlatVector finite_diff_grad(F&& builder, const ParamSet& params, Block block,
                            double eps) {
    if (eps <= 0.0) throw DataError("finite_diff_grad: eps must be positive");
    ParamSet work = params;
    FlatVector out;
    out.reserve(params.block_size(block));
    for (std::size_t i = 0; i < work.size(); ++i) {
        if (!work.in_block(i, block)) continue;
        auto v = work.entry(i).tensor.values();
        for (std::int64_t j = 0; j < work.entry(i).tensor.numel(); ++j) {
            const double theta = v[j];
            const double h = eps * (1.0 + std::abs(theta));
            v[j] = theta + h;
            const double up = eval_loss(builder, work);
            v[j] = theta - h;
            const double down = eval_loss(builder, work);
            v[j] = theta;
            out.push_back((up - down) / (2.0 * h));
        }
    }
    return out;
}

} // namespace gncurv
