#pragma once

// Eager computation tape with reverse-mode differentiation, generic over the
// scalar type. Instantiated with S = double it yields gradients; with
// S = Dual (tangents seeded on the leaves) the backward pass carries exact
// directional derivatives of the gradient, i.e. Hessian-vector products.
//
// The primitive set is fixed to what the graph network needs: matmul, add,
// sub, elementwise mul, bias broadcast, tanh, square, concat, gather,
// segment-sum, full-sum, constant scale, and layer normalization.
// A tape is built once, read, and discarded; it is never mutated after the
// loss node exists and holds no global state.

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gncurv/errors.hpp"
#include "gncurv/tensor.hpp"

namespace gncurv {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
    Input,
    Add,
    Sub,
    Mul,
    MatMul,
    AddBias,
    Tanh,
    Square,
    Concat,
    Gather,
    SegmentSum,
    SumAll,
    Scale,
    LayerNorm,
};

using IndexVec = std::vector<std::int64_t>;

namespace detail {

// C(m,n) += A(m,k) * B(k,n)
template <class S>
void matmul_nn_acc(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        const S* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,k) += G(m,n) * B(k,n)^T
template <class S>
void matmul_nt_acc(const S* g, const S* b, S* c, std::int64_t m, std::int64_t n,
                   std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const S* grow = g + i * n;
        S* crow = c + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const S* brow = b + p * n;
            S s{};
            for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            crow[p] += s;
        }
    }
}

// C(k,n) += A(m,k)^T * G(m,n)
template <class S>
void matmul_tn_acc(const S* a, const S* g, S* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        const S* grow = g + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const S av = arow[p];
            S* crow = c + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

} // namespace detail

template <class S>
class Tape {
public:
    using Scalar = S;

    static constexpr double kLayerNormEps = 1e-6;

    /// Leaf node holding an externally supplied tensor.
    NodeId input(TensorT<S> value) {
        return push(Op::Input, {}, std::move(value));
    }

    NodeId add(NodeId a, NodeId b) {
        require_same_shape(a, b, "add");
        TensorT<S> out = clone_shape(a);
        const auto va = val(a).values();
        const auto vb = val(b).values();
        auto vo = out.values();
        for (std::int64_t i = 0; i < out.numel(); ++i) vo[i] = va[i] + vb[i];
        return push(Op::Add, {a, b}, std::move(out));
    }

    NodeId sub(NodeId a, NodeId b) {
        require_same_shape(a, b, "sub");
        TensorT<S> out = clone_shape(a);
        const auto va = val(a).values();
        const auto vb = val(b).values();
        auto vo = out.values();
        for (std::int64_t i = 0; i < out.numel(); ++i) vo[i] = va[i] - vb[i];
        return push(Op::Sub, {a, b}, std::move(out));
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape(a, b, "mul");
        TensorT<S> out = clone_shape(a);
        const auto va = val(a).values();
        const auto vb = val(b).values();
        auto vo = out.values();
        for (std::int64_t i = 0; i < out.numel(); ++i) vo[i] = va[i] * vb[i];
        return push(Op::Mul, {a, b}, std::move(out));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const auto& ta = val(a);
        const auto& tb = val(b);
        if (ta.cols() != tb.rows())
            throw DataError("matmul: inner extents differ " + shape_string(ta.shape()) +
                            " x " + shape_string(tb.shape()));
        TensorT<S> out({ta.rows(), tb.cols()});
        detail::matmul_nn_acc(ta.values().data(), tb.values().data(),
                              out.values().data(), ta.rows(), ta.cols(), tb.cols());
        return push(Op::MatMul, {a, b}, std::move(out));
    }

    /// Adds a 1 x n bias row to every row of a.
    NodeId add_bias(NodeId a, NodeId bias) {
        const auto& ta = val(a);
        const auto& tb = val(bias);
        if (tb.rows() != 1 || tb.cols() != ta.cols())
            throw DataError("add_bias: bias width mismatch");
        TensorT<S> out = clone_shape(a);
        auto vo = out.values();
        const auto va = ta.values();
        const auto vb = tb.values();
        const std::int64_t n = ta.cols();
        for (std::int64_t r = 0; r < ta.rows(); ++r)
            for (std::int64_t j = 0; j < n; ++j) vo[r * n + j] = va[r * n + j] + vb[j];
        return push(Op::AddBias, {a, bias}, std::move(out));
    }

    NodeId tanh(NodeId a) {
        TensorT<S> out = clone_shape(a);
        const auto va = val(a).values();
        auto vo = out.values();
        for (std::int64_t i = 0; i < out.numel(); ++i) vo[i] = gncurv::tanh(va[i]);
        return push(Op::Tanh, {a}, std::move(out));
    }

    NodeId square(NodeId a) {
        TensorT<S> out = clone_shape(a);
        const auto va = val(a).values();
        auto vo = out.values();
        for (std::int64_t i = 0; i < out.numel(); ++i) vo[i] = va[i] * va[i];
        return push(Op::Square, {a}, std::move(out));
    }

    /// Concatenates along the column axis; all inputs need equal row counts.
    NodeId concat(std::span<const NodeId> parts) {
        if (parts.empty()) throw DataError("concat: no inputs");
        const std::int64_t rows = val(parts[0]).rows();
        std::int64_t cols = 0;
        for (NodeId p : parts) {
            if (val(p).rows() != rows) throw DataError("concat: row counts differ");
            cols += val(p).cols();
        }
        TensorT<S> out({rows, cols});
        auto vo = out.values();
        std::int64_t off = 0;
        for (NodeId p : parts) {
            const auto& tp = val(p);
            const auto vp = tp.values();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < tp.cols(); ++j)
                    vo[r * cols + off + j] = vp[r * tp.cols() + j];
            off += tp.cols();
        }
        return push(Op::Concat, std::vector<NodeId>(parts.begin(), parts.end()),
                    std::move(out));
    }

    NodeId concat(std::initializer_list<NodeId> parts) {
        return concat(std::span<const NodeId>(parts.begin(), parts.size()));
    }

    /// out[r, :] = a[idx[r], :]
    NodeId gather(NodeId a, std::shared_ptr<const IndexVec> idx) {
        const auto& ta = val(a);
        for (std::int64_t i : *idx)
            if (i < 0 || i >= ta.rows()) throw DataError("gather: index out of range");
        const std::int64_t n = ta.cols();
        TensorT<S> out({static_cast<std::int64_t>(idx->size()), n});
        auto vo = out.values();
        const auto va = ta.values();
        for (std::size_t r = 0; r < idx->size(); ++r)
            for (std::int64_t j = 0; j < n; ++j) vo[r * n + j] = va[(*idx)[r] * n + j];
        NodeId id = push(Op::Gather, {a}, std::move(out));
        nodes_[id].index = std::move(idx);
        return id;
    }

    /// out[seg[r], :] += a[r, :] over n_segments rows; rows with no
    /// contributions stay zero.
    NodeId segment_sum(NodeId a, std::shared_ptr<const IndexVec> seg,
                       std::int64_t n_segments) {
        const auto& ta = val(a);
        if (static_cast<std::int64_t>(seg->size()) != ta.rows())
            throw DataError("segment_sum: one segment id per row required");
        for (std::int64_t i : *seg)
            if (i < 0 || i >= n_segments)
                throw DataError("segment_sum: segment id out of range");
        const std::int64_t n = ta.cols();
        TensorT<S> out({n_segments, n});
        auto vo = out.values();
        const auto va = ta.values();
        for (std::int64_t r = 0; r < ta.rows(); ++r) {
            const std::int64_t s = (*seg)[r];
            for (std::int64_t j = 0; j < n; ++j) vo[s * n + j] += va[r * n + j];
        }
        NodeId id = push(Op::SegmentSum, {a}, std::move(out));
        nodes_[id].index = std::move(seg);
        return id;
    }

    /// Sum of all entries, as a 1-element tensor.
    NodeId sum_all(NodeId a) {
        S s{};
        for (const S& x : val(a).values()) s += x;
        return push(Op::SumAll, {a}, TensorT<S>({1}, {s}));
    }

    /// Multiplication by a constant (not differentiated) factor.
    NodeId scale(NodeId a, double factor) {
        TensorT<S> out = clone_shape(a);
        const auto va = val(a).values();
        auto vo = out.values();
        for (std::int64_t i = 0; i < out.numel(); ++i) vo[i] = va[i] * factor;
        NodeId id = push(Op::Scale, {a}, std::move(out));
        nodes_[id].factor = factor;
        return id;
    }

    /// Row-wise layer normalization with learnable 1 x n scale and offset:
    /// y = scale * (x - mean) / sqrt(var + eps) + offset.
    NodeId layer_norm(NodeId a, NodeId scale_row, NodeId offset_row) {
        const auto& ta = val(a);
        const std::int64_t n = ta.cols();
        if (val(scale_row).numel() != n || val(offset_row).numel() != n)
            throw DataError("layer_norm: scale/offset width mismatch");
        TensorT<S> out = clone_shape(a);
        auto vo = out.values();
        const auto vx = ta.values();
        const auto vg = val(scale_row).values();
        const auto vb = val(offset_row).values();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::int64_t r = 0; r < ta.rows(); ++r) {
            const S* x = vx.data() + r * n;
            S mu{};
            for (std::int64_t j = 0; j < n; ++j) mu += x[j];
            mu *= S(inv_n);
            S var{};
            for (std::int64_t j = 0; j < n; ++j) {
                const S c = x[j] - mu;
                var += c * c;
            }
            var *= S(inv_n);
            const S inv = S(1.0) / gncurv::sqrt(var + S(kLayerNormEps));
            for (std::int64_t j = 0; j < n; ++j)
                vo[r * n + j] = vg[j] * ((x[j] - mu) * inv) + vb[j];
        }
        return push(Op::LayerNorm, {a, scale_row, offset_row}, std::move(out));
    }

    const TensorT<S>& value(NodeId id) const { return val(id); }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse pass from a scalar loss; returns adjoints of the requested
    /// leaves (zero tensors where the loss does not depend on a leaf).
    std::vector<TensorT<S>> gradient(NodeId loss, std::span<const NodeId> leaves) const {
        if (val(loss).numel() != 1) throw DataError("gradient: loss must be scalar");
        std::vector<std::vector<S>> adj(nodes_.size());
        std::vector<char> touched(nodes_.size(), 0);
        adj[loss].assign(1, S(1.0));
        touched[loss] = 1;

        auto acc = [&](NodeId id) -> std::vector<S>& {
            if (!touched[id]) {
                adj[id].assign(val(id).numel(), S{});
                touched[id] = 1;
            }
            return adj[id];
        };

        for (NodeId id = loss; id >= 0; --id) {
            if (!touched[id]) continue;
            const Node& node = nodes_[id];
            const std::vector<S>& g = adj[id];
            switch (node.op) {
            case Op::Input:
                break;
            case Op::Add: {
                auto& ga = acc(node.in[0]);
                auto& gb = acc(node.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                auto& ga = acc(node.in[0]);
                auto& gb = acc(node.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const auto va = val(node.in[0]).values();
                const auto vb = val(node.in[1]).values();
                auto& ga = acc(node.in[0]);
                auto& gb = acc(node.in[1]);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * vb[i];
                    gb[i] += g[i] * va[i];
                }
                break;
            }
            case Op::MatMul: {
                const auto& ta = val(node.in[0]);
                const auto& tb = val(node.in[1]);
                auto& ga = acc(node.in[0]);
                auto& gb = acc(node.in[1]);
                detail::matmul_nt_acc(g.data(), tb.values().data(), ga.data(),
                                      ta.rows(), tb.cols(), ta.cols());
                detail::matmul_tn_acc(ta.values().data(), g.data(), gb.data(),
                                      ta.rows(), ta.cols(), tb.cols());
                break;
            }
            case Op::AddBias: {
                const auto& ta = val(node.in[0]);
                auto& ga = acc(node.in[0]);
                auto& gb = acc(node.in[1]);
                const std::int64_t n = ta.cols();
                for (std::int64_t r = 0; r < ta.rows(); ++r)
                    for (std::int64_t j = 0; j < n; ++j) {
                        ga[r * n + j] += g[r * n + j];
                        gb[j] += g[r * n + j];
                    }
                break;
            }
            case Op::Tanh: {
                const auto vy = val(id).values();
                auto& ga = acc(node.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * (S(1.0) - vy[i] * vy[i]);
                break;
            }
            case Op::Square: {
                const auto vx = val(node.in[0]).values();
                auto& ga = acc(node.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * S(2.0) * vx[i];
                break;
            }
            case Op::Concat: {
                const std::int64_t rows = val(id).rows();
                const std::int64_t cols = val(id).cols();
                std::int64_t off = 0;
                for (NodeId p : node.in) {
                    const std::int64_t pc = val(p).cols();
                    auto& gp = acc(p);
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < pc; ++j)
                            gp[r * pc + j] += g[r * cols + off + j];
                    off += pc;
                }
                break;
            }
            case Op::Gather: {
                const std::int64_t n = val(id).cols();
                auto& ga = acc(node.in[0]);
                const IndexVec& idx = *node.index;
                for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::int64_t j = 0; j < n; ++j)
                        ga[idx[r] * n + j] += g[r * n + j];
                break;
            }
            case Op::SegmentSum: {
                const std::int64_t n = val(id).cols();
                auto& ga = acc(node.in[0]);
                const IndexVec& seg = *node.index;
                for (std::size_t r = 0; r < seg.size(); ++r)
                    for (std::int64_t j = 0; j < n; ++j)
                        ga[r * n + j] += g[seg[r] * n + j];
                break;
            }
            case Op::SumAll: {
                auto& ga = acc(node.in[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
                break;
            }
            case Op::Scale: {
                auto& ga = acc(node.in[0]);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * node.factor;
                break;
            }
            case Op::LayerNorm: {
                const auto& ta = val(node.in[0]);
                const auto vx = ta.values();
                const auto vg = val(node.in[1]).values();
                auto& gx = acc(node.in[0]);
                auto& gscale = acc(node.in[1]);
                auto& goffset = acc(node.in[2]);
                const std::int64_t n = ta.cols();
                const double inv_n = 1.0 / static_cast<double>(n);
                std::vector<S> xhat(n);
                for (std::int64_t r = 0; r < ta.rows(); ++r) {
                    const S* x = vx.data() + r * n;
                    const S* gy = g.data() + r * n;
                    S mu{};
                    for (std::int64_t j = 0; j < n; ++j) mu += x[j];
                    mu *= S(inv_n);
                    S var{};
                    for (std::int64_t j = 0; j < n; ++j) {
                        const S c = x[j] - mu;
                        var += c * c;
                    }
                    var *= S(inv_n);
                    const S inv = S(1.0) / gncurv::sqrt(var + S(kLayerNormEps));
                    S mg{}, mgx{};
                    for (std::int64_t j = 0; j < n; ++j) {
                        xhat[j] = (x[j] - mu) * inv;
                        const S gj = gy[j] * vg[j];
                        mg += gj;
                        mgx += gj * xhat[j];
                        goffset[j] += gy[j];
                        gscale[j] += gy[j] * xhat[j];
                    }
                    mg *= S(inv_n);
                    mgx *= S(inv_n);
                    for (std::int64_t j = 0; j < n; ++j)
                        gx[r * n + j] += inv * (gy[j] * vg[j] - mg - xhat[j] * mgx);
                }
                break;
            }
            }
        }

        std::vector<TensorT<S>> out;
        out.reserve(leaves.size());
        for (NodeId leaf : leaves) {
            TensorT<S> t(val(leaf).shape());
            if (touched[leaf]) {
                auto vt = t.values();
                for (std::int64_t i = 0; i < t.numel(); ++i) vt[i] = adj[leaf][i];
            }
            out.push_back(std::move(t));
        }
        return out;
    }

private:
    struct Node {
        Op op;
        std::vector<NodeId> in;
        TensorT<S> value;
        double factor = 0.0;
        std::shared_ptr<const IndexVec> index;
    };

    const TensorT<S>& val(NodeId id) const { return nodes_[id].value; }

    TensorT<S> clone_shape(NodeId id) const { return TensorT<S>(val(id).shape()); }

    // rank-1 tensors count as single rows, so {n} and {1,n} are compatible
    void require_same_shape(NodeId a, NodeId b, const char* what) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw DataError(std::string(what) + ": shape mismatch " +
                            shape_string(val(a).shape()) + " vs " +
                            shape_string(val(b).shape()));
    }

    NodeId push(Op op, std::vector<NodeId> in, TensorT<S> value) {
        nodes_.push_back(Node{op, std::move(in), std::move(value), 0.0, nullptr});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

} // namespace gncurv
