#include <gtest/gtest.h>

#include <cmath>
#include <span>

#include "gncurv/autodiff.hpp"
#include "gncurv/rng.hpp"

using namespace gncurv;

namespace {

ParamSet single_param(const Tensor& t) {
    ParamSet p;
    p.add_shared("theta", t);
    return p;
}

// L = 0.5 * ||theta||^2
auto norm_sq_builder() {
    return [](auto& tp, std::span<const NodeId> leaves) {
        return tp.scale(tp.sum_all(tp.square(leaves[0])), 0.5);
    };
}

// L = 0.5 * theta' A theta for a constant symmetric matrix A (theta is 1 x n)
auto quadratic_builder(const Tensor& a) {
    return [a](auto& tp, std::span<const NodeId> leaves) {
        using S = typename std::decay_t<decltype(tp)>::Scalar;
        auto a_node = tp.input(to_scalar<S>(a));
        auto t = tp.matmul(leaves[0], a_node);
        return tp.scale(tp.sum_all(tp.mul(t, leaves[0])), 0.5);
    };
}

Tensor random_symmetric(std::int64_t n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor a({n, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j <= i; ++j) {
            const double x = rng.gaussian();
            a.at(i, j) = x;
            a.at(j, i) = x;
        }
    return a;
}

FlatVector dense_matvec(const Tensor& a, const FlatVector& v) {
    FlatVector out(a.rows(), 0.0);
    for (std::int64_t i = 0; i < a.rows(); ++i)
        for (std::int64_t j = 0; j < a.cols(); ++j) out[i] += a.at(i, j) * v[j];
    return out;
}

} // namespace

TEST(Flatten, ShapeArithmetic) {
    ParamSet p;
    p.add_shared("w", Tensor({2, 3}));
    p.add_shared("b", Tensor({4}));
    EXPECT_EQ(p.block_size(Block::all()), 10);
    EXPECT_EQ(flatten(p, Block::all()).size(), 10u);
}

TEST(Flatten, RoundtripBitwise) {
    Rng rng(11);
    ParamSet p;
    Tensor w({3, 5});
    Tensor b({7});
    for (auto& x : w.values()) x = rng.gaussian();
    for (auto& x : b.values()) x = rng.gaussian();
    p.add_shared("w", w);
    p.add_task(0, "head", b);

    for (Block blk : {Block::all(), Block::shared(), Block::task(0)}) {
        const FlatVector f = flatten(p, blk);
        const ParamSet q = unflatten(f, p, blk);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const auto va = p.entry(i).tensor.values();
            const auto vb = q.entry(i).tensor.values();
            for (std::size_t j = 0; j < va.size(); ++j) EXPECT_EQ(va[j], vb[j]);
        }
    }
    EXPECT_THROW(unflatten(FlatVector(3), p, Block::all()), DataError);
}

TEST(Grad, NormSquaredIsIdentity) {
    const ParamSet p = single_param(Tensor({1, 2}, {1.0, 2.0}));
    const FlatVector g = grad(norm_sq_builder(), p, Block::all());
    ASSERT_EQ(g.size(), 2u);
    EXPECT_DOUBLE_EQ(g[0], 1.0);
    EXPECT_DOUBLE_EQ(g[1], 2.0);
}

TEST(Grad, ConstantLossIsZero) {
    const ParamSet p = single_param(Tensor({1, 3}, {1.0, -2.0, 0.5}));
    auto builder = [](auto& tp, std::span<const NodeId>) {
        using S = typename std::decay_t<decltype(tp)>::Scalar;
        return tp.input(TensorT<S>::scalar(S(4.25)));
    };
    const FlatVector g = grad(builder, p, Block::all());
    for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST(Grad, NonScalarLossRejected) {
    const ParamSet p = single_param(Tensor({1, 2}, {1.0, 2.0}));
    auto builder = [](auto& tp, std::span<const NodeId> leaves) { return leaves[0]; };
    EXPECT_THROW(grad(builder, p, Block::all()), DataError);
}

TEST(Grad, MatchesFiniteDifferencesOnQuadratic) {
    const Tensor a = random_symmetric(6, 21);
    Rng rng(22);
    Tensor theta({1, 6});
    for (auto& x : theta.values()) x = rng.gaussian();
    const ParamSet p = single_param(theta);

    const FlatVector g = grad(quadratic_builder(a), p, Block::all());
    const FlatVector fd = finite_diff_grad(quadratic_builder(a), p, Block::all(), 1e-5);
    const FlatVector exact = dense_matvec(a, flatten(p, Block::all()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_NEAR(g[i], exact[i], 1e-12) << i;
        EXPECT_NEAR(fd[i], exact[i], 1e-7) << i; // central differences, O(eps^2)
    }
}

TEST(FiniteDiff, ConstantLossIsZero) {
    const ParamSet p = single_param(Tensor({1, 2}, {0.3, 0.7}));
    auto builder = [](auto& tp, std::span<const NodeId>) {
        using S = typename std::decay_t<decltype(tp)>::Scalar;
        return tp.input(TensorT<S>::scalar(S(1.0)));
    };
    for (double x : finite_diff_grad(builder, p, Block::all(), 1e-5)) EXPECT_EQ(x, 0.0);
}

TEST(FiniteDiff, TanhChainClosedForm) {
    // L(w) = tanh(w * x) at w = 0.3, x = 2: dL/dw = x * (1 - tanh(w x)^2)
    const ParamSet p = single_param(Tensor({1, 1}, {0.3}));
    auto builder = [](auto& tp, std::span<const NodeId> leaves) {
        using S = typename std::decay_t<decltype(tp)>::Scalar;
        auto x = tp.input(TensorT<S>::scalar(S(2.0)));
        return tp.sum_all(tp.tanh(tp.mul(leaves[0], x)));
    };
    const double expected = 2.0 * (1.0 - std::pow(std::tanh(0.6), 2));
    const FlatVector fd = finite_diff_grad(builder, p, Block::all(), 1e-6);
    EXPECT_NEAR(fd[0], expected, 1e-8);
    const FlatVector g = grad(builder, p, Block::all());
    EXPECT_NEAR(g[0], expected, 1e-14);
}

TEST(Jvp, LinearMapMatchesDenseMatvec) {
    // f(theta) = theta * A'   (row form of A theta)
    const Tensor a = random_symmetric(8, 31);
    Rng rng(32);
    Tensor theta({1, 8});
    for (auto& x : theta.values()) x = rng.gaussian();
    const ParamSet p = single_param(theta);
    auto f = [a](auto& tp, std::span<const NodeId> leaves) {
        using S = typename std::decay_t<decltype(tp)>::Scalar;
        return tp.matmul(leaves[0], tp.input(to_scalar<S>(a)));
    };

    FlatVector v(8);
    for (auto& x : v) x = rng.gaussian();
    const FlatVector jv = jvp(f, p, Block::all(), v);
    const FlatVector expect = dense_matvec(a, v); // A symmetric: A'v = Av
    ASSERT_EQ(jv.size(), 8u);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(jv[i], expect[i], 1e-12);

    const FlatVector zero(8, 0.0);
    for (double x : jvp(f, p, Block::all(), zero)) EXPECT_EQ(x, 0.0);

    FlatVector scaled = v;
    for (auto& x : scaled) x *= 2.5;
    const FlatVector j_scaled = jvp(f, p, Block::all(), scaled);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(j_scaled[i], 2.5 * jv[i], 1e-12);
}

TEST(Hvp, IdentityHessian) {
    Rng rng(41);
    Tensor theta({1, 9});
    for (auto& x : theta.values()) x = rng.gaussian();
    const ParamSet p = single_param(theta);
    FlatVector v(9);
    for (auto& x : v) x = rng.gaussian();
    const FlatVector hv = hvp(norm_sq_builder(), p, Block::all(), v);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(hv[i], v[i], 1e-15);
}

TEST(Hvp, QuadraticHessianIsTheMatrix) {
    const Tensor a = random_symmetric(20, 51);
    Rng rng(52);
    Tensor theta({1, 20});
    for (auto& x : theta.values()) x = rng.gaussian();
    const ParamSet p = single_param(theta);
    FlatVector v(20);
    for (auto& x : v) x = rng.gaussian();
    const FlatVector hv = hvp(quadratic_builder(a), p, Block::all(), v);
    const FlatVector av = dense_matvec(a, v);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(hv[i], av[i], 1e-10);
}

// Smooth non-quadratic loss exercising every primitive the network uses.
namespace {
auto mixed_builder(const Tensor& a) {
    return [a](auto& tp, std::span<const NodeId> leaves) {
        using S = typename std::decay_t<decltype(tp)>::Scalar;
        auto a_node = tp.input(to_scalar<S>(a));
        auto h = tp.tanh(tp.matmul(leaves[0], a_node));
        auto scale_row = leaves[1];
        auto offset_row = leaves[2];
        auto ln = tp.layer_norm(tp.concat({h, tp.square(leaves[0])}), scale_row, offset_row);
        return tp.scale(tp.sum_all(tp.square(ln)), 0.5);
    };
}

ParamSet mixed_params(std::uint64_t seed) {
    Rng rng(seed);
    Tensor theta({1, 5});
    for (auto& x : theta.values()) x = rng.gaussian();
    Tensor scale({10});
    for (auto& x : scale.values()) x = 1.0 + 0.1 * rng.gaussian();
    Tensor offset({10});
    for (auto& x : offset.values()) x = 0.1 * rng.gaussian();
    ParamSet p;
    p.add_shared("theta", theta);
    p.add_shared("ln_scale", scale);
    p.add_shared("ln_offset", offset);
    return p;
}
} // namespace

TEST(Hvp, SymmetryOnMixedLoss) {
    const Tensor a = random_symmetric(5, 61);
    const ParamSet p = mixed_params(62);
    const std::int64_t dim = p.block_size(Block::all());
    Rng rng(63);
    FlatVector v(dim), w(dim);
    for (auto& x : v) x = rng.gaussian();
    for (auto& x : w) x = rng.gaussian();
    const FlatVector hv = hvp(mixed_builder(a), p, Block::all(), v);
    const FlatVector hw = hvp(mixed_builder(a), p, Block::all(), w);
    const double vhw = dot(v, hw);
    const double whv = dot(w, hv);
    EXPECT_NEAR(vhw, whv, 1e-8 * std::max(1.0, std::abs(vhw)));
}

TEST(Hvp, Linearity) {
    const Tensor a = random_symmetric(5, 71);
    const ParamSet p = mixed_params(72);
    const std::int64_t dim = p.block_size(Block::all());
    Rng rng(73);
    FlatVector v(dim), w(dim), combo(dim);
    for (auto& x : v) x = rng.gaussian();
    for (auto& x : w) x = rng.gaussian();
    const double alpha = 1.7, beta = -0.6;
    for (std::int64_t i = 0; i < dim; ++i) combo[i] = alpha * v[i] + beta * w[i];
    const FlatVector hv = hvp(mixed_builder(a), p, Block::all(), v);
    const FlatVector hw = hvp(mixed_builder(a), p, Block::all(), w);
    const FlatVector hc = hvp(mixed_builder(a), p, Block::all(), combo);
    double scale = 0.0;
    for (std::int64_t i = 0; i < dim; ++i) scale = std::max(scale, std::abs(hc[i]));
    for (std::int64_t i = 0; i < dim; ++i)
        EXPECT_NEAR(hc[i], alpha * hv[i] + beta * hw[i], 1e-10 * std::max(1.0, scale));
}

TEST(Hvp, MatchesFiniteDifferenceOfGradientOnMixedLoss) {
    const Tensor a = random_symmetric(5, 81);
    const ParamSet p = mixed_params(82);
    const std::int64_t dim = p.block_size(Block::all());
    Rng rng(83);
    FlatVector v(dim);
    for (auto& x : v) x = rng.gaussian();

    const FlatVector hv = hvp(mixed_builder(a), p, Block::all(), v);

    const double eps = 1e-3 / norm2(v);
    FlatVector theta = flatten(p, Block::all());
    FlatVector up = theta, down = theta;
    axpy(eps, v, up);
    axpy(-eps, v, down);
    const FlatVector gu = grad(mixed_builder(a), unflatten(up, p, Block::all()), Block::all());
    const FlatVector gd =
        grad(mixed_builder(a), unflatten(down, p, Block::all()), Block::all());
    FlatVector fd(dim);
    for (std::int64_t i = 0; i < dim; ++i) fd[i] = (gu[i] - gd[i]) / (2.0 * eps);

    FlatVector diff(dim);
    for (std::int64_t i = 0; i < dim; ++i) diff[i] = hv[i] - fd[i];
    EXPECT_LE(norm2(diff) / norm2(fd), 1e-4);
}

TEST(Hvp, BlockSelectionFreezesOtherParams) {
    // Hessian over the shared block must ignore task parameters entirely.
    ParamSet p;
    p.add_shared("theta", Tensor({1, 3}, {0.4, -0.2, 0.9}));
    p.add_task(0, "head", Tensor({1, 2}, {1.5, -0.5}));
    auto builder = [](auto& tp, std::span<const NodeId> leaves) {
        auto joint = tp.concat({leaves[0], leaves[1]});
        return tp.scale(tp.sum_all(tp.square(tp.tanh(joint))), 0.5);
    };
    const FlatVector v{1.0, 2.0, 3.0};
    const FlatVector hv = hvp(builder, p, Block::shared(), v);
    ASSERT_EQ(hv.size(), 3u);
    // oracle: finite difference of the shared-block gradient
    const double eps = 1e-5;
    FlatVector up = flatten(p, Block::shared());
    FlatVector dn = up;
    axpy(eps, v, up);
    axpy(-eps, v, dn);
    const auto gu = grad(builder, unflatten(up, p, Block::shared()), Block::shared());
    const auto gd = grad(builder, unflatten(dn, p, Block::shared()), Block::shared());
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_NEAR(hv[i], (gu[i] - gd[i]) / (2 * eps), 1e-6);
}

TEST(Determinism, RepeatedEvaluationIsBitwise) {
    const Tensor a = random_symmetric(5, 91);
    const ParamSet p = mixed_params(92);
    const std::int64_t dim = p.block_size(Block::all());
    Rng rng(93);
    FlatVector v(dim);
    for (auto& x : v) x = rng.gaussian();
    const FlatVector g1 = grad(mixed_builder(a), p, Block::all());
    const FlatVector g2 = grad(mixed_builder(a), p, Block::all());
    const FlatVector h1 = hvp(mixed_builder(a), p, Block::all(), v);
    const FlatVector h2 = hvp(mixed_builder(a), p, Block::all(), v);
    for (std::int64_t i = 0; i < dim; ++i) {
        EXPECT_EQ(g1[i], g2[i]);
        EXPECT_EQ(h1[i], h2[i]);
    }
}
