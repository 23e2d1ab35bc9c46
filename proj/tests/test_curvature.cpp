#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <span>

#include "gncurv/curvature.hpp"
#include "gncurv/rng.hpp"

using namespace gncurv;

namespace {

CurvatureOperator diagonal_operator(std::vector<double> diag, std::string label) {
    const std::int64_t dim = static_cast<std::int64_t>(diag.size());
    return CurvatureOperator(dim, std::move(label), [diag = std::move(diag)](const FlatVector& v) {
        FlatVector out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = diag[i] * v[i];
        return out;
    });
}

CurvatureOperator identity_operator(std::int64_t dim, double factor = 1.0) {
    return CurvatureOperator(dim, "identity", [factor](const FlatVector& v) {
        FlatVector out = v;
        for (auto& x : out) x *= factor;
        return out;
    });
}

std::vector<double> iota(std::int64_t n) {
    std::vector<double> d(n);
    for (std::int64_t i = 0; i < n; ++i) d[i] = static_cast<double>(i + 1);
    return d;
}

} // namespace

TEST(HessianOperator, QuadraticLossAppliesTheMatrix) {
    const std::int64_t n = 12;
    Rng rng(5);
    Tensor a({n, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j <= i; ++j) {
            const double x = rng.gaussian();
            a.at(i, j) = x;
            a.at(j, i) = x;
        }
    ParamSet p;
    Tensor theta({1, n});
    for (auto& x : theta.values()) x = rng.gaussian();
    p.add_shared("theta", theta);

    const CurvatureOperator op = hessian_operator(
        [a](auto& tp, std::span<const NodeId> leaves) {
            using S = typename std::decay_t<decltype(tp)>::Scalar;
            auto t = tp.matmul(leaves[0], tp.input(to_scalar<S>(a)));
            return tp.scale(tp.sum_all(tp.mul(t, leaves[0])), 0.5);
        },
        p, Block::shared(), "quad");

    EXPECT_EQ(op.dim(), p.block_size(Block::shared()));

    FlatVector v(n), w(n);
    for (auto& x : v) x = rng.gaussian();
    for (auto& x : w) x = rng.gaussian();
    const FlatVector hv = op.apply(v);
    for (std::int64_t i = 0; i < n; ++i) {
        double expect = 0.0;
        for (std::int64_t j = 0; j < n; ++j) expect += a.at(i, j) * v[j];
        EXPECT_NEAR(hv[i], expect, 1e-10);
    }

    // linearity: apply(2.5 v + 0.5 w)
    FlatVector combo(n);
    for (std::int64_t i = 0; i < n; ++i) combo[i] = 2.5 * v[i] + 0.5 * w[i];
    const FlatVector hc = op.apply(combo);
    const FlatVector hw = op.apply(w);
    for (std::int64_t i = 0; i < n; ++i)
        EXPECT_NEAR(hc[i], 2.5 * hv[i] + 0.5 * hw[i], 1e-10);

    EXPECT_THROW(op.apply(FlatVector(n + 1)), DataError);
}

TEST(Hutchinson, IdentityIsExact) {
    const TraceEstimate est = hutchinson_trace(identity_operator(7), 50, 3);
    EXPECT_DOUBLE_EQ(est.mean, 7.0); // v'v = dim for every Rademacher v
    EXPECT_DOUBLE_EQ(est.stderr_of_mean, 0.0);
    EXPECT_EQ(est.n_samples, 50);
}

TEST(Hutchinson, ZeroOperatorIsZero) {
    const TraceEstimate est = hutchinson_trace(identity_operator(9, 0.0), 20, 3);
    EXPECT_EQ(est.mean, 0.0);
}

TEST(Hutchinson, DiagonalTraceWithinThreeStderr) {
    const TraceEstimate est = hutchinson_trace(diagonal_operator(iota(10), "diag"), 500, 7);
    // diagonal operators are estimated exactly: v' D v = trace for v in {-1,1}^n
    EXPECT_LE(std::abs(est.mean - 55.0), 3.0 * est.stderr_of_mean + 1e-9);
    EXPECT_NEAR(est.mean, 55.0, 1e-9);
}

TEST(Hutchinson, DensePsdTraceWithinThreeStderr) {
    auto [op, matrix] = random_symmetric_operator(60, 11);
    double exact = 0.0;
    for (std::int64_t i = 0; i < 60; ++i) exact += matrix.at(i, i);
    const TraceEstimate est = hutchinson_trace(op, 500, 13);
    EXPECT_LE(std::abs(est.mean - exact), 3.0 * est.stderr_of_mean);
    EXPECT_GT(est.stderr_of_mean, 0.0);
}

TEST(Hutchinson, DeterministicPerSeedAndProbeOrder) {
    auto [op, matrix] = random_symmetric_operator(20, 17);
    const TraceEstimate a = hutchinson_trace(op, 40, 23);
    const TraceEstimate b = hutchinson_trace(op, 40, 23);
    EXPECT_EQ(a.mean, b.mean);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i)
        EXPECT_EQ(a.samples[i], b.samples[i]);
    const TraceEstimate c = hutchinson_trace(op, 40, 24);
    EXPECT_NE(a.mean, c.mean);
}

TEST(Lanczos, IdentityBreaksDownToSingleRitzPair) {
    const RitzSpectrum s = lanczos(identity_operator(40), 10, 5);
    ASSERT_EQ(s.values.size(), 1u);
    EXPECT_NEAR(s.values[0], 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(s.weights[0], 1.0);
}

TEST(Lanczos, RecoversDiagonalSpectrumExactly) {
    const RitzSpectrum s = lanczos(diagonal_operator(iota(10), "diag10"), 10, 9);
    ASSERT_EQ(s.values.size(), 10u);
    for (std::int64_t i = 0; i < 10; ++i)
        EXPECT_NEAR(s.values[i], static_cast<double>(i + 1), 1e-8);
    double wsum = 0.0;
    for (double w : s.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-10);
}

TEST(Lanczos, RepeatedEigenvaluesCollapseViaBreakdown) {
    // Krylov spaces only see distinct eigenvalues; the run must stop early
    // and still reproduce the distinct spectrum.
    const RitzSpectrum s =
        lanczos(diagonal_operator({1.0, 1.0, 2.0, 2.0, 3.0}, "multi"), 5, 31);
    ASSERT_EQ(s.values.size(), 3u);
    EXPECT_NEAR(s.values[0], 1.0, 1e-8);
    EXPECT_NEAR(s.values[1], 2.0, 1e-8);
    EXPECT_NEAR(s.values[2], 3.0, 1e-8);
}

TEST(Lanczos, IteratesStayOrthogonal) {
    auto [op, matrix] = random_symmetric_operator(200, 19);
    std::vector<FlatVector> q;
    lanczos(op, 60, 21, &q);
    ASSERT_GE(q.size(), 2u);
    for (std::size_t i = 0; i < q.size(); ++i)
        for (std::size_t j = i + 1; j < q.size(); ++j)
            EXPECT_LE(std::abs(dot(q[i], q[j])), 1e-8);
}

TEST(Lanczos, ExtremesMatchDenseOracle) {
    auto [op, matrix] = random_symmetric_operator(300, 23);
    const std::vector<double> dense = dense_spectrum_oracle(matrix);
    const RitzSpectrum s = lanczos(op, 100, 29);
    EXPECT_NEAR(s.values.front(), dense.front(), 1e-6 * std::abs(dense.front()));
    EXPECT_NEAR(s.values.back(), dense.back(), 1e-6 * std::abs(dense.back()));
}

TEST(Lanczos, RitzContainmentAndWeightNormalization) {
    Rng seeds(37);
    for (int trial = 0; trial < 6; ++trial) {
        const std::int64_t dim = 50 + static_cast<std::int64_t>(seeds.index(200));
        auto [op, matrix] = random_symmetric_operator(dim, 100 + trial);
        const std::vector<double> dense = dense_spectrum_oracle(matrix);
        const double tol = 1e-6 * (dense.back() - dense.front());
        const int iters = static_cast<int>(std::min<std::int64_t>(40, dim));
        const RitzSpectrum s = lanczos(op, iters, 200 + trial);
        double wsum = 0.0;
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            EXPECT_GE(s.values[i], dense.front() - tol);
            EXPECT_LE(s.values[i], dense.back() + tol);
            EXPECT_GE(s.weights[i], 0.0);
            wsum += s.weights[i];
        }
        EXPECT_NEAR(wsum, 1.0, 1e-10);
    }
}

TEST(Lanczos, BadIterationCountRejected) {
    EXPECT_THROW(lanczos(identity_operator(5), 0, 1), DataError);
    EXPECT_THROW(lanczos(identity_operator(5), 6, 1), DataError);
}

TEST(SlqDensity, ScaledIdentityPeaksAtFactor) {
    const SpectralDensity d = slq_density(identity_operator(30, 2.0), 5, 4, -1.0, 201, 3);
    // single Ritz value 2.0: grid is [2 - 3 sigma, 2 + 3 sigma]
    const auto it = std::max_element(d.density.begin(), d.density.end());
    const std::size_t arg = static_cast<std::size_t>(it - d.density.begin());
    const double cell = d.grid[1] - d.grid[0];
    EXPECT_NEAR(d.grid[arg], 2.0, cell + 1e-12);
    EXPECT_NEAR(trapezoid(d.grid, d.density), 1.0, 1e-3);
}

TEST(SlqDensity, SymmetricSpectrumIsSymmetricInExpectation) {
    // diag(-1, 1): Ritz values are exact, but each run's weights depend on
    // the start vector, so symmetry holds in expectation over runs. Compare
    // the mass on each side of zero over many runs against its sampling
    // error (weight variance of a two-point quadrature is at most 1/8).
    const CurvatureOperator op = diagonal_operator({-1.0, 1.0}, "pm1");
    const int runs = 400;
    const RitzSpectrum all = slq_ritz(op, 2, runs, 41);
    double left = 0.0, right = 0.0;
    for (std::size_t i = 0; i < all.values.size(); ++i) {
        EXPECT_NEAR(std::abs(all.values[i]), 1.0, 1e-10);
        (all.values[i] < 0.0 ? left : right) += all.weights[i];
    }
    left /= runs;
    right /= runs;
    const double sampling = 3.0 * std::sqrt(0.125 / runs);
    EXPECT_LE(std::abs(left - right), sampling);
}

TEST(SlqDensity, FlatSpectrumCloseToSmoothedOracle) {
    const std::int64_t n = 1000;
    const CurvatureOperator op = diagonal_operator(iota(n), "diag1k");
    const std::vector<double> eigs = iota(n);
    const double sigma = 0.02 * (eigs.back() - eigs.front());
    const SpectralDensity est = slq_density(op, 100, 20, sigma, 1024, 47);
    const std::vector<double> unit(n, 1.0 / static_cast<double>(n));
    const SpectralDensity exact = gaussian_mixture_density(eigs, unit, sigma, est.grid);
    std::vector<double> diff(est.grid.size());
    for (std::size_t i = 0; i < diff.size(); ++i)
        diff[i] = std::abs(est.density[i] - exact.density[i]);
    EXPECT_LE(trapezoid(est.grid, diff), 0.05);
    for (double x : est.density) EXPECT_GE(x, 0.0);
}

TEST(DenseOracle, KnownSmallMatrices) {
    DenseMatrix a(2);
    a.at(0, 0) = 2.0;
    a.at(1, 1) = 3.0;
    const auto ea = dense_spectrum_oracle(a);
    EXPECT_NEAR(ea[0], 2.0, 1e-14);
    EXPECT_NEAR(ea[1], 3.0, 1e-14);

    DenseMatrix b(2);
    b.at(0, 1) = 1.0;
    b.at(1, 0) = 1.0;
    const auto eb = dense_spectrum_oracle(b);
    EXPECT_NEAR(eb[0], -1.0, 1e-14);
    EXPECT_NEAR(eb[1], 1.0, 1e-14);
}

TEST(DenseOracle, TraceIdentity) {
    auto [op, matrix] = random_symmetric_operator(100, 53);
    const auto eigs = dense_spectrum_oracle(matrix);
    double esum = 0.0, tsum = 0.0;
    for (double e : eigs) esum += e;
    for (std::int64_t i = 0; i < 100; ++i) tsum += matrix.at(i, i);
    EXPECT_NEAR(esum, tsum, 1e-8);
}

TEST(DenseOracle, AsymmetryRejected) {
    DenseMatrix a(3);
    a.at(0, 1) = 1.0;
    a.at(1, 0) = 1.0 + 1e-9;
    EXPECT_THROW(dense_spectrum_oracle(a), DataError);
}

TEST(RandomSymmetric, ConstructionProperties) {
    auto [op, matrix] = random_symmetric_operator(1000, 59);
    for (std::int64_t i = 0; i < 50; ++i)
        for (std::int64_t j = 0; j < 50; ++j)
            ASSERT_EQ(matrix.at(i, j), matrix.at(j, i));

    // operator applies exactly the returned matrix
    Rng rng(61);
    FlatVector v(1000);
    for (auto& x : v) x = rng.gaussian();
    const FlatVector hv = op.apply(v);
    for (std::int64_t i = 0; i < 20; ++i) {
        double expect = 0.0;
        for (std::int64_t j = 0; j < 1000; ++j) expect += matrix.at(i, j) * v[j];
        EXPECT_EQ(hv[i], expect);
    }

    // Var((B_ij + B_ji) / 2) = 1/2 off the diagonal
    double mean = 0.0, var = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < 1000; ++i)
        for (std::int64_t j = i + 1; j < 1000; ++j) {
            mean += matrix.at(i, j);
            ++count;
        }
    mean /= static_cast<double>(count);
    for (std::int64_t i = 0; i < 1000; ++i)
        for (std::int64_t j = i + 1; j < 1000; ++j)
            var += (matrix.at(i, j) - mean) * (matrix.at(i, j) - mean);
    var /= static_cast<double>(count);
    EXPECT_NEAR(var, 0.5, 0.05);
}

TEST(CombineOperators, WeightedSumAndTraceAdditivity) {
    // Hessian of a sum is the sum of Hessians; with shared probes the
    // Hutchinson estimates add exactly up to rounding.
    auto [op_a, mat_a] = random_symmetric_operator(40, 67);
    auto [op_b, mat_b] = random_symmetric_operator(40, 71);
    const CurvatureOperator total = combine_operators({op_a, op_b}, {1.0, 1.0}, "total");

    const TraceEstimate ta = hutchinson_trace(op_a, 64, 73);
    const TraceEstimate tb = hutchinson_trace(op_b, 64, 73);
    const TraceEstimate tt = hutchinson_trace(total, 64, 73);
    const double sum = ta.mean + tb.mean;
    EXPECT_NEAR(tt.mean, sum, 1e-8 * std::max(1.0, std::abs(sum)));

    EXPECT_THROW(combine_operators({op_a}, {1.0, 2.0}, "bad"), DataError);
}
