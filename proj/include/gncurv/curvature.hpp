#pragma once

// Matrix-free curvature probes.
//
// A CurvatureOperator wraps v -> H v for a symmetric H that is never formed.
// Traces are estimated with Hutchinson's estimator over Rademacher probes;
// eigenvalue densities with stochastic Lanczos quadrature: run Lanczos from
// random Gaussian start vectors, take the tridiagonal eigenpairs as a
// quadrature rule (Ritz value, squared first eigenvector component), and
// smooth the averaged rule with a Gaussian kernel.
//
// Dense helpers (full symmetric eigendecomposition, random Gaussian
// symmetric matrices) exist to validate the matrix-free path and are not
// used by it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gncurv/autodiff.hpp"
#include "gncurv/errors.hpp"
#include "gncurv/param.hpp"
#include "gncurv/rng.hpp"

namespace gncurv {

/// Symmetric linear operator of dimension P with a pure, reentrant apply.
class CurvatureOperator {
public:
    CurvatureOperator() = default;
    CurvatureOperator(std::int64_t dim, std::string label,
                      std::function<FlatVector(const FlatVector&)> apply)
        : dim_(dim), label_(std::move(label)), apply_(std::move(apply)) {}

    std::int64_t dim() const { return dim_; }
    const std::string& label() const { return label_; }

    FlatVector apply(const FlatVector& v) const {
        if (static_cast<std::int64_t>(v.size()) != dim_)
            throw DataError("operator '" + label_ + "': vector length mismatch");
        FlatVector out = apply_(v);
        if (static_cast<std::int64_t>(out.size()) != dim_)
            throw NumericError("operator '" + label_ + "': apply output length mismatch");
        return out;
    }

private:
    std::int64_t dim_ = 0;
    std::string label_;
    std::function<FlatVector(const FlatVector&)> apply_;
};

/// Hessian of a scalar loss over one parameter block, applied via exact
/// Hessian-vector products; parameters outside the block stay constant.
/// Several operators over the same weights can share one ParamSet copy.
template <class F>
CurvatureOperator hessian_operator(F loss_builder, std::shared_ptr<const ParamSet> params,
                                   Block block, std::string label) {
    const std::int64_t dim = params->block_size(block);
    auto apply = [loss_builder = std::move(loss_builder), params = std::move(params),
                  block](const FlatVector& v) { return hvp(loss_builder, *params, block, v); };
    return CurvatureOperator(dim, std::move(label), std::move(apply));
}

template <class F>
CurvatureOperator hessian_operator(F loss_builder, const ParamSet& params, Block block,
                                   std::string label) {
    return hessian_operator(std::move(loss_builder),
                            std::make_shared<const ParamSet>(params), block,
                            std::move(label));
}

/// Weighted sum of same-dimension operators; applications run in the given
/// order so results are deterministic. Used to assemble a full-dataset
/// Hessian from fixed evaluation chunks.
inline CurvatureOperator combine_operators(std::vector<CurvatureOperator> parts,
                                           std::vector<double> weights,
                                           std::string label) {
    if (parts.empty() || parts.size() != weights.size())
        throw DataError("combine_operators: parts/weights mismatch");
    const std::int64_t dim = parts.front().dim();
    for (const auto& p : parts)
        if (p.dim() != dim) throw DataError("combine_operators: dimensions differ");
    auto apply = [parts = std::move(parts), weights = std::move(weights),
                  dim](const FlatVector& v) {
        FlatVector out(dim, 0.0);
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const FlatVector part = parts[i].apply(v);
            axpy(weights[i], part, out);
        }
        return out;
    };
    return CurvatureOperator(dim, std::move(label), std::move(apply));
}

// ---------------------------------------------------------------------------
// Hutchinson trace estimation
// ---------------------------------------------------------------------------

struct TraceEstimate {
    double mean = 0.0;
    double stderr_of_mean = 0.0;
    int n_samples = 0;
    std::vector<double> samples; // quadratic forms in probe order
};

/// tr H ~= mean of v' H v over iid Rademacher probes. Deterministic per
/// seed; samples accumulate in probe-index order.
inline TraceEstimate hutchinson_trace(const CurvatureOperator& op, int n_samples,
                                      std::uint64_t seed) {
    if (n_samples < 1) throw DataError("hutchinson_trace: n_samples must be >= 1");
    Rng rng(derive_seed(seed, "hutchinson"));
    TraceEstimate est;
    est.n_samples = n_samples;
    est.samples.reserve(n_samples);
    FlatVector v(op.dim());
    for (int s = 0; s < n_samples; ++s) {
        for (auto& x : v) x = rng.rademacher();
        const FlatVector hv = op.apply(v);
        est.samples.push_back(dot(v, hv));
    }
    double sum = 0.0;
    for (double q : est.samples) sum += q;
    est.mean = sum / static_cast<double>(n_samples);
    if (n_samples > 1) {
        double ss = 0.0;
        for (double q : est.samples) ss += (q - est.mean) * (q - est.mean);
        const double sample_sd = std::sqrt(ss / static_cast<double>(n_samples - 1));
        est.stderr_of_mean = sample_sd / std::sqrt(static_cast<double>(n_samples));
    }
    return est;
}

// ---------------------------------------------------------------------------
// Lanczos / stochastic Lanczos quadrature
// ---------------------------------------------------------------------------

/// Ritz values (ascending) with quadrature weights; one Lanczos run unless
/// merged by slq_density.
struct RitzSpectrum {
    std::vector<double> values;
    std::vector<double> weights; // nonnegative, sum to 1 per run
    int runs = 1;
};

namespace detail {

/// Eigenvalues and first-row eigenvector components of a symmetric
/// tridiagonal matrix, ascending.
inline void tridiag_eigen(const std::vector<double>& alpha,
                          const std::vector<double>& beta, std::vector<double>& values,
                          std::vector<double>& first_components) {
    const auto k = static_cast<Eigen::Index>(alpha.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), k);
    Eigen::VectorXd sub(k > 1 ? k - 1 : 0);
    for (Eigen::Index i = 0; i + 1 < k; ++i) sub[i] = beta[i];
    solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    if (solver.info() != Eigen::Success)
        throw NumericError("tridiagonal eigendecomposition failed");
    values.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + k);
    first_components.resize(k);
    for (Eigen::Index i = 0; i < k; ++i)
        first_components[i] = solver.eigenvectors()(0, i);
}

} // namespace detail

/// One Lanczos run with a unit Gaussian start vector and full
/// reorthogonalization (two passes over all retained iterates per step).
/// Stops early when the residual norm falls below 1e-12 of the coefficient
/// scale, returning the partial spectrum. The retained orthonormal iterates
/// can be captured for diagnostics.
inline RitzSpectrum lanczos(const CurvatureOperator& op, int iters, std::uint64_t seed,
                            std::vector<FlatVector>* iterates = nullptr) {
    const std::int64_t dim = op.dim();
    if (iters < 1 || iters > dim)
        throw DataError("lanczos: iters must be in [1, dim]");

    Rng rng(derive_seed(seed, "lanczos-start"));
    std::vector<FlatVector> q;
    q.emplace_back(dim);
    for (auto& x : q.back()) x = rng.gaussian();
    {
        const double nrm = norm2(q.back());
        for (auto& x : q.back()) x /= nrm;
    }

    std::vector<double> alpha, beta;
    double coeff_scale = 1.0;
    for (int j = 0; j < iters; ++j) {
        FlatVector w = op.apply(q[j]);
        for (double x : w)
            if (!std::isfinite(x)) throw NumericError("lanczos: non-finite operator output");
        const double a = dot(q[j], w);
        alpha.push_back(a);
        axpy(-a, q[j], w);
        if (j > 0) axpy(-beta[j - 1], q[j - 1], w);
        for (int pass = 0; pass < 2; ++pass)
            for (const FlatVector& qi : q) axpy(-dot(qi, w), qi, w);

        coeff_scale = std::max(coeff_scale, std::abs(a));
        const double b = norm2(w);
        if (b <= 1e-12 * coeff_scale) break; // invariant subspace found
        if (j + 1 == iters) break;
        beta.push_back(b);
        coeff_scale = std::max(coeff_scale, b);
        for (auto& x : w) x /= b;
        q.push_back(std::move(w));
    }

    RitzSpectrum spectrum;
    std::vector<double> first;
    detail::tridiag_eigen(alpha, beta, spectrum.values, first);
    spectrum.weights.resize(first.size());
    for (std::size_t i = 0; i < first.size(); ++i)
        spectrum.weights[i] = first[i] * first[i];
    if (iterates) *iterates = std::move(q);
    return spectrum;
}

/// Smoothed eigenvalue density on a grid; integrates to 1 (trapezoid).
struct SpectralDensity {
    std::vector<double> grid;
    std::vector<double> density;
    double sigma = 0.0;
};

inline double trapezoid(const std::vector<double>& grid, const std::vector<double>& f) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        s += 0.5 * (f[i] + f[i + 1]) * (grid[i + 1] - grid[i]);
    return s;
}

/// Gaussian-kernel mixture over (center, weight) pairs, evaluated on a grid
/// and renormalized to unit trapezoidal integral.
inline SpectralDensity gaussian_mixture_density(const std::vector<double>& centers,
                                                const std::vector<double>& weights,
                                                double sigma,
                                                const std::vector<double>& grid) {
    if (centers.size() != weights.size())
        throw DataError("gaussian_mixture_density: centers/weights mismatch");
    if (sigma <= 0.0) throw DataError("gaussian_mixture_density: sigma must be positive");
    SpectralDensity d;
    d.grid = grid;
    d.sigma = sigma;
    d.density.assign(grid.size(), 0.0);
    const double norm = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double z = (grid[i] - centers[c]) / sigma;
            d.density[i] += weights[c] * norm * std::exp(-0.5 * z * z);
        }
    }
    const double integral = trapezoid(d.grid, d.density);
    if (integral > 0.0)
        for (double& x : d.density) x /= integral;
    return d;
}

inline std::vector<double> uniform_grid(double lo, double hi, int points) {
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return g;
}

/// Concatenated Ritz pairs of `runs` independent Lanczos runs. Each run's
/// weights sum to 1; per-run seeds derive from the master seed.
inline RitzSpectrum slq_ritz(const CurvatureOperator& op, int iters, int runs,
                             std::uint64_t seed) {
    if (runs < 1) throw DataError("slq: runs must be >= 1");
    RitzSpectrum all;
    all.runs = runs;
    for (int r = 0; r < runs; ++r) {
        const RitzSpectrum s = lanczos(op, iters, derive_seed(seed, "slq-run", r));
        all.values.insert(all.values.end(), s.values.begin(), s.values.end());
        all.weights.insert(all.weights.end(), s.weights.begin(), s.weights.end());
    }
    return all;
}

/// Smooths an averaged quadrature rule into a density. kernel_sigma <= 0
/// selects the default width 0.01 * max(1, Ritz range); the grid spans
/// [min - 3 sigma, max + 3 sigma] uniformly.
inline SpectralDensity density_from_ritz(const RitzSpectrum& all, double kernel_sigma,
                                         int grid_points) {
    if (grid_points < 2) throw DataError("density: grid_points must be >= 2");
    if (all.values.empty()) throw DataError("density: empty spectrum");
    std::vector<double> weights(all.weights);
    for (double& w : weights) w /= static_cast<double>(all.runs);
    const auto [lo_it, hi_it] = std::minmax_element(all.values.begin(), all.values.end());
    double sigma = kernel_sigma;
    if (sigma <= 0.0) sigma = 0.01 * std::max(1.0, *hi_it - *lo_it);
    const auto grid = uniform_grid(*lo_it - 3.0 * sigma, *hi_it + 3.0 * sigma, grid_points);
    return gaussian_mixture_density(all.values, weights, sigma, grid);
}

/// Spectral density by stochastic Lanczos quadrature: averages `runs`
/// independent Lanczos quadrature rules and smooths with a Gaussian kernel.
inline SpectralDensity slq_density(const CurvatureOperator& op, int iters, int runs,
                                   double kernel_sigma, int grid_points,
                                   std::uint64_t seed) {
    return density_from_ritz(slq_ritz(op, iters, runs, seed), kernel_sigma, grid_points);
}

// ---------------------------------------------------------------------------
// Dense validation helpers
// ---------------------------------------------------------------------------

/// Row-major dense square matrix, small enough to eigendecompose directly.
struct DenseMatrix {
    std::int64_t n = 0;
    std::vector<double> a; // n * n, row-major

    explicit DenseMatrix(std::int64_t dim = 0) : n(dim), a(dim * dim, 0.0) {}
    double& at(std::int64_t i, std::int64_t j) { return a[i * n + j]; }
    double at(std::int64_t i, std::int64_t j) const { return a[i * n + j]; }
};

/// Full eigenvalue spectrum (ascending) of a symmetric matrix; validation
/// only. Rejects asymmetry beyond 1e-12.
inline std::vector<double> dense_spectrum_oracle(const DenseMatrix& m) {
    if (m.n > 2000) throw DataError("dense_spectrum_oracle: dimension > 2000");
    for (std::int64_t i = 0; i < m.n; ++i)
        for (std::int64_t j = i + 1; j < m.n; ++j)
            if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-12)
                throw DataError("dense_spectrum_oracle: matrix not symmetric");
    Eigen::MatrixXd em(m.n, m.n);
    for (std::int64_t i = 0; i < m.n; ++i)
        for (std::int64_t j = 0; j < m.n; ++j) em(i, j) = m.at(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(em, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success)
        throw NumericError("dense_spectrum_oracle: eigendecomposition failed");
    return std::vector<double>(solver.eigenvalues().data(),
                               solver.eigenvalues().data() + m.n);
}

/// Matrix-free operator over a dense matrix; the matrix is shared, so the
/// operator and the returned copy agree bitwise.
inline CurvatureOperator dense_operator(std::shared_ptr<const DenseMatrix> m,
                                        std::string label) {
    const std::int64_t dim = m->n;
    auto apply = [m](const FlatVector& v) {
        FlatVector out(m->n, 0.0);
        for (std::int64_t i = 0; i < m->n; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < m->n; ++j) s += m->at(i, j) * v[j];
            out[i] = s;
        }
        return out;
    };
    return CurvatureOperator(dim, std::move(label), std::move(apply));
}

/// A = (B + B') / 2 with B iid standard normal; returns the matrix-free
/// operator together with the explicit matrix for oracle comparison.
inline std::pair<CurvatureOperator, DenseMatrix> random_symmetric_operator(
    std::int64_t dim, std::uint64_t seed) {
    if (dim < 1) throw DataError("random_symmetric_operator: dim must be >= 1");
    Rng rng(derive_seed(seed, "gaussian-matrix"));
    DenseMatrix b(dim);
    for (auto& x : b.a) x = rng.gaussian();
    auto a = std::make_shared<DenseMatrix>(dim);
    for (std::int64_t i = 0; i < dim; ++i)
        for (std::int64_t j = 0; j < dim; ++j)
            a->at(i, j) = 0.5 * (b.at(i, j) + b.at(j, i));
    DenseMatrix copy = *a;
    return {dense_operator(std::move(a), "gaussian-sym-" + std::to_string(dim)),
            std::move(copy)};
}

} // namespace gncurv
