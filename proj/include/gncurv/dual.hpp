#pragma once

// First-order dual number: value plus directional derivative (tangent).
// Running the reverse-mode tape on Dual scalars yields, in the adjoints,
// both the gradient (value part) and its directional derivative along the
// seeded tangent (tangent part), i.e. an exact Hessian-vector product.

#include <cmath>

namespace gncurv {

struct Dual {
    double v = 0.0; // value
    double t = 0.0; // tangent

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value), t(0.0) {}
    constexpr Dual(double value, double tangent) : v(value), t(tangent) {}

    constexpr Dual operator-() const { return {-v, -t}; }

    constexpr Dual& operator+=(const Dual& o) {
        v += o.v;
        t += o.t;
        return *this;
    }
    constexpr Dual& operator-=(const Dual& o) {
        v -= o.v;
        t -= o.t;
        return *this;
    }
    constexpr Dual& operator*=(const Dual& o) {
        t = t * o.v + v * o.t;
        v *= o.v;
        return *this;
    }
};

constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }

constexpr Dual operator/(const Dual& a, const Dual& b) {
    const double inv = 1.0 / b.v;
    return {a.v * inv, (a.t - a.v * b.t * inv) * inv};
}

inline Dual sqrt(const Dual& a) {
    const double s = std::sqrt(a.v);
    return {s, a.t / (2.0 * s)};
}

inline Dual tanh(const Dual& a) {
    const double y = std::tanh(a.v);
    return {y, a.t * (1.0 - y * y)};
}

inline bool isfinite(const Dual& a) {
    return std::isfinite(a.v) && std::isfinite(a.t);
}

/// Value part of a scalar; identity for plain doubles.
constexpr double scalar_value(double x) { return x; }
constexpr double scalar_value(const Dual& x) { return x.v; }

constexpr double scalar_tangent(double) { return 0.0; }
constexpr double scalar_tangent(const Dual& x) { return x.t; }

using std::isfinite;
using std::sqrt;
using std::tanh;

} // namespace gncurv
