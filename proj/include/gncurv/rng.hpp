#pragma once

// Deterministic random number utilities. All sampling in the library goes
// through Rng so that results depend only on the seed, never on
// implementation-defined std::* distributions.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace gncurv {

/// Derives an independent child seed from a master seed and a label.
/// Distinct labels give decorrelated streams, so the components of a run
/// (init, shuffle, probes, per-run Lanczos starts) can be reseeded
/// independently while staying reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    // FNV-1a over the label, then one splitmix64 round mixed with the master.
    std::uint64_t h = 14695981039346656037ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = master + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index) {
    return derive_seed(derive_seed(master, label), "#") + index * 0x9e3779b97f4a7c15ull;
}

/// Seeded generator with explicit, portable mappings from engine output to
/// uniform/gaussian/rademacher draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform double in [0, 1), 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the paired draw is cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// +1 or -1 with equal probability.
    double rademacher() { return (eng_() & 1ull) ? 1.0 : -1.0; }

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t index(std::uint64_t bound) { return eng_() % bound; }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace gncurv
