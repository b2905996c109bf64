#pragma once

#include <cmath>
#include <cstdint>

#include "levysbtm/common.hpp"

namespace levysbtm {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter). One stream per particle makes parallel scheduling
// irrelevant to the produced trajectories, and identical inputs always give
// identical draws.
namespace detail {
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t seed_, std::uint64_t stream_) : seed(seed_), stream(stream_) {}

    std::uint64_t next_u64() {
        using detail::splitmix64;
        std::uint64_t z = splitmix64(counter++ ^ splitmix64(stream ^ splitmix64(seed)));
        return splitmix64(z ^ 0xd1b54a32d192ed03ULL);
    }

    // Uniform on (0, 1]: never returns 0, so log(u) is safe.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Uniform on (lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per pair, caches the second.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double exponential(double mean) { return -mean * std::log(uniform()); }

    // Knuth product method; fine for the small rates (lambda * dt) used here.
    int poisson(double rate) {
        if (rate <= 0.0) return 0;
        double limit = std::exp(-rate);
        double prod = uniform();
        int n = 0;
        while (prod > limit) {
            prod *= uniform();
            ++n;
        }
        return n;
    }

private:
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace levysbtm
