#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace levysbtm {

using Vec = std::vector<double>;

// Configuration / input problems. CLI maps these to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures (non-finite coefficients, singularities, diverged
// training). CLI maps these to exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline void require_finite(double x, const std::string& what) {
    if (!std::isfinite(x)) throw NumericError("non-finite value in " + what);
}

inline void require_finite(const Vec& v, const std::string& what) {
    for (double x : v) require_finite(x, what);
}

inline double sqr(double x) { return x * x; }

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const Vec& a, const Vec& b) {
    return dot(a.data(), b.data(), a.size());
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

// Kahan compensated accumulator. Loss terms have mixed signs, so plain
// summation over N * nodes * lambda contributions loses digits.
struct KahanSum {
    double sum = 0.0;
    double c = 0.0;
    void add(double x) {
        double y = x - c;
        double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

// Worker count: LEVYSBTM_THREADS caps it, default = hardware concurrency.
inline int worker_count() {
    static int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("LEVYSBTM_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        return hw;
    }();
    return n;
}

// Deterministic parallel map: the index range is split into fixed-size
// chunks independent of the worker count, so any reduction done per chunk
// and combined in chunk order is bit-reproducible for any thread count.
inline constexpr std::size_t kParallelChunk = 4096;

inline void parallel_chunks(std::size_t n, const std::function<void(std::size_t chunk_index, std::size_t begin, std::size_t end)>& body) {
    if (n == 0) return;
    const std::size_t nchunks = (n + kParallelChunk - 1) / kParallelChunk;
    int workers = worker_count();
    if (workers <= 1 || nchunks <= 1) {
        for (std::size_t c = 0; c < nchunks; ++c)
            body(c, c * kParallelChunk, std::min(n, (c + 1) * kParallelChunk));
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= nchunks) break;
            body(c, c * kParallelChunk, std::min(n, (c + 1) * kParallelChunk));
        }
    };
    int spawn = std::min<std::size_t>(workers, nchunks);
    pool.reserve(spawn);
    for (int w = 0; w < spawn - 1; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

// Plain parallel for over [0, n) in fixed chunks.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) body(i);
    });
}

} // namespace levysbtm
