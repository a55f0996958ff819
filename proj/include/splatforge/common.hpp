#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace splatforge {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------- errors

// Base for all library errors. CLI maps ValidationError/ParseError/ConfigError
// to exit code 2 and DivergenceError to exit code 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct DegeneracyError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------- scalars

inline double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

inline double inv_sigmoid(double y) {
    return std::log(y / (1.0 - y));
}

inline double sqr(double x) {
    return x * x;
}

inline bool all_finite(const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

inline bool all_finite(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

// ---------------------------------------------------------------- hashing

// FNV-1a, used for config hashes and manifest checksums. Stable across runs
// and platforms, unlike std::hash.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// ---------------------------------------------------------------- rng

// Deterministic generator with an explicit draw order. Normals use Box-Muller
// without caching the second variate, so every normal() consumes exactly two
// uniforms and replaying a seed replays the stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed)), inc_(splitmix64(seed ^ 0xda3e39cb94b95bdbull) | 1) {}

    uint64_t next_u64() {
        // xorshift128+ style step on splitmix-derived state
        uint64_t x = state_;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        state_ = x + inc_;
        return x * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // inclusive range
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    bool bernoulli(double p) {
        return uniform() < p;
    }

    // Independent child stream, e.g. one per scene in a batch.
    Rng fork(uint64_t stream) const {
        return Rng(splitmix64(state_ ^ splitmix64(stream ^ 0x5851f42d4c957f2dull)));
    }

private:
    uint64_t state_;
    uint64_t inc_;
};

// ---------------------------------------------------------------- threads

// Thread count comes from SPLATFORGE_THREADS only; defaults to 1 so results
// are reproducible without any environment setup.
inline int thread_count() {
    if (const char* env = std::getenv("SPLATFORGE_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Splits [0, n) into contiguous blocks, one thread each. Each block writes to
// disjoint output ranges; merging any per-thread partials is the caller's job
// and must use block order to stay deterministic.
inline void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body, int threads = 0) {
    if (threads <= 0) threads = thread_count();
    if (threads == 1 || n <= 1) {
        body(0, n);
        return;
    }
    size_t nthreads = std::min<size_t>(static_cast<size_t>(threads), n);
    size_t block = (n + nthreads - 1) / nthreads;
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (size_t t = 0; t < nthreads; ++t) {
        size_t begin = t * block;
        size_t end = std::min(n, begin + block);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& th : pool) th.join();
}

// Same partition, but the body also gets its block index so callers can keep
// per-block partials and merge them in block order (deterministic reductions).
// Returns the number of blocks actually used.
inline size_t parallel_for_blocks(size_t n, const std::function<void(size_t, size_t, size_t)>& body,
                                  int threads = 0) {
    if (threads <= 0) threads = thread_count();
    if (threads == 1 || n <= 1) {
        body(0, 0, n);
        return n == 0 ? 0 : 1;
    }
    size_t nthreads = std::min<size_t>(static_cast<size_t>(threads), n);
    size_t block = (n + nthreads - 1) / nthreads;
    size_t used = (n + block - 1) / block;
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (size_t t = 0; t < used; ++t) {
        size_t begin = t * block;
        size_t end = std::min(n, begin + block);
        pool.emplace_back([&body, t, begin, end] { body(t, begin, end); });
    }
    for (auto& th : pool) th.join();
    return used;
}

}  // namespace splatforge
