#pragma once

// Shared plumbing: error types, reproducible rng streams, normal cdf/quantile,
// and a deterministic chunked parallel_for.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ember {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files or config text.
class ParseError : public Error {
public:
    using Error::Error;
};

// Structurally valid input that violates a model precondition.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Numerical failure that survives the documented recovery attempts.
class NumericError : public Error {
public:
    using Error::Error;
};

// Bad command line or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Query outside the geometry it addresses (grid extent, layer name).
class OutOfDomainError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace detail

// Independent substream seed for (master, label, index). Streams with different
// labels or indices never share state, so consumers can be reordered or run in
// parallel without changing each other's draws.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
    std::uint64_t h = detail::fnv1a64(label);
    h = detail::splitmix64(h ^ master);
    h = detail::splitmix64(h ^ (index * 0x9e3779b97f4a7c15ull + 0x6a09e667f3bcc909ull));
    return h;
}

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Inverse normal cdf: Acklam's rational approximation polished by one Halley
// step against erfc, giving ~1e-15 relative accuracy over (0,1).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw NumericError("normal_quantile: p outside [0,1]");
    }
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement on f(x) = cdf(x) - p.
    double e = normal_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

// Deterministic random stream. Uniforms map the top 53 bits into (0,1) open on
// both ends; normals go through the inverse cdf so sequences are identical
// across standard library implementations.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(seed) {}
    RngStream(std::uint64_t master, std::string_view label, std::uint64_t index = 0)
        : gen_(derive_seed(master, label, index)) {}

    std::uint64_t next_u64() { return gen_(); }

    double u01() {
        return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return normal_quantile(u01()); }

    // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
    // the n used here (<= a few million), but use Lemire-style rejection anyway.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw NumericError("uniform_index: empty range");
        std::uint64_t bound = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= bound);
        return static_cast<std::size_t>(x % n);
    }

private:
    std::mt19937_64 gen_;
};

inline int effective_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over a fixed chunking of [0, n). The chunk boundaries
// depend only on n, never on the thread count, so any per-chunk state derived
// from chunk indices is reproducible. Chunks must write disjoint outputs.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn,
                         int threads = 0) {
    if (n == 0) return;
    int nt = effective_threads(threads);
    if (nt <= 1 || n == 1) {
        fn(0, n);
        return;
    }
    std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(nt) * 4, n);
    std::vector<std::thread> pool;
    std::atomic_size_t next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nt));
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (;;) {
                    std::size_t c = next.fetch_add(1);
                    if (c >= chunks) break;
                    std::size_t b = c * n / chunks;
                    std::size_t e = (c + 1) * n / chunks;
                    if (b < e) fn(b, e);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw NumericError("mean_of: empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

} // namespace ember
