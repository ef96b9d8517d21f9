#pragma once

// Shared plumbing: deterministic RNG, error types, result wrapper,
// hashing and number formatting helpers.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tsfg {

class TsfgError : public std::runtime_error {
public:
    explicit TsfgError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public TsfgError {
public:
    explicit IoError(const std::string& msg) : TsfgError(msg) {}
};

class SchemaError : public TsfgError {
public:
    explicit SchemaError(const std::string& msg) : TsfgError(msg) {}
};

class ConfigError : public TsfgError {
public:
    explicit ConfigError(const std::string& msg) : TsfgError(msg) {}
};

// Minimal expected-style result. GCC 11 has no std::expected.
template <typename T, typename E>
class Result {
public:
    Result(T value) : value_(std::move(value)) {}          // NOLINT implicit
    Result(E error) : error_(std::move(error)) {}          // NOLINT implicit

    bool ok() const { return value_.has_value(); }
    explicit operator bool() const { return ok(); }

    const T& value() const {
        if (!value_) throw TsfgError("Result::value() on error state");
        return *value_;
    }
    T& value() {
        if (!value_) throw TsfgError("Result::value() on error state");
        return *value_;
    }
    const E& error() const {
        if (!error_) throw TsfgError("Result::error() on ok state");
        return *error_;
    }

private:
    std::optional<T> value_;
    std::optional<E> error_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. All stochastic code in the library draws through this
// wrapper so that results do not depend on libstdc++ distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // splitmix64-expanded state for xoshiro256**
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x++);
    }

    // Derive an independent stream, e.g. rng.fork("split").
    Rng fork(std::uint64_t tag) const {
        Rng child(0);
        std::uint64_t x = state_[0] ^ splitmix64(tag ^ 0xa02bdbf7bb3c0a7ULL);
        for (auto& s : child.state_) s = splitmix64(x++);
        return child;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw TsfgError("uniform_int(0)");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Round-trippable double formatting for CSV / report output.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == static_cast<std::int64_t>(v) && std::fabs(v) < 1e15) {
        return std::to_string(static_cast<std::int64_t>(v));
    }
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline bool nearly_equal(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

}  // namespace tsfg
