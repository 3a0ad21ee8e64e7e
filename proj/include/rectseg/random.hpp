#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace rectseg {

/// Counter-based deterministic random stream (splitmix64 mixing).
///
/// State is two 64-bit words, so streams serialize trivially and a
/// checkpointed training run resumes bit-exactly. fork() derives an
/// independent stream; each stream is owned by a single consumer.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ull)), counter_(0) {}

    static RandomStream restore(std::uint64_t key, std::uint64_t counter) {
        RandomStream s(0);
        s.key_ = key;
        s.counter_ = counter;
        return s;
    }

    RandomStream fork(std::uint64_t tag) const {
        return restore(mix(key_ ^ mix(tag + 0xD1B54A32D192ED03ull)), 0);
    }

    RandomStream fork(std::string_view name) const { return fork(hash_name(name)); }

    std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (no cached second value, keeps the
    /// stream a pure function of the counter).
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Standard Gumbel(0,1): -log(-log(U)).
    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        double inner = -std::log(u);
        if (inner < 1e-300) inner = 1e-300;
        return -std::log(inner);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    static std::uint64_t hash_name(std::string_view name) {
        std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        return h;
    }

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace rectseg
