#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace falconsim {

// splitmix64, used for seed derivation so that every component of an
// experiment gets an independent, reproducible stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a child seed from (parent, tag). Tags are short strings such as
// "rep:17" or "path:0"; the derivation is order-independent and stable.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
    std::uint64_t h = parent;
    for (char c : tag) h = splitmix64(h ^ static_cast<std::uint8_t>(c));
    return splitmix64(h);
}

// xoshiro256** — small deterministic generator; behaviour is identical on
// every platform, unlike the std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0x853c49e6748fea9bULL) {
        std::uint64_t x = seed;
        for (auto& w : s_) { x = splitmix64(x); w = x; }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0,n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // modulo bias is negligible for the ranges used here (n << 2^64)
        return next_u64() % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call (the spare is discarded to keep the
    // stream position independent of call interleaving).
    double normal(double mean, double stddev) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) *
                         std::cos(2.0 * 3.141592653589793 * u2);
        return mean + stddev * z;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

} // namespace falconsim
