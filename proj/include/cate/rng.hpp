#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cate {

// Deterministic 64-bit RNG used everywhere in the library.
//
// All derived draws (uniform doubles, bounded integers, shuffles) are
// implemented here rather than with std::<distribution> types, whose output
// is implementation-defined. Given a seed, every stream of draws is stable
// across platforms and runs, which the reproducibility contracts rely on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // splitmix64 seeding of xoshiro256**.
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() {
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

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n). n must be > 0.
    std::size_t below(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be > 0");
        const std::uint64_t bound = n;
        // Rejection sampling on the top bits avoids modulo bias.
        const std::uint64_t threshold = (0ULL - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return static_cast<std::size_t>(r % bound);
        }
    }

    /// Integer in [lo, hi] inclusive.
    long long range(long long lo, long long hi) {
        if (hi < lo) throw std::invalid_argument("Rng::range: hi < lo");
        return lo + static_cast<long long>(below(static_cast<std::size_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (two draws per call, no caching).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925287 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct values from [0, n), in random order. k must be <= n.
    std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("Rng::sample_distinct: k > n");
        // Partial Fisher-Yates on a sparse index map keeps this O(k) memory-wise
        // only for small k; for simplicity use a dense map when n is small.
        if (n <= 4096) {
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t j = i + below(n - i);
                std::swap(idx[i], idx[j]);
            }
            idx.resize(k);
            return idx;
        }
        // Floyd's algorithm for large n.
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t j = n - k; j < n; ++j) {
            const std::size_t t = below(j + 1);
            bool seen = false;
            for (const auto v : out) {
                if (v == t) {
                    seen = true;
                    break;
                }
            }
            out.push_back(seen ? j : t);
        }
        // Shuffle so the order is uniform as well.
        shuffle(out);
        return out;
    }

    /// Independent child stream; distinct ids give decorrelated streams.
    Rng fork(std::uint64_t stream_id) {
        std::uint64_t x = next() ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
        return Rng(splitmix64(x));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

}  // namespace cate
