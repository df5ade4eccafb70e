// Deterministic RNG with self-contained distributions. std:: distributions are
// implementation-defined, so every draw here is spelled out to keep artifacts
// byte-reproducible.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace prefalign {

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
        // Warm up so similar seeds decorrelate quickly.
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        // splitmix64
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) {
            throw std::invalid_argument("Rng::uniform_int: n must be positive");
        }
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    // Standard normal via Box-Muller. No cached spare: one fresh pair of
    // uniforms per call keeps draw counts independent of call history.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::vector<double> normal_vector(size_t n, double mean = 0.0, double stddev = 1.0) {
        std::vector<double> out(n);
        for (auto& v : out) {
            v = normal(mean, stddev);
        }
        return out;
    }

    // Sample an index from unnormalized non-negative weights.
    int categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) {
            total += w;
        }
        if (!(total > 0.0)) {
            throw std::invalid_argument("Rng::categorical: non-positive weight total");
        }
        double r = uniform() * total;
        for (size_t i = 0; i < weights.size(); ++i) {
            r -= weights[i];
            if (r < 0.0) {
                return static_cast<int>(i);
            }
        }
        return static_cast<int>(weights.size()) - 1;
    }

  private:
    uint64_t state_;
};

// Stable per-item seed derivation: mixes a base seed with an item id so
// parallel pipelines stay order-independent.
inline uint64_t derive_seed(uint64_t base, uint64_t id) {
    uint64_t z = base ^ (id * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull);
    z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ull;
    return z ^ (z >> 33);
}

}  // namespace prefalign
