#pragma once

#include <cstdint>
#include <cmath>

namespace fbsde {

// Counter-based generator: every (seed, stream, sample, step) tuple derives an
// independent key, so batches can be generated in any order and still match
// bit-for-bit. The core step is the splitmix64 finalizer.
class CounterRng {
  public:
    static constexpr std::uint64_t kStreamBrownian = 0x9e3779b97f4a7c15ull;
    static constexpr std::uint64_t kStreamJumps = 0xbf58476d1ce4e5b9ull;
    static constexpr std::uint64_t kStreamInit = 0x94d049bb133111ebull;
    static constexpr std::uint64_t kStreamEval = 0xd6e8feb86659fd93ull;

    CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0, std::uint64_t b = 0)
        : state_(derive(derive(derive(derive(0x853c49e6748fea9bull, seed), stream), a), b)),
          have_cached_(false),
          cached_(0.0) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform on (0,1]; never returns 0 so log() is safe.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1p-53;
    }

    // Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925287 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Poisson count by CDF inversion; exact and cheap for the small means
    // (lambda*dt) used here.
    int poisson(double mean) {
        if (mean <= 0.0) return 0;
        const double u = uniform();
        int k = 0;
        double p = std::exp(-mean);
        double cdf = p;
        while (u > cdf && k < 1024) {
            ++k;
            p *= mean / k;
            cdf += p;
        }
        return k;
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    static std::uint64_t derive(std::uint64_t h, std::uint64_t v) {
        return mix(h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)));
    }

    std::uint64_t state_;
    bool have_cached_;
    double cached_;
};

}  // namespace fbsde
