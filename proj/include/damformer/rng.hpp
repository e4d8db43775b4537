#pragma once

#include <cmath>
#include <cstdint>

namespace damformer {

// splitmix64 with the published constants. The generator is specified
// bit-exactly so that an independent implementation produces identical
// streams from the same seed; dataset synthesis, shuffling, and weight
// init all draw from it.
class SplitMix64 {
  public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1): top 53 bits scaled by 2^-53.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo reduction, kept for cross-language
    // reproducibility of the stream consumption.
    uint64_t uniform_int(uint64_t n) { return next() % n; }

    // Inclusive integer range.
    int64_t uniform_range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Box-Muller, cosine branch only; consumes exactly two draws per sample.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal truncated to +/- 2 stddev by rejection.
    double trunc_normal(double stddev) {
        for (;;) {
            double z = normal() * stddev;
            if (std::fabs(z) <= 2.0 * stddev) return z;
        }
    }

    // Derives an independent per-item stream, e.g. per sample index or epoch.
    static SplitMix64 derive(uint64_t seed, uint64_t index) {
        SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ull * (index + 1)));
        return SplitMix64(g.next());
    }

  private:
    uint64_t state_;
};

}  // namespace damformer
