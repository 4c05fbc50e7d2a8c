#pragma once

// Seeded deterministic random source.
//
// Generator: SplitMix64 (Steele, Lea, Burger 2014) -- a counter-based mixer
// with a fixed golden-ratio increment. Chosen once; never change it, every
// experiment's reproducibility depends on the exact sequence.
//   uniform01: top 53 bits of the mixed state scaled by 2^-53, in [0, 1).
//   normal:    Box-Muller, cosine branch only; each sample consumes exactly
//              two uniforms (no cached spare, so the stream position is a
//              pure function of the draw count).
//
// A SeededRng is single-owner. Parallel work must use child() streams, never
// a shared instance.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace kdlab {

class SeededRng {
  public:
    explicit SeededRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        // 1 - u1 lies in (0, 1], keeping the log argument positive.
        const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform integer in [0, n). Rejection sampling, unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t v = next_u64();
            if (v >= threshold) return v % n;
        }
    }

    // Independent derived stream k. Distinct k values give statistically
    // independent sequences; the parent stream is not advanced.
    SeededRng child(std::uint64_t k) const {
        SeededRng d(state_ ^ (0xD1B54A32D192ED03ULL * (k + 1)));
        d.next_u64();  // decorrelate from the raw xor
        return SeededRng(d.next_u64());
    }

    std::uint64_t state() const { return state_; }

  private:
    std::uint64_t state_;
};

}  // namespace kdlab
