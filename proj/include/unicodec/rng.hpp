#pragma once

// Deterministic RNG. std::mt19937_64 output is standardized bit-for-bit, but
// the library distributions are not; we derive all variates from the raw
// stream ourselves so runs are reproducible across platforms.

#include <cmath>
#include <cstdint>
#include <random>

namespace unicodec {

class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<uint64_t>(n)); }

    // Box-Muller.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    double gumbel() {
        double u = uniform();
        while (u <= 1e-300) u = uniform();
        return -std::log(-std::log(u));
    }

    // Stream-splitting helper: a child generator keyed by (this stream, tag).
    Rng fork(uint64_t tag) {
        uint64_t s = next_u64();
        return Rng(s ^ (tag * 0x9e3779b97f4a7c15ULL + 0x2545F4914F6CDD1DULL));
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Stateless hash combiner for seed derivation (utterance-level seeding).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

}  // namespace unicodec
