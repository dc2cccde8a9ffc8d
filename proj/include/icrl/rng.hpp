#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace icrl {

// xoshiro256** with splitmix64 seeding. Every piece of randomness in the
// project flows through this generator so that runs are bit-reproducible
// across platforms and standard libraries. Streams derived via derive()
// depend only on the root seed and the stream id, never on how much the
// parent has been consumed.
class Rng {
  public:
    explicit Rng(uint64_t seed) : root_seed_(seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
    }

    uint64_t root_seed() const { return root_seed_; }

    // Independent stream keyed by (root seed, stream id).
    Rng derive(uint64_t stream) const {
        uint64_t x = root_seed_ ^ (0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL);
        return Rng(splitmix64(x));
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
    uint64_t uniform_int(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller, spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform01();
        const double v = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 6.283185307179586 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double exponential() { return -std::log(1.0 - uniform01()); }

    // Index draw from unnormalized non-negative weights.
    size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) {
            total += w;
        }
        const double r = uniform01() * total;
        double cum = 0.0;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            cum += weights[i];
            if (r < cum) {
                return i;
            }
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t root_seed_;
    uint64_t state_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace icrl
