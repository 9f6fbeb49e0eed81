#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wsss/tensor.hpp"

namespace wsss {

// Seeded RNG with hand-rolled distributions so that a given seed produces
// the same stream on every standard library implementation. The engine
// state round-trips through strings for checkpointing.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds, rejection-free modulo with 64-bit draw
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Independent child stream; mixes the label in splitmix64 style.
    static uint64_t derive_seed(uint64_t seed, uint64_t stream)  {
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::string state_string() const;
    void restore_state(const std::string& s);

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

Tensor rand_uniform(Rng& rng, std::vector<int> shape, double lo, double hi);
Tensor rand_normal(Rng& rng, std::vector<int> shape, double stddev);

// Fisher-Yates with the deterministic uniform_int above.
void shuffle_indices(std::vector<int>& v, Rng& rng);

}  // namespace wsss
