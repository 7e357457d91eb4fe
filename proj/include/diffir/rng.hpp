#pragma once

#include <cstdint>
#include <random>

#include "diffir/tensor.hpp"

namespace diffir {

// Deterministic RNG. mt19937_64 gives a portable bit stream; the uniform and
// normal transforms are implemented here (std:: distributions are
// implementation-defined and would break cross-platform reproducibility).
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range, rejection-free modulo bias is irrelevant at desk scale
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo + 1);
        return lo + static_cast<int64_t>(gen_() % span);
    }

    // standard normal via Box-Muller, spare value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log() is finite
        double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Tensor normal_tensor(std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = normal();
        return t;
    }

    Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = uniform(lo, hi);
        return t;
    }

    // Derive an independent stream, e.g. one per sample or per worker.
    Rng fork(uint64_t stream) const { return Rng(derive(seed_, stream)); }

    static uint64_t derive(uint64_t seed, uint64_t stream) {
        return splitmix(seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
    }

  private:
    static uint64_t splitmix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace diffir
