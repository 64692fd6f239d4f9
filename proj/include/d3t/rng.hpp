#pragma once

#include <cmath>
#include <cstdint>

#include "d3t/tensor.hpp"

namespace d3t {

/// SplitMix64 generator with Box-Muller normals. Self-contained so that streams
/// are reproducible byte-for-byte across standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Uniform integer in [0, n).
    long uniform_int(long n) { return static_cast<long>(next() % static_cast<uint64_t>(n)); }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586477 * u2;
        spare_ = static_cast<float>(r * std::sin(a));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t h = 0x9e3779b97f4a7c15ull ^ a;
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h ^= b + 0x632be59bd9b4e019ull + (h << 6) + (h >> 2);
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        return h ^ (h >> 31);
    }

    /// Independent child stream; forking does not advance this generator.
    Rng fork(uint64_t stream) const { return Rng(mix(state_, stream)); }

private:
    uint64_t state_;
    bool have_spare_ = false;
    float spare_ = 0.f;
};

inline Tensor randn(std::vector<int> shape, Rng rng, float stdev = 1.f) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal() * stdev;
    return t;
}

} // namespace d3t
