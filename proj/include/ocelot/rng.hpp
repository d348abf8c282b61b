#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace ocelot {

// mt19937_64-backed generator. The standard distributions are
// implementation-defined, so draws are hand-rolled to make seeded outputs
// identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // inclusive bounds, rejection-sampled to avoid modulo bias
    int uniform_int(int lo, int hi) {
        const std::uint64_t n = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return lo + static_cast<int>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[i], v[uniform_int(0, i)]);
        }
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace ocelot
