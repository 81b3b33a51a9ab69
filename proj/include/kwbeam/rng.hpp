// rng.hpp
// Seeded random numbers with fully specified output. std::mt19937_64 is
// pinned by the standard, but the std distributions are not, so uniform,
// normal and shuffle are derived here explicitly. Identical seeds must give
// identical streams on any platform; several module contracts (model init,
// training shuffles, scene builds) hang off that guarantee.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace kwbeam {

// splitmix64, used to derive independent child seeds from (seed, index).
inline std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; draws two uniforms per sample, cosine branch only
    double normal(double mean, double stddev) {
        double u1 = uniform();
        double u2 = uniform();
        // u1 == 0 would take log(0); nudge to the smallest representable draw
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // unbiased integer in [0, n), rejection sampled on a power-of-two mask
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = ~std::uint64_t{0} >> __builtin_clzll(n - 1);
        std::uint64_t v;
        do {
            v = gen_() & mask;
        } while (v >= n);
        return v;
    }

    // Fisher-Yates with the explicit bounded draw above
    template <typename T>
    void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace kwbeam
