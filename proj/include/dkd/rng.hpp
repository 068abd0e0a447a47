#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dkd {

// Deterministic random source. All draws reduce to raw std::mt19937_64
// outputs so that sequences can be replayed independently in tests:
//   next()   -> engine()
//   below(n) -> engine() % n
//   real()   -> (engine() >> 11) * 2^-53, uniform in [0,1)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    double real() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double real(double lo, double hi) { return lo + (hi - lo) * real(); }

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

// Named sub-seed: one top-level seed fans out into independent streams for
// data generation, teacher training, student training and mask sampling.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    if (v.size() < 2) return;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
        std::swap(v[i], v[j]);
    }
}

} // namespace dkd
