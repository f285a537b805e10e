#pragma once

// Seeded substreams. Every random draw in the library comes from a generator
// keyed by (master seed, key...), so results never depend on execution order.

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace splitboot {

using Seed = std::uint64_t;

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Mix a seed with a sequence of keys into a new, well-separated seed.
inline constexpr Seed derive_seed(Seed seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t state = seed;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t k : keys) {
        state = out ^ (k + 0x632be59bd9b4e019ULL);
        out = splitmix64(state);
    }
    return out;
}

// xoshiro256** (Blackman & Vigna). Satisfies UniformRandomBitGenerator, so it
// plugs into the <random> distributions.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256(Seed seed = 0) noexcept { reseed(seed); }

    void reseed(Seed seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = std::rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t s_[4]{};
};

inline Xoshiro256 substream(Seed seed, std::initializer_list<std::uint64_t> keys) noexcept {
    return Xoshiro256(derive_seed(seed, keys));
}

}  // namespace splitboot
