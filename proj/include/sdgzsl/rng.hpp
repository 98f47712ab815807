#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sdgzsl {

// Deterministic PRNG: xoshiro256** seeded through splitmix64.
//
// Streams are named: Rng(seed, "noise"), Rng(seed, "permute"), ... derive
// independent generators from one master seed, so each consumer (noise,
// dropout masks, batch shuffling, permutations, init) advances its own
// cursor and stays reproducible no matter what the others do.
//
// Gaussian samples use the Box-Muller transform without caching the second
// deviate, so the full generator state is exactly the four 64-bit words.
class Rng {
public:
    Rng() = default;
    Rng(std::uint64_t seed, std::string_view stream);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit mantissa.
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Unbiased integer in [0, n), n >= 1 (bitmask rejection).
    std::uint64_t uniform_below(std::uint64_t n);
    // Standard normal via Box-Muller.
    double normal();

    // Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<std::size_t> permutation(std::size_t n);

    // State round-trip for checkpointing.
    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

private:
    std::array<std::uint64_t, 4> s_{1, 2, 3, 4};
};

// The named streams one training/evaluation run draws from.
struct RngSuite {
    Rng init;    // parameter initialization
    Rng noise;   // reparameterization and synthesis draws
    Rng permute; // batch-index permutations
    Rng dropout; // dropout masks
    Rng shuffle; // epoch shuffling

    explicit RngSuite(std::uint64_t seed)
        : init(seed, "init"),
          noise(seed, "noise"),
          permute(seed, "permute"),
          dropout(seed, "dropout"),
          shuffle(seed, "shuffle") {}
};

} // namespace sdgzsl
