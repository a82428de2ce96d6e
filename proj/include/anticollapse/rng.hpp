#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace anticollapse {

/// Reproducible random stream.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. All derived draws (uniform doubles, bounded integers, Box-Muller
/// normals, shuffles) are implemented here rather than through <random>
/// distributions, which are implementation-defined.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound). Unbiased via rejection.
    std::uint64_t uniform_index(std::uint64_t bound);

    /// Standard normal via the Box-Muller transform; draws come in pairs.
    double normal();

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// Child stream whose seed is a mix of this seed and `stream`.
    static SeededRng derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace anticollapse
