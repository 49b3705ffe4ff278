#pragma once

#include <cstdint>
#include <limits>

namespace xspod {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

/// Derives an independent child seed from (parent, index).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index)
{
    return mix64(mix64(parent ^ 0x6a09e667f3bcc909ULL) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

/// Counter-based random stream. The stream for photon i of a run is fully
/// determined by (seed, i), so tallies do not depend on how photon index
/// ranges are split across workers. Satisfies UniformRandomBitGenerator.
class PhotonStream {
public:
    using result_type = std::uint64_t;

    PhotonStream(std::uint64_t seed, std::uint64_t index)
        : state_(derive_seed(seed, index))
    {
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1]; safe as a log argument.
    double uniform_open0() { return 1.0 - uniform(); }

private:
    std::uint64_t state_;
};

} // namespace xspod
