#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace ppfnn {

/// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
/// numbers: as easy as 1, 2, 3").
///
/// The 128-bit counter is split as {block, stream_a, stream_b, stream_c}:
/// the three stream words name an independent sequence and the block word
/// advances within it. Any (seed, stream) pair can therefore be drawn on any
/// thread in any order and still produce the same numbers.
///
/// Stream assignments used by this library (stream_c is a purpose tag):
///   sampling   {sample index, entry * 2 + (0 for P, 1 for Q), 'SMPL'}
///   weights    {layer index, 0, 'INIT'}
///   shuffling  {epoch, 0, 'SHUF'}
class Philox4x32 {
public:
    using result_type = std::uint32_t;

    static constexpr std::uint32_t kSampling = 0x534D504C;  // 'SMPL'
    static constexpr std::uint32_t kInit = 0x494E4954;      // 'INIT'
    static constexpr std::uint32_t kShuffle = 0x53485546;   // 'SHUF'

    explicit Philox4x32(std::uint64_t seed, std::uint32_t stream_a = 0, std::uint32_t stream_b = 0,
                        std::uint32_t stream_c = 0)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          counter_{0, stream_a, stream_b, stream_c} {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (used_ == 4) {
            buffer_ = block(counter_, key_);
            ++counter_[0];
            used_ = 0;
        }
        return buffer_[used_++];
    }

    /// One application of the bijection: ten rounds with key bumps in between.
    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 4> buffer_{};
    int used_ = 4;
};

/// Uniform double in [0, 1) built from 53 random bits.
inline double uniform01(Philox4x32& rng) {
    const std::uint64_t hi = rng() >> 5;  // 27 bits
    const std::uint64_t lo = rng() >> 6;  // 26 bits
    return static_cast<double>((hi << 26) | lo) * 0x1.0p-53;
}

} // namespace ppfnn
