#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace tme {

namespace detail {

/// Philox-4x32-10 keyed counter block cipher; the standard constants.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
               static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
               static_cast<std::uint32_t>(p0)};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

inline double u64_to_open_unit(std::uint64_t x) {
    // (0, 1) strictly, 53-bit resolution
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Reproducible random stream addressed by (root seed, stream index). Draws
/// are a pure function of (seed, stream, draw counter), so distinct streams
/// can run in parallel and any schedule reproduces the same numbers.
class SeededStream {
    std::array<std::uint32_t, 2> key_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;

public:
    SeededStream(std::uint64_t root_seed, std::uint64_t stream_index)
        : key_{static_cast<std::uint32_t>(root_seed),
               static_cast<std::uint32_t>(root_seed >> 32)},
          stream_(stream_index) {}

    /// Two independent uniforms in (0, 1) from one counter block.
    std::array<double, 2> uniform_pair() {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32),
            static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32)};
        ++counter_;
        auto block = detail::philox4x32(ctr, key_);
        const std::uint64_t a =
            (static_cast<std::uint64_t>(block[0]) << 32) | block[1];
        const std::uint64_t b =
            (static_cast<std::uint64_t>(block[2]) << 32) | block[3];
        return {detail::u64_to_open_unit(a), detail::u64_to_open_unit(b)};
    }

    double uniform() { return uniform_pair()[0]; }

    /// Standard normal via Box-Muller on one uniform pair (second value cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        auto u = uniform_pair();
        const double r = std::sqrt(-2.0 * std::log(u[0]));
        const double angle = 2.0 * M_PI * u[1];
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    std::uint64_t stream_index() const { return stream_; }
};

}  // namespace tme
