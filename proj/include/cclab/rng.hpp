#pragma once

#include <cstdint>
#include <random>

namespace cclab::detail {

/// Uniform double in [0,1) built from the top 53 bits of the engine output.
/// std::uniform_real_distribution is implementation-defined, which would break
/// the byte-identical-output guarantee of seeded runs; this mapping is not.
inline double unit_real(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * unit_real(rng);
}

}  // namespace cclab::detail
