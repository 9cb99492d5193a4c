#pragma once

#include <cstdint>
#include <random>

namespace bvib {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream id); results do not depend on the order
// in which streams are created.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  Rng r = make_rng(seed, stream);
  return r();
}

// Uniform draw strictly inside (0, 1).
inline double uniform_open01(Rng& rng) {
  // 53 random bits, offset by half an ulp so 0 and 1 never occur.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return u + 0x1.0p-54;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace bvib
