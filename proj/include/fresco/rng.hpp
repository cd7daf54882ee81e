#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "fresco/tensor.hpp"

namespace fresco {

// Counter-based generator: every draw is a pure function of (seed, stream,
// counter), so noise tensors do not depend on draw order or thread layout.
// The mixing function is SplitMix64's finalizer.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ULL))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix(key_ + (counter + 1) * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in the open interval (0, 1).
  double uniform(std::uint64_t counter) const noexcept {
    return (double(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller over counters 2k and 2k+1.
  double normal(std::uint64_t k) const noexcept {
    const std::uint64_t pair = k >> 1;
    const double u1 = uniform(2 * pair);
    const double u2 = uniform(2 * pair + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return (k & 1) ? r * std::sin(a) : r * std::cos(a);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

// Standard normal tensor drawn in canonical layout order.
inline LatentTensor gaussian_noise(const Shape& shape, std::uint64_t seed,
                                   std::uint64_t stream = 0) {
  const CounterRng rng(seed, stream);
  LatentTensor x(shape);
  auto d = x.data();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = float(rng.normal(k));
  return x;
}

}  // namespace fresco
