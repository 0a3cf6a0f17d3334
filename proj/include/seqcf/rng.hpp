#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace seqcf {

// Counter-based random stream. A draw is a pure function of
// (seed, stream, a, b, c), so results do not depend on the order in which
// draws are requested. The mixer is SplitMix64's finalizer applied to a
// running combination of the key words.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

  constexpr std::uint64_t seed() const noexcept { return seed_; }

  constexpr std::uint64_t bits(std::uint64_t stream, std::uint64_t a,
                               std::uint64_t b = 0,
                               std::uint64_t c = 0) const noexcept {
    std::uint64_t h = mix(seed_ ^ 0x6a09e667f3bcc908ULL);
    h = mix(h ^ (stream + 0x9e3779b97f4a7c15ULL));
    h = mix(h ^ (a + 0xbb67ae8584caa73bULL));
    h = mix(h ^ (b + 0x3c6ef372fe94f82bULL));
    h = mix(h ^ (c + 0xa54ff53a5f1d36f1ULL));
    return h;
  }

  // Uniform in the open interval (0, 1).
  double uniform(std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0,
                 std::uint64_t c = 0) const noexcept {
    return (static_cast<double>(bits(stream, a, b, c) >> 11) + 0.5) *
           0x1.0p-53;
  }

  // Standard Gumbel variate, used for ranking-based selection.
  double gumbel(std::uint64_t stream, std::uint64_t a, std::uint64_t b = 0,
                std::uint64_t c = 0) const noexcept {
    return -std::log(-std::log(uniform(stream, a, b, c)));
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
};

// 64-bit FNV-1a, used to derive stable keys from identifiers and bytes.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace seqcf
