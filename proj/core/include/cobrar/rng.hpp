#pragma once

#include <cstdint>
#include <vector>

namespace cobrar {

// xoshiro256** seeded through splitmix64. Self-contained so that shuffles,
// sampling and weight init produce the same streams on every platform and
// stdlib version (std::uniform_int_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  // Independent stream derived from (seed, tag, a, b). Used to give each
  // user/epoch/pair its own generator without coupling draw counts.
  static Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
    std::uint64_t z = seed;
    z = mix(z ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
    z = mix(z ^ (0xbf58476d1ce4e5b9ULL * (a + 1)));
    z = mix(z ^ (0x94d049bb133111ebULL * (b + 1)));
    return Rng(z);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, n). Multiply-shift; bias is O(n / 2^64).
  std::uint64_t uniform_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform_real();
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  void reseed(std::uint64_t seed) {
    std::uint64_t z = seed;
    for (auto& s : s_) {
      z = mix(z);
      s = z;
    }
  }

  std::uint64_t s_[4];
};

// Stream tags keep the derived generators of unrelated pipeline stages apart.
namespace rng_tag {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t shuffle = 3;
inline constexpr std::uint64_t batch = 4;
inline constexpr std::uint64_t synth = 5;
}  // namespace rng_tag

}  // namespace cobrar
