#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <vector>

namespace xtra {

inline std::uint64_t splitmix64_next(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256**. State is exactly 32 bytes, which is what checkpoints store.
class Rng {
 public:
  static constexpr std::uint32_t kAlgorithmId = 1;  // xoshiro256**

  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64_next(x);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform index in [0, n); Lemire multiply-shift, deterministic.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  std::array<std::uint8_t, 32> state_bytes() const {
    std::array<std::uint8_t, 32> out{};
    std::memcpy(out.data(), state_.data(), 32);
    return out;
  }

  void set_state_bytes(const std::array<std::uint8_t, 32>& bytes) {
    std::memcpy(state_.data(), bytes.data(), 32);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

// Derives an independent stream from a base seed and a tag path. Used so
// per-step randomness (batch augmentation, drop path) does not depend on how
// much of any other stream has been consumed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t tag_a,
                      std::uint64_t tag_b = 0, std::uint64_t tag_c = 0) {
  std::uint64_t x = seed;
  std::uint64_t h = splitmix64_next(x);
  x ^= tag_a + 0x9e3779b97f4a7c15ull;
  h ^= splitmix64_next(x);
  x ^= tag_b + 0xd1b54a32d192ed03ull;
  h ^= splitmix64_next(x);
  x ^= tag_c + 0x8cb92ba72f3d8dd7ull;
  h ^= splitmix64_next(x);
  return Rng(h);
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.index(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace xtra
