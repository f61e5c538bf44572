#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace lasi {

/// Deterministic PRNG (xoshiro256** seeded via splitmix64). Self-contained so
/// that streams are reproducible across platforms and standard libraries;
/// every stochastic operation in the project takes one of these explicitly.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    spare_valid_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Standard normal via Box-Muller with a cached spare.
  double gauss() {
    if (spare_valid_) {
      spare_valid_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // avoid log(0)
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    spare_valid_ = true;
    return r * std::cos(a);
  }

  /// Derived child stream; children with distinct tags are independent.
  Rng fork(uint64_t tag) const {
    uint64_t x = s_[0] ^ rotl(s_[3], 23) ^ (tag * 0x9E3779B97F4A7C15ull);
    return Rng(splitmix_once(x));
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Stable 64-bit hash for deriving per-item seeds (FNV-1a).
  static uint64_t hash_combine(uint64_t seed, std::string_view text, uint64_t extra) {
    uint64_t h = 14695981039346656037ull ^ seed;
    for (const char c : text) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= extra + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    return h;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    return splitmix_once(x);
  }

  static uint64_t splitmix_once(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t s_[4];
  double spare_ = 0.0;
  bool spare_valid_ = false;
};

}  // namespace lasi
