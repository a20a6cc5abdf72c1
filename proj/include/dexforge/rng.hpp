// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>

namespace dexforge {

// 64-bit FNV-1a. Used for config hashes and for deriving substream seeds;
// not cryptographic.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t v[2] = {seed, salt};
  return fnv1a(v, sizeof(v));
}

// Deterministic RNG. std::mt19937_64 output is fully specified by the
// standard; the distribution helpers below avoid std::uniform_*_distribution,
// whose sequences are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed), base_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t uniform_index(uint64_t n) {
    if (n == 0) return 0;
    uint64_t mask = n - 1;
    mask |= mask >> 1; mask |= mask >> 2; mask |= mask >> 4;
    mask |= mask >> 8; mask |= mask >> 16; mask |= mask >> 32;
    for (;;) {
      uint64_t v = gen_() & mask;
      if (v < n) return v;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call keeps the stream position predictable.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Rng substream(uint64_t salt) const { return Rng(mix_seed(base_, salt)); }

 private:
  std::mt19937_64 gen_;
  uint64_t base_;
};

}  // namespace dexforge
