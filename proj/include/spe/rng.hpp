#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spe/common.hpp"

namespace spe {

// xoshiro256** with splitmix64 seeding. All distributions are implemented
// here rather than via <random> so that seeded runs produce the same streams
// on every platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix(x);
  }

  uint64_t next() {
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

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  uint64_t uniform_int(uint64_t n) {
    check(n > 0, "uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Named substream: a child generator whose seed mixes this generator's
  // seed material with a tag. Lets each pipeline stage own its stream.
  Rng derive(const std::string& tag) const {
    uint64_t h = fnv1a(tag);
    h ^= s_[0] + 0x9e3779b97f4a7c15ull;
    return Rng(h);
  }

  Rng derive(const std::string& tag, uint64_t index) const {
    uint64_t h = fnv1a(tag);
    h ^= index * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull;
    h ^= s_[0] + 0x9e3779b97f4a7c15ull;
    return Rng(h);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t s_[4];
};

}  // namespace spe
