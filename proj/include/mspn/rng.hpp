#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mspn {

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic random source. Distribution mapping is done by hand so that
// streams are byte-identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both ends inclusive.
  int uniform_int(int lo, int hi) {
    return lo + int(next_below(uint64_t(hi) - uint64_t(lo) + 1));
  }

  // Standard normal, Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Independent stream derived from this rng's seed and a salt. Children do
  // not depend on how far the parent stream has advanced.
  Rng child(uint64_t salt) const { return Rng(splitmix64(seed_ ^ splitmix64(salt))); }
  Rng child(std::string_view tag) const { return child(fnv1a64(tag)); }

  uint64_t seed() const { return seed_; }

 private:
  // Unbiased uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    uint64_t rem = (~uint64_t{0} % n + 1) % n;  // 2^64 mod n
    uint64_t limit = ~uint64_t{0} - rem;        // accept x <= limit
    uint64_t x = gen_();
    while (x > limit) x = gen_();
    return x % n;
  }

  uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mspn
