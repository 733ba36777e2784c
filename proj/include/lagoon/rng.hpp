#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace lagoon {

// Deterministic random source. All draws go through explicit helpers built on
// the raw 64-bit output of mt19937_64 so that runs are bit-reproducible across
// standard libraries (std distributions are not portable).
class Rng {
public:
  explicit Rng(std::uint64_t seed)
      : seed_(seed), gen_(mix(seed + 0x9e3779b97f4a7c15ull)) {}

  std::uint64_t next() { return gen_(); }

  // Uniform in [0, n). n must be > 0. Modulo bias is below 2^-50 for any n
  // that fits a scheduling problem and is the same on every platform.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  // Uniform in [0, 1) with 53 bits of precision.
  double real01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  // Derive an independent stream, e.g. one per particle or per repetition.
  Rng split(std::uint64_t salt) const { return Rng(seed_ ^ mix(salt + 0x51ed2701c23c41ull)); }

  std::uint64_t seed() const { return seed_; }

private:
  // splitmix64 finalizer; spreads poor seeds before feeding mt19937_64.
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace lagoon
