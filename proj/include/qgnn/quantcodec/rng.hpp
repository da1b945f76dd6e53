#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace qgnn {

// Counter-based generator. A draw is a pure function of (key, counter), so any
// party that derives the same stream coordinates reproduces the same values
// regardless of call order elsewhere. fork() hashes extra coordinates into the
// key; use one fork per logical site (epoch, layer, message, ...).
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ull)) {}

  RngStream fork(uint64_t coord) const {
    RngStream s(*this);
    s.key_ = mix(s.key_ ^ mix(coord + 0x9e3779b97f4a7c15ull));
    s.counter_ = 0;
    return s;
  }

  RngStream fork(std::initializer_list<uint64_t> coords) const {
    RngStream s(*this);
    for (uint64_t c : coords) s = s.fork(c);
    return s;
  }

  uint64_t next_u64() { return mix(key_ + ++counter_ * 0x9e3779b97f4a7c15ull); }

  // Uniform in [0, 1), 53-bit mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in {0, ..., n-1} by rejection; n must be positive.
  uint64_t next_below(uint64_t n) {
    const uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Standard normal via Box-Muller.
  double next_gaussian() {
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace qgnn
