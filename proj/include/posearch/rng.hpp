#pragma once

#include <cmath>
#include <cstdint>

namespace posearch {

// splitmix64 finalizer; bijective on 64-bit words.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based generator: the i-th output is a pure function of (seed, i),
// so streams can be split and replayed deterministically on any platform.
class Rng {
public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  // Derives an independent substream; tags keep purposes separated.
  Rng fork(uint64_t tag) const { return Rng(mix64(seed_ ^ mix64(tag))); }

  uint64_t next() { return mix64(seed_ + ++counter_ * 0x9e3779b97f4a7c15ull); }

  // Uniform in [0, n); n must be nonzero. Modulo bias is negligible for the
  // small ranges used here.
  uint64_t below(uint64_t n) { return next() % n; }

  // Uniform in (0, 1].
  double uniform01() { return double((next() >> 11) + 1) * 0x1.0p-53; }

  // Exponential with the given rate (events per unit).
  double exponential(double rate) { return -std::log(uniform01()) / rate; }

  uint64_t state() const { return seed_ + counter_; }

private:
  uint64_t seed_;
  uint64_t counter_ = 0;
};

}  // namespace posearch
