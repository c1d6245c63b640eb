#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace tra {

// Deterministic counter-based generator (splitmix64 over an incrementing
// counter). The n-th draw depends only on (seed, n), so sequences are
// identical across platforms and the full state is two 64-bit words, which
// keeps checkpoints trivial. derive() hashes a tag into a fresh independent
// stream; that is how the trainer gives every consumer (init, shuffling,
// gumbel noise, ...) its own stream without any draw-order coupling.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  static SeededRng restore(std::uint64_t seed, std::uint64_t counter) {
    SeededRng rng(seed);
    rng.counter_ = counter;
    return rng;
  }

  std::uint64_t next_u64() {
    return mix(seed_ + (++counter_) * kGolden);
  }

  // Uniform draw in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform draw clamped to [eps, 1-eps]; safe under log(-log(z)).
  double uniform_open() {
    constexpr double eps = std::numeric_limits<double>::epsilon();
    double z = uniform();
    if (z < eps) return eps;
    if (z > 1.0 - eps) return 1.0 - eps;
    return z;
  }

  // Box-Muller without a cached spare so the draw count stays predictable.
  double gaussian() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Independent stream keyed by an integer tag.
  SeededRng derive(std::uint64_t tag) const {
    return SeededRng(mix(seed_ ^ mix(tag + kGolden)));
  }

  // Independent stream keyed by a label, e.g. derive("shuffle").
  SeededRng derive(std::string_view tag) const {
    return derive(fnv1a(tag));
  }

  SeededRng derive(std::string_view tag, std::uint64_t a) const {
    return derive(tag).derive(a);
  }

  SeededRng derive(std::string_view tag, std::uint64_t a, std::uint64_t b) const {
    return derive(tag).derive(a).derive(b);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace tra
