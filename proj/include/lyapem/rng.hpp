#pragma once

// Self-contained deterministic random numbers. All randomness in the project
// flows from one root seed through child_seed(); there is no global RNG
// state, so permuting trial order cannot change any per-trial stream.

#include <cstdint>
#include <cmath>
#include <numbers>
#include <vector>

namespace lyapem {

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (root, stream, index). Used as a
// splittable counter scheme: stream enumerates experiment arms, index
// enumerates draws within an arm.
inline std::uint64_t child_seed(std::uint64_t root, std::uint64_t stream,
                                std::uint64_t index) {
  std::uint64_t z = mix64(root + 0x9E3779B97F4A7C15ull);
  z = mix64(z ^ (stream + 0xD1B54A32D192ED03ull));
  z = mix64(z ^ (index + 0x8CB92BA72F3D8DD7ull));
  return z;
}

// SplitMix64 sequence generator. Small state, full 64-bit period per seed,
// and identical output on every platform (unlike std::normal_distribution).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix64(state_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
  // so the stream position is a pure function of the draw count.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  std::vector<double> normal_vector(std::size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = normal();
    return out;
  }

 private:
  std::uint64_t state_;
};

}  // namespace lyapem
