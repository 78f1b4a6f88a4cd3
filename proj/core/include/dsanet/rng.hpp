#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dsanet {

// All randomness in the library flows from one root seed through the PRNG
// below, so every run is reproducible from its seed alone.
//
//   engine   : std::mt19937_64 (bit-exact output sequence per the standard)
//   substream: splitmix64 applied to (seed, stream id) derives independent
//              engine seeds for parallel or per-trial streams
//   uniform  : (next() >> 11) * 2^-53            -> [0, 1)
//   normal   : Box-Muller on two uniforms, cosine branch only
//   index    : 128-bit multiply-shift of next() by the bound

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives a seed for a named substream of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x5851f42d4c957f2dull));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // (0, 1] for the log argument
    double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double z = std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    return mean + stddev * z;
  }

  // Uniform index in [0, n)
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dsanet
