#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ptree {

// splitmix64 mixer (Steele, Lea, Flood phi-based increment). Used to derive
// independent engine seeds from (base_seed, stream_id) so that every tree /
// bootstrap replicate owns its own stream no matter how work is scheduled.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_stream_seed(std::uint64_t base_seed, std::uint64_t stream_id) {
  std::uint64_t s = base_seed;
  std::uint64_t a = splitmix64_next(s);
  s ^= stream_id * 0xda942042e4dd58b5ULL + 0x2545f4914f6cdd1dULL;
  std::uint64_t b = splitmix64_next(s);
  return a ^ (b + 0x9e3779b97f4a7c15ULL);
}

// Deterministic random source. std::mt19937_64 output is pinned by the
// standard; the distributions are hand-rolled below because the std::*
// distribution classes are free to differ between library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t base_seed, std::uint64_t stream_id)
      : engine_(derive_stream_seed(base_seed, stream_id)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection on the top of the 64-bit range.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via the Marsaglia polar method; one spare is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ptree
