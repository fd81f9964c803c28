#pragma once

#include <cmath>
#include <cstdint>

namespace ulm {

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Counter-based deterministic generator (splitmix64 stream). Cheap to fork,
// no sequential warm-up, bit-identical sequences for identical seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Box-Muller, cosine branch only; two uniforms per draw keeps the stream
  // position independent of call history.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  // Knuth multiplication method; fine for the small rates used here.
  int poisson(double lambda) {
    if (lambda <= 0) return 0;
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

 private:
  std::uint64_t state_;
};

// Reproducibility contract: child seed = mix64(master ^ (0x9E3779B97F4A7C15 * (stream_id + 1))).
// Identical (master_seed, stream_id) always yields the identical substream; substreams
// can be created in any order.
struct SeedSpec {
  std::uint64_t master_seed = 0x1ceb00daULL;

  std::uint64_t child_seed(std::uint64_t stream_id) const {
    return mix64(master_seed ^ (0x9E3779B97F4A7C15ull * (stream_id + 1)));
  }

  Rng stream(std::uint64_t stream_id) const { return Rng(child_seed(stream_id)); }
};

}  // namespace ulm
