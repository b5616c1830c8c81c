// Platform-independent 64-bit PRNG (splitmix64) and the distributions built on
// it. Outputs are identical on every platform and compiler.
#pragma once

#include <cstdint>
#include <vector>

namespace mambadet {

// Finalizer of splitmix64; also used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t z);

class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}
  // Stream keyed by (seed, stream); distinct streams do not overlap in practice.
  Rng(std::uint64_t seed, std::uint64_t stream)
      : state_(mix64(seed ^ mix64(stream + kGolden))) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (one draw per call, the pair's sine half is discarded).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

}  // namespace mambadet
