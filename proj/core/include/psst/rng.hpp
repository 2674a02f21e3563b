#pragma once

#include <cstdint>
#include <random>

#include "psst/errors.hpp"

namespace psst {

// Deterministic random stream. All stochastic draws of a run go through one
// instance so trajectories are replayable from the seed alone. Doubles are
// produced from raw 64-bit output instead of std::uniform_real_distribution,
// whose mapping is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : root_seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on the open interval (0, 1).
  double uniform_open() {
    double u = uniform();
    while (u == 0.0) u = uniform();
    return u;
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t uniform_int(std::size_t n) {
    if (n == 0) throw ContractError("uniform_int: n must be positive");
    if (n == 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent derived stream. Depends only on the construction seed and
  // the stream id, never on how many draws this stream has made.
  Rng fork(std::uint64_t stream_id) const {
    return Rng(mix(root_seed_, stream_id));
  }

  std::uint64_t root_seed() const { return root_seed_; }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the pair
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t root_seed_;
  std::mt19937_64 engine_;
};

}  // namespace psst
