#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace oap {

// Deterministic random stream. Every stream is derived from a root seed by
// hierarchical splitting; nothing in the library touches ambient entropy.
// split() derives from the construction seed, not the engine state, so a
// child stream is independent of how many draws the parent has made.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t seed() const { return seed_; }
  Rng split(uint64_t tag) const;
  Rng split(std::string_view tag) const;

  uint64_t next_u64();
  // uniform in [0, 1)
  double uniform();
  float uniform(float lo, float hi);
  // uniform integer in [0, n)
  int uniform_int(int n);
  // standard normal via Box-Muller (two uniforms per draw, no cached spare)
  double gaussian();
  void fill_gaussian(float* dst, int64_t n, float mean, float stddev);
  std::vector<int> permutation(int n);

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

uint64_t hash_str64(std::string_view s);
uint64_t mix64(uint64_t a, uint64_t b);

}  // namespace oap
