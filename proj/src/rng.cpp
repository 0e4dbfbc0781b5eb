#include "oap/rng.hpp"

#include <cmath>

namespace oap {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t hash_str64(std::string_view s) {
  // FNV-1a
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

uint64_t mix64(uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ULL));
}

Rng::Rng(uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

Rng Rng::split(uint64_t tag) const { return Rng(mix64(seed_, tag)); }

Rng Rng::split(std::string_view tag) const {
  return Rng(mix64(seed_, hash_str64(tag)));
}

uint64_t Rng::next_u64() { return eng_(); }

double Rng::uniform() {
  // 53-bit mantissa in [0, 1)
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

float Rng::uniform(float lo, float hi) {
  return lo + static_cast<float>(uniform()) * (hi - lo);
}

int Rng::uniform_int(int n) {
  return n <= 1 ? 0 : static_cast<int>(uniform() * n) % n;
}

double Rng::gaussian() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

void Rng::fill_gaussian(float* dst, int64_t n, float mean, float stddev) {
  for (int64_t i = 0; i < n; ++i)
    dst[i] = mean + stddev * static_cast<float>(gaussian());
}

std::vector<int> Rng::permutation(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = uniform_int(i + 1);
    std::swap(p[i], p[j]);
  }
  return p;
}

}  // namespace oap
