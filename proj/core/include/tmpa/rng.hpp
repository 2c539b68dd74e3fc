#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tmpa {

// SplitMix64 step; used to derive independent seeds from (seed, tag...) so
// every stage of the pipeline gets its own reproducible stream.
uint64_t splitmix64(uint64_t x);

uint64_t hash_string(std::string_view s);  // FNV-1a

// Fold extra tags into a base seed. Order-sensitive.
uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags);
uint64_t derive_seed(uint64_t base, std::string_view tag);

// Deterministic RNG. Wraps mt19937_64 but implements its own distributions
// so that streams are identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0,1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Uniform integer in [0, n). Rejection sampling for exact uniformity.
  int uniform_int(int n);

  bool bernoulli(double p) { return uniform01() < p; }

  // Standard normal via Box-Muller (pair cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace tmpa
