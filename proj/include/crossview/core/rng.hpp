#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "crossview/core/tensor.hpp"

namespace crossview {

/// Seeded generator wrapper. One global stream drives parameter init;
/// data generation derives independent per-sample streams so that sample
/// content depends only on (seed, index), not on generation order.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  void seed(uint64_t s) { engine_.seed(s); }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  int64_t integer(int64_t lo, int64_t hi) {  // inclusive range
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

  Tensor uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  Tensor normal_tensor(std::vector<int> shape, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = normal(mean, stddev);
    return t;
  }

 private:
  std::mt19937_64 engine_;
};

inline Rng& global_rng() {
  static Rng rng(0);
  return rng;
}

/// Reseeds every random source in the library.
inline void seed_all(uint64_t seed) { global_rng().seed(seed); }

/// Stable 64-bit mix for deriving per-sample seeds from (seed, index).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a * 0x9E3779B97F4A7C15ull + b + 0x6A09E667F3BCC909ull;
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

}  // namespace crossview
