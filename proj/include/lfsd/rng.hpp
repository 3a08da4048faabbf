#pragma once

#include "lfsd/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lfsd {

// SplitMix64 finalizer; used to derive independent stream seeds from tags.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(seed);
  for (auto tag : tags) h = mix64(h ^ mix64(tag));
  return h;
}

// A seeded random stream. Streams are never shared between threads; split()
// hands out an independent child stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng split() { return Rng(mix64(engine_())); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  // Uniform integer in [0, n).
  int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }

  Matrix normal(Eigen::Index rows, Eigen::Index cols) {
    Matrix out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal();
    return out;
  }

  Vector normal_vector(Eigen::Index n) { return normal(n, 1); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace lfsd
