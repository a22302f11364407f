// Portable pseudo-random source. Only the raw mt19937_64 stream and
// std::seed_seq are used, both fully specified by the standard, so draws are
// identical across standard libraries.

#pragma once

#include "mosaic/tensor.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace mosaic {

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform on {0, ..., n-1}, unbiased.
  Index uniform_index(Index n);
  /// k distinct values from {0, ..., n-1} in draw order (partial Fisher-Yates).
  std::vector<Index> sample_without_replacement(Index n, Index k);
  Matrix normal_matrix(Index rows, Index cols, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mosaic
