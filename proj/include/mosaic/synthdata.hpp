// Synthetic multi-reference worlds with exact correspondences.
//
// Every reference grid holds distinct Gaussian feature vectors. For each
// valid slot, P reference cells are copied (plus Gaussian noise) into P
// target cells drawn from the cells no other slot has claimed, so the
// annotation is disjoint by construction. Unclaimed target cells are
// independent noise.

#pragma once

#include "mosaic/correspondence.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mosaic {

struct SynthConfig {
  GridSize target_grid{8, 8};
  int slots = 3;  ///< K
  GridSize ref_grid{4, 4};
  Index points_per_ref = 4;  ///< P
  Index feature_dim = 8;
  double noise_sigma = 0.05;
  /// Fewest valid slots per sample; the count is drawn uniformly from
  /// [min_valid_slots, slots] and the remaining trailing slots are padded.
  int min_valid_slots = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sample `index` of the stream defined by cfg.seed. Independent of every
/// other index.
Sample generate_sample(const SynthConfig& cfg, std::uint64_t index);

std::vector<Sample> generate_samples(const SynthConfig& cfg, std::size_t count);

/// Writes `count` samples in the dataset format and returns them.
std::vector<Sample> generate_dataset(const SynthConfig& cfg, std::size_t count, const std::filesystem::path& path);

}  // namespace mosaic
