#include "mosaic/synthdata.hpp"

#include "mosaic/random.hpp"

#include <string>

namespace mosaic {

void SynthConfig::validate() const {
  if (target_grid.rows <= 0 || target_grid.cols <= 0 || ref_grid.rows <= 0 || ref_grid.cols <= 0) {
    throw ConfigError("synth: grid sizes must be positive");
  }
  if (slots < 1) throw ConfigError("synth: need at least one reference slot");
  if (points_per_ref < 1) throw ConfigError("synth: points_per_ref must be at least 1");
  if (feature_dim < 1) throw ConfigError("synth: feature_dim must be at least 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be nonnegative");
  if (min_valid_slots < 1 || min_valid_slots > slots) {
    throw ConfigError("synth: min_valid_slots must lie in [1, slots]");
  }
  if (static_cast<Index>(slots) * points_per_ref > target_grid.count()) {
    throw ConfigError("synth: K*P = " + std::to_string(static_cast<Index>(slots) * points_per_ref) +
                      " exceeds target cells H*W = " + std::to_string(target_grid.count()) +
                      " (disjoint placement impossible)");
  }
  if (ref_grid.count() < points_per_ref) {
    throw ConfigError("synth: reference grid h*w = " + std::to_string(ref_grid.count()) + " is smaller than P = " +
                      std::to_string(points_per_ref));
  }
}

Sample generate_sample(const SynthConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng(cfg.seed, index);
  const Index n_tgt = cfg.target_grid.count();
  const Index n_ref = cfg.ref_grid.count();
  const Index d = cfg.feature_dim;

  const int valid = cfg.min_valid_slots +
                    static_cast<int>(rng.uniform_index(static_cast<Index>(cfg.slots - cfg.min_valid_slots) + 1));

  Sample s;
  s.id = static_cast<std::int64_t>(index);
  auto& ann = s.annotation;
  ann.target_grid = cfg.target_grid;
  s.target_tokens = rng.normal_matrix(n_tgt, d);

  // One permutation of target cells; slot k takes the next P unclaimed ones.
  const std::vector<Index> target_order = rng.sample_without_replacement(n_tgt, static_cast<Index>(valid) * cfg.points_per_ref);
  std::size_t next = 0;
  for (int k = 1; k <= cfg.slots; ++k) {
    ann.ref_grids.push_back(cfg.ref_grid);
    CorrespondenceSet set;
    set.slot = k;
    if (k > valid) {
      ann.valid_mask.push_back(false);
      s.ref_tokens.push_back(Matrix::Zero(n_ref, d));
      ann.sets.push_back(std::move(set));
      continue;
    }
    ann.valid_mask.push_back(true);
    Matrix ref = rng.normal_matrix(n_ref, d);
    const std::vector<Index> us = rng.sample_without_replacement(n_ref, cfg.points_per_ref);
    for (Index u : us) {
      const Index v = target_order[next++];
      s.target_tokens.row(v) = ref.row(u);
      if (cfg.noise_sigma > 0.0) s.target_tokens.row(v) += rng.normal_matrix(1, d, cfg.noise_sigma);
      set.pairs.push_back({u, v});
    }
    s.ref_tokens.push_back(std::move(ref));
    ann.sets.push_back(std::move(set));
  }
  return s;
}

std::vector<Sample> generate_samples(const SynthConfig& cfg, std::size_t count) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

std::vector<Sample> generate_dataset(const SynthConfig& cfg, std::size_t count, const std::filesystem::path& path) {
  std::vector<Sample> samples = generate_samples(cfg, count);
  save_dataset(path, samples);
  return samples;
}

}  // namespace mosaic
