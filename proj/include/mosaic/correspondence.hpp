// Semantic point correspondences between reference grids and a target grid.
//
// Token indices are 0-based row-major flat indices (y * width + x).
// Reference slots are numbered from 1, so slot k covers the global reference
// range starting at the sum of the token counts of slots 1..k-1.

#pragma once

#include "mosaic/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosaic {

struct GridSize {
  Index rows = 0;
  Index cols = 0;

  Index count() const { return rows * cols; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

struct CorrespondencePair {
  Index u = 0;  ///< token in the reference grid
  Index v = 0;  ///< token in the target grid
  friend bool operator==(const CorrespondencePair&, const CorrespondencePair&) = default;
};

struct CorrespondenceSet {
  int slot = 1;  ///< 1-based reference slot
  std::vector<CorrespondencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  friend bool operator==(const CorrespondenceSet&, const CorrespondenceSet&) = default;
};

struct SampleAnnotation {
  GridSize target_grid;
  std::vector<GridSize> ref_grids;
  std::vector<bool> valid_mask;  ///< false marks a padded slot
  std::vector<CorrespondenceSet> sets;

  int slots() const { return static_cast<int>(sets.size()); }
  Index target_token_count() const { return target_grid.count(); }
  std::vector<Index> ref_token_counts() const;
  Index ref_token_total() const;
  /// 1-based slots that are valid and carry at least one pair.
  std::vector<int> effective_slots() const;
  const CorrespondenceSet& set(int slot) const { return sets.at(static_cast<std::size_t>(slot - 1)); }

  friend bool operator==(const SampleAnnotation&, const SampleAnnotation&) = default;
};

struct Collision {
  Index v = 0;
  int first_slot = 0;
  int second_slot = 0;
  friend bool operator==(const Collision&, const Collision&) = default;
};

struct DisjointnessReport {
  std::vector<Collision> collisions;
  bool ok() const { return collisions.empty(); }
};

/// Checks that no target token is claimed by two reference slots. Every
/// repeated claim is reported against the slot that claimed it first.
DisjointnessReport validate_disjointness(const SampleAnnotation& ann);

/// Per-set invariants: slot numbering, index ranges, no repeated v inside a
/// set, empty padded slots, consistent array lengths. Empty when all hold.
std::vector<std::string> set_invariant_violations(const SampleAnnotation& ann);

/// Both per-set invariants and disjointness, as human-readable lines.
std::vector<std::string> annotation_problems(const SampleAnnotation& ann);

class InvalidAnnotation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws InvalidAnnotation naming the first problem.
void require_valid(const SampleAnnotation& ann);

/// Offset of local token `u` of 1-based `slot` in the concatenated reference
/// stream: sum of counts[0..slot-2] + u.
Index global_index(int slot, Index u, std::span<const Index> counts);

/// One dataset record: annotation plus token payloads. Padded slots carry
/// all-zero payloads.
struct Sample {
  std::int64_t id = 0;
  SampleAnnotation annotation;
  Matrix target_tokens;            ///< [N_tgt x feature_dim]
  std::vector<Matrix> ref_tokens;  ///< per slot, [N^(k) x feature_dim]

  Index feature_dim() const { return target_tokens.cols(); }
  /// Structural and bitwise payload equality.
  friend bool operator==(const Sample& a, const Sample& b);
};

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { io, parse, invariant };

  DatasetError(Kind kind, std::size_t line, const std::string& what)
      : std::runtime_error(what), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Record <-> single JSON line. Throws DatasetError(parse) on malformed input.
std::string serialize_sample(const Sample& sample);
Sample parse_sample(const std::string& line, std::size_t line_number);

void save_dataset(const std::filesystem::path& path, std::span<const Sample> samples);

/// Loads and validates every record; the first bad record aborts the load.
std::vector<Sample> load_dataset(const std::filesystem::path& path);

struct RecordProblems {
  std::int64_t id = 0;
  std::size_t line = 0;
  std::vector<std::string> problems;
};

/// Parses every record and collects invariant problems instead of stopping
/// at the first. Parse and I/O failures still throw.
std::vector<RecordProblems> scan_dataset(const std::filesystem::path& path);

}  // namespace mosaic
