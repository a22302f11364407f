#include "mosaic/rope.hpp"

#include <cmath>
#include <string>

namespace mosaic {

double RopeConfig::theta(Branch branch, int slot) const {
  switch (branch) {
    case Branch::target:
      return theta_target;
    case Branch::text:
      return theta_text;
    case Branch::reference:
      return theta_reference * std::pow(reference_growth, slot);
  }
  return theta_target;
}

std::vector<GridPosition> grid_positions(GridSize grid) {
  std::vector<GridPosition> out;
  out.reserve(static_cast<std::size_t>(grid.count()));
  for (Index r = 0; r < grid.rows; ++r) {
    for (Index c = 0; c < grid.cols; ++c) out.push_back({r, c});
  }
  return out;
}

Var rope_apply(const Var& tokens, const std::vector<GridPosition>& positions, Index head_dim, double theta) {
  if (head_dim <= 0 || head_dim % 4 != 0) {
    throw ConfigError("rope: head dimension " + std::to_string(head_dim) + " is not a positive multiple of 4");
  }
  if (tokens.cols() % head_dim != 0) {
    throw ConfigError("rope: width " + std::to_string(tokens.cols()) + " is not a multiple of head dimension " +
                      std::to_string(head_dim));
  }
  if (!(theta > 0)) throw ConfigError("rope: frequency base must be positive");
  if (static_cast<Index>(positions.size()) != tokens.rows()) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(tokens.rows()) +
                     " tokens");
  }
  const Index pairs_per_axis = head_dim / 4;
  const Index pairs = tokens.cols() / 2;
  Matrix cos(tokens.rows(), pairs), sin(tokens.rows(), pairs);
  for (Index t = 0; t < tokens.rows(); ++t) {
    for (Index q = 0; q < pairs; ++q) {
      const Index in_head = q % (head_dim / 2);
      const bool row_axis = in_head < pairs_per_axis;
      const Index p = row_axis ? in_head : in_head - pairs_per_axis;
      const double freq = std::pow(theta, -4.0 * static_cast<double>(p) / static_cast<double>(head_dim));
      const auto& pos = positions[static_cast<std::size_t>(t)];
      const double angle = static_cast<double>(row_axis ? pos.row : pos.col) * freq;
      cos(t, q) = std::cos(angle);
      sin(t, q) = std::sin(angle);
    }
  }
  return rotate_pairs(tokens, std::move(cos), std::move(sin));
}

Var rope_apply(const Var& tokens, const std::vector<GridPosition>& positions, const RopeConfig& config, Branch branch,
               int slot) {
  return rope_apply(tokens, positions, config.head_dim, config.theta(branch, slot));
}

}  // namespace mosaic
