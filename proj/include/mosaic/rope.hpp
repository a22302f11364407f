// Axial 2D rotary position embedding with a per-branch frequency base.

#pragma once

#include "mosaic/correspondence.hpp"
#include "mosaic/tensor.hpp"

#include <vector>

namespace mosaic {

enum class Branch { target, text, reference };

struct GridPosition {
  Index row = 0;
  Index col = 0;
};

/// Frequency bases per token stream. Reference slot k (1-based) uses
/// theta_reference * reference_growth^k, so every slot gets its own base.
struct RopeConfig {
  Index head_dim = 8;
  double theta_target = 10000.0;
  double theta_text = 10000.0;
  double theta_reference = 10000.0;
  double reference_growth = 1.5;

  double theta(Branch branch, int slot = 0) const;
};

/// Row-major positions of every cell of a grid.
std::vector<GridPosition> grid_positions(GridSize grid);

/// Rotates every head of every token. Within a head of width D, the first D/2
/// components are rotated by the row coordinate and the rest by the column;
/// pair p of an axis turns at theta^(-4p/D) radians per cell.
Var rope_apply(const Var& tokens, const std::vector<GridPosition>& positions, Index head_dim, double theta);

Var rope_apply(const Var& tokens, const std::vector<GridPosition>& positions, const RopeConfig& config, Branch branch,
               int slot = 0);

}  // namespace mosaic
