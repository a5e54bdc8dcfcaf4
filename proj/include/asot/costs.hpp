#pragma once

#include "asot/types.hpp"

namespace asot {

/// The cost triple consumed by the solver. Only the KOT cost is stored; the
/// frame-structure cost (banded, weight 1/r) and the action-structure cost
/// (one minus identity) are applied implicitly by gw_structure_apply.
struct CostSet {
  Matrix kot_cost;
  double band_radius = 0.04;

  Index n_frames() const { return kot_cost.rows(); }
  Index n_actions() const { return kot_cost.cols(); }
};

/// Half-width of the temporal band, floor(N * r) clamped to N - 1.
Index band_width(Index n_frames, double radius);

/// C_ij = 1 - cos(x_i, a_j). Rows of `frames` are N frame embeddings, rows of
/// `actions` are K action embeddings of the same dimension.
Matrix build_kot_cost(const Matrix& frames, const Matrix& actions);

/// C_ij + rho * |i/N - j/K| with 0-based indices.
Matrix add_temporal_prior(const Matrix& cost, double rho);

/// Computes C^v T C^a in O(N K) without materializing either structure cost.
Matrix gw_structure_apply(const Matrix& plan, double radius);

/// Same product written into `out`; `row_sums` and `window` are scratch.
void gw_structure_apply(const Matrix& plan, double radius, Matrix& out, Vector& row_sums,
                        Vector& window);

/// Min-max maps logits to costs in [0, 2]; the largest logit becomes 0.
/// Throws kDegenerateInput when all logits are equal.
Matrix logits_to_cost(const Matrix& logits);

}  // namespace asot
