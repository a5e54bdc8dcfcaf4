#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <vector>

#include "asot/costs.hpp"
#include "asot/types.hpp"

namespace asot {

/// Hyperparameters of the fused unbalanced GW problem and its mirror-descent
/// solver. Member defaults are the inference settings.
struct SolverConfig {
  double alpha = 0.6;      // weight of the GW structure term
  double lambda = 0.01;    // KL penalty on the column marginal
  double epsilon = 0.04;   // entropy weight
  double radius = 0.04;    // temporal band radius r
  std::optional<double> step_size;  // mirror-descent step phi; unset means 1/max(epsilon, lambda)
  int n_iter = 25;
  double stop_tol = 0.0;   // early stop on max-abs plan change; 0 disables
  bool halve_on_increase = true;

  /// Pseudo-labelling settings used while training the encoder.
  static SolverConfig training();
  /// Inference settings (the member defaults).
  static SolverConfig inference();

  // At 1/epsilon the entropy term is absorbed in one step; 1/lambda keeps
  // large marginal penalties from oscillating.
  double effective_step() const { return step_size.value_or(1.0 / std::max(epsilon, lambda)); }

  /// Throws kInvalidInput when a field is out of range.
  void validate() const;
};

struct TransportPlan {
  Matrix plan;
  Vector row_marginal;
  Vector col_target;
};

struct SolveReport {
  std::vector<double> objective_trace;  // objective after each update
  int n_iter_run = 0;
  bool converged = false;
  int clip_events = 0;
  double final_step_size = 0.0;
  double last_change = 0.0;
};

struct SolveResult {
  TransportPlan plan;
  SolveReport report;
};

/// Called after every projected update with the iteration index and the plan.
using IterationObserver = std::function<void(int, const Matrix&)>;

double objective(const CostSet& costs, const TransportPlan& plan, const SolverConfig& cfg);

/// Gradient of the objective with respect to the plan entries.
Matrix gradient(const CostSet& costs, const TransportPlan& plan, const SolverConfig& cfg);

/// Projected mirror descent from the product coupling p q^T with uniform
/// marginals p = 1/N, q = 1/K.
SolveResult solve(const Matrix& kot_cost, const SolverConfig& cfg,
                  const IterationObserver& observer = {});

/// As above with explicit marginals. p and q must be positive; p need not
/// sum to one.
SolveResult solve(const Matrix& kot_cost, const SolverConfig& cfg, const Vector& p,
                  const Vector& q, const IterationObserver& observer = {});

/// Independent solves, results in input order. `threads` = 0 picks the
/// hardware concurrency; results are identical for every thread count.
std::vector<SolveResult> solve_batch(const std::vector<Matrix>& costs,
                                     const SolverConfig& cfg, unsigned threads = 1);

TransportPlan uniform_plan(Index n_frames, Index n_actions);

}  // namespace asot
