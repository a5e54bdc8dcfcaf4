#include "asot/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>

namespace asot {

namespace {

constexpr double kMarginalFloor = 1e-30;
constexpr double kExponentClip = 50.0;
constexpr double kIncreaseTol = 1e-12;

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// Objective given a precomputed structure product M = C^v T C^a.
double objective_with(const Matrix& kot_cost, const Matrix& structure, const Matrix& plan,
                      const Vector& col_target, const SolverConfig& cfg) {
  double value = (1.0 - cfg.alpha) * kot_cost.cwiseProduct(plan).sum();
  if (cfg.alpha > 0.0) value += cfg.alpha * structure.cwiseProduct(plan).sum();
  if (cfg.lambda > 0.0) {
    const Vector mass = plan.colwise().sum().transpose();
    double kl = 0.0;
    for (Index j = 0; j < mass.size(); ++j) {
      if (mass[j] > 0.0) kl += mass[j] * std::log(mass[j] / col_target[j]);
    }
    value += cfg.lambda * kl;
  }
  double neg_entropy = 0.0;
  for (Index i = 0; i < plan.size(); ++i) neg_entropy += xlogx(plan.data()[i]);
  return value + cfg.epsilon * neg_entropy;
}

// Column-marginal part of the gradient: lambda * (log(m / q) + 1).
Vector marginal_gradient(const Matrix& plan, const Vector& col_target, double lambda) {
  Vector g = Vector::Zero(plan.cols());
  if (lambda == 0.0) return g;
  const Vector mass = plan.colwise().sum().transpose();
  for (Index j = 0; j < g.size(); ++j) {
    g[j] = lambda * (std::log(std::max(mass[j], kMarginalFloor) / col_target[j]) + 1.0);
  }
  return g;
}

void check_plan_shapes(const CostSet& costs, const TransportPlan& plan) {
  if (plan.plan.rows() != costs.kot_cost.rows() || plan.plan.cols() != costs.kot_cost.cols() ||
      plan.col_target.size() != plan.plan.cols()) {
    throw Error(ErrorCode::kInvalidInput, "plan and cost shapes disagree");
  }
}

}  // namespace

SolverConfig SolverConfig::training() {
  SolverConfig cfg;
  cfg.alpha = 0.3;
  cfg.lambda = 0.16;
  cfg.epsilon = 0.07;
  return cfg;
}

SolverConfig SolverConfig::inference() { return SolverConfig{}; }

void SolverConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidInput, msg); };
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail("epsilon must be > 0");
  if (!(radius >= 0.0 && radius <= 1.0)) fail("radius must lie in [0, 1]");
  if (step_size && (!(*step_size > 0.0) || !std::isfinite(*step_size))) fail("step_size must be > 0");
  if (n_iter < 1) fail("n_iter must be >= 1");
  if (!(stop_tol >= 0.0)) fail("stop_tol must be >= 0");
}

TransportPlan uniform_plan(Index n_frames, Index n_actions) {
  TransportPlan t;
  t.row_marginal = Vector::Constant(n_frames, 1.0 / static_cast<double>(n_frames));
  t.col_target = Vector::Constant(n_actions, 1.0 / static_cast<double>(n_actions));
  t.plan = t.row_marginal * t.col_target.transpose();
  return t;
}

double objective(const CostSet& costs, const TransportPlan& plan, const SolverConfig& cfg) {
  check_plan_shapes(costs, plan);
  Matrix structure;
  if (cfg.alpha > 0.0) structure = gw_structure_apply(plan.plan, costs.band_radius);
  return objective_with(costs.kot_cost, structure, plan.plan, plan.col_target, cfg);
}

Matrix gradient(const CostSet& costs, const TransportPlan& plan, const SolverConfig& cfg) {
  check_plan_shapes(costs, plan);
  Matrix g = (1.0 - cfg.alpha) * costs.kot_cost;
  if (cfg.alpha > 0.0) g += 2.0 * cfg.alpha * gw_structure_apply(plan.plan, costs.band_radius);
  g.rowwise() += marginal_gradient(plan.plan, plan.col_target, cfg.lambda).transpose();
  g.array() += cfg.epsilon * (plan.plan.array().log() + 1.0);
  return g;
}

SolveResult solve(const Matrix& kot_cost, const SolverConfig& cfg,
                  const IterationObserver& observer) {
  const Index n = kot_cost.rows();
  const Index k = kot_cost.cols();
  return solve(kot_cost, cfg, Vector::Constant(n, 1.0 / static_cast<double>(std::max<Index>(n, 1))),
               Vector::Constant(k, 1.0 / static_cast<double>(std::max<Index>(k, 1))), observer);
}

SolveResult solve(const Matrix& kot_cost, const SolverConfig& cfg, const Vector& p,
                  const Vector& q, const IterationObserver& observer) {
  cfg.validate();
  const Index n = kot_cost.rows();
  const Index k = kot_cost.cols();
  if (n < 1 || k < 1) throw Error(ErrorCode::kInvalidInput, "solve: empty cost matrix");
  if (p.size() != n || q.size() != k) {
    throw Error(ErrorCode::kInvalidInput, "solve: marginal sizes do not match the cost");
  }
  if (!kot_cost.allFinite()) throw Error(ErrorCode::kNonFinite, "solve: non-finite cost");
  if (kot_cost.minCoeff() < 0.0) throw Error(ErrorCode::kInvalidInput, "solve: negative cost");
  if (p.minCoeff() <= 0.0 || q.minCoeff() <= 0.0) {
    throw Error(ErrorCode::kInvalidInput, "solve: marginals must be positive");
  }

  const Vector log_p = p.array().log();
  Matrix plan = p * q.transpose();
  Matrix log_plan = plan.array().log();

  SolveResult result;
  SolveReport& report = result.report;
  report.objective_trace.reserve(static_cast<std::size_t>(cfg.n_iter));

  const bool use_gw = cfg.alpha > 0.0 && band_width(n, cfg.radius) > 0 && k > 1;
  Matrix structure = Matrix::Zero(n, k);
  Vector row_sums, window;
  if (use_gw) gw_structure_apply(plan, cfg.radius, structure, row_sums, window);

  const double gw_grad = 2.0 * cfg.alpha;
  const double kot_weight = 1.0 - cfg.alpha;
  Vector col_mass = plan.colwise().sum().transpose();

  // Objective of the current plan; also refreshes col_mass.
  auto current_objective = [&] {
    double linear = 0.0, neg_entropy = 0.0;
    col_mass.setZero();
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < k; ++j) {
        const double t = plan(i, j);
        linear += t * (kot_weight * kot_cost(i, j) + cfg.alpha * structure(i, j));
        neg_entropy += t > 0.0 ? t * log_plan(i, j) : 0.0;
        col_mass[j] += t;
      }
    }
    double kl = 0.0;
    for (Index j = 0; j < k; ++j) {
      if (col_mass[j] > 0.0) kl += col_mass[j] * std::log(col_mass[j] / q[j]);
    }
    return linear + cfg.lambda * kl + cfg.epsilon * neg_entropy;
  };

  double step = cfg.effective_step();
  double previous = current_objective();
  int consecutive_increases = 0;

  Vector col_grad(k);
  Eigen::RowVectorXd row_buf(k), exp_buf(k);
  for (int it = 0; it < cfg.n_iter; ++it) {
    for (Index j = 0; j < k; ++j) {
      col_grad[j] = cfg.lambda == 0.0
                        ? 0.0
                        : cfg.lambda * (std::log(std::max(col_mass[j], kMarginalFloor) / q[j]) + 1.0);
    }

    double change = 0.0;
    for (Index i = 0; i < n; ++i) {
      // Constant row offsets cancel in the projection, so the exponent is
      // shifted to a row maximum of zero before clipping.
      double row_min = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < k; ++j) {
        const double g = kot_weight * kot_cost(i, j) + gw_grad * structure(i, j) + col_grad[j] +
                         cfg.epsilon * (log_plan(i, j) + 1.0);
        row_buf[j] = g;
        row_min = std::min(row_min, g);
      }
      double top = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < k; ++j) {
        double e = -step * (row_buf[j] - row_min);
        if (e < -kExponentClip) {
          e = -kExponentClip;
          ++report.clip_events;
        }
        row_buf[j] = log_plan(i, j) + e;
        top = std::max(top, row_buf[j]);
      }
      // Row projection: T_ij = p_i exp(x_ij) / sum_l exp(x_il).
      double acc = 0.0;
      for (Index j = 0; j < k; ++j) {
        row_buf[j] -= top;
        exp_buf[j] = std::exp(row_buf[j]);
        acc += exp_buf[j];
      }
      if (!std::isfinite(acc)) {
        throw Error(ErrorCode::kNumericalFailure,
                    "solve: non-finite plan at iteration " + std::to_string(it));
      }
      const double scale = p[i] / acc;
      const double log_scale = log_p[i] - std::log(acc);
      for (Index j = 0; j < k; ++j) {
        const double t = exp_buf[j] * scale;
        change = std::max(change, std::abs(t - plan(i, j)));
        log_plan(i, j) = row_buf[j] + log_scale;
        plan(i, j) = t;
      }
    }
    if (!std::isfinite(change)) {
      throw Error(ErrorCode::kNumericalFailure,
                  "solve: non-finite plan at iteration " + std::to_string(it));
    }

    if (use_gw) gw_structure_apply(plan, cfg.radius, structure, row_sums, window);
    const double current = current_objective();
    report.objective_trace.push_back(current);
    report.n_iter_run = it + 1;
    report.last_change = change;
    if (observer) observer(it, plan);

    if (cfg.halve_on_increase) {
      // Round-off wiggles near convergence are not increases.
      const bool increased = current - previous > kIncreaseTol * std::max(1.0, std::abs(previous));
      consecutive_increases = increased ? consecutive_increases + 1 : 0;
      if (consecutive_increases >= 2) {
        step *= 0.5;
        consecutive_increases = 0;
      }
    }
    previous = current;

    if (cfg.stop_tol > 0.0 && change < cfg.stop_tol) {
      report.converged = true;
      break;
    }
  }
  report.final_step_size = step;
  result.plan.plan = std::move(plan);
  result.plan.row_marginal = p;
  result.plan.col_target = q;
  return result;
}

std::vector<SolveResult> solve_batch(const std::vector<Matrix>& costs, const SolverConfig& cfg,
                                     unsigned threads) {
  std::vector<SolveResult> results(costs.size());
  if (costs.empty()) return results;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(costs.size()));

  std::vector<std::exception_ptr> errors(costs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < costs.size(); i = next++) {
      try {
        results[i] = solve(costs[i], cfg);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "batch item " + std::to_string(i) + ": " + e.what());
    }
  }
  return results;
}

}  // namespace asot
