#pragma once

// Independent reference computations used only by tests. Nothing here calls
// the implementation paths it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "asot/types.hpp"

namespace asot::oracle {

/// Dense frame-structure cost: 1/r when 1 <= |i-k| <= N r, else 0.
inline Matrix dense_frame_cost(Index n, double r) {
  Matrix cv = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < n; ++k) {
      const double gap = std::abs(static_cast<double>(i - k));
      if (gap >= 1.0 && gap <= static_cast<double>(n) * r) cv(i, k) = 1.0 / r;
    }
  }
  return cv;
}

/// Dense action-structure cost: 0 on the diagonal, 1 elsewhere.
inline Matrix dense_action_cost(Index k) {
  return Matrix::Ones(k, k) - Matrix::Identity(k, k);
}

/// The quadruple sum sum_{i,k,j,l} Cv_ik Ca_jl T_ij T_kl, evaluated literally.
inline double gw_quadruple_sum(const Matrix& t, double r) {
  const Matrix cv = dense_frame_cost(t.rows(), r);
  const Matrix ca = dense_action_cost(t.cols());
  double total = 0.0;
  for (Index i = 0; i < t.rows(); ++i)
    for (Index k = 0; k < t.rows(); ++k) {
      if (cv(i, k) == 0.0) continue;
      for (Index j = 0; j < t.cols(); ++j)
        for (Index l = 0; l < t.cols(); ++l) total += cv(i, k) * ca(j, l) * t(i, j) * t(k, l);
    }
  return total;
}

/// Term-by-term objective: alpha GW + (1-alpha) KOT + lambda KL + eps sum T log T.
inline double dense_objective(const Matrix& ck, const Matrix& t, const Vector& q, double alpha,
                              double lambda, double eps, double r) {
  double kot = 0.0, ent = 0.0;
  for (Index i = 0; i < t.rows(); ++i)
    for (Index j = 0; j < t.cols(); ++j) {
      kot += ck(i, j) * t(i, j);
      if (t(i, j) > 0.0) ent += t(i, j) * std::log(t(i, j));
    }
  double kl = 0.0;
  for (Index j = 0; j < t.cols(); ++j) {
    double m = 0.0;
    for (Index i = 0; i < t.rows(); ++i) m += t(i, j);
    if (m > 0.0) kl += m * std::log(m / q[j]);
  }
  return alpha * gw_quadruple_sum(t, r) + (1.0 - alpha) * kot + lambda * kl + eps * ent;
}

/// Central finite-difference gradient of f over every entry of x.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                 double h) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Index e = 0; e < x.size(); ++e) {
    const double orig = probe.data()[e];
    probe.data()[e] = orig + h;
    const double up = f(probe);
    probe.data()[e] = orig - h;
    const double down = f(probe);
    probe.data()[e] = orig;
    g.data()[e] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Minimum total cost over all injective maps of the smaller side into the
/// larger, by enumerating permutations.
inline double brute_force_assignment(const Matrix& cost) {
  const bool rows_small = cost.rows() <= cost.cols();
  const Index small = rows_small ? cost.rows() : cost.cols();
  const Index large = rows_small ? cost.cols() : cost.rows();
  std::vector<Index> perm(static_cast<std::size_t>(large));
  std::iota(perm.begin(), perm.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Index s = 0; s < small; ++s) {
      total += rows_small ? cost(s, perm[static_cast<std::size_t>(s)]) : cost(perm[static_cast<std::size_t>(s)], s);
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// p_i * softmax_j(-C_ij / eps): the fixed point of the entropic row problem.
inline Matrix entropic_row_softmax(const Matrix& c, double eps) {
  Matrix out(c.rows(), c.cols());
  const double p = 1.0 / static_cast<double>(c.rows());
  for (Index i = 0; i < c.rows(); ++i) {
    const double lo = c.row(i).minCoeff();
    double z = 0.0;
    for (Index j = 0; j < c.cols(); ++j) z += std::exp(-(c(i, j) - lo) / eps);
    for (Index j = 0; j < c.cols(); ++j) out(i, j) = p * std::exp(-(c(i, j) - lo) / eps) / z;
  }
  return out;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index e = 0; e < m.size(); ++e) m.data()[e] = u(rng);
  return m;
}

/// Random strictly positive plan with rows summing to 1/N.
inline Matrix random_plan(Index n, Index k, std::mt19937_64& rng) {
  Matrix t = random_matrix(n, k, rng, 0.1, 1.0);
  for (Index i = 0; i < n; ++i) t.row(i) /= t.row(i).sum() * static_cast<double>(n);
  return t;
}

/// Per-frame accuracy against labels sharing the same id space.
inline double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) ok += pred[i] == gt[i];
  return gt.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(gt.size());
}

}  // namespace asot::oracle
