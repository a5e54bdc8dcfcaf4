#include "asot/costs.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace asot {

Index band_width(Index n_frames, double radius) {
  if (n_frames <= 1 || radius <= 0.0) return 0;
  const auto w = static_cast<Index>(std::floor(static_cast<double>(n_frames) * radius));
  return std::clamp<Index>(w, 0, n_frames - 1);
}

namespace {

Vector checked_row_norms(const Matrix& m, const char* what) {
  Vector norms = m.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!std::isfinite(norms[i])) {
      throw Error(ErrorCode::kNonFinite,
                  std::string(what) + " row " + std::to_string(i) + " is not finite");
    }
    if (norms[i] == 0.0) {
      throw Error(ErrorCode::kInvalidInput,
                  std::string(what) + " row " + std::to_string(i) + " has zero norm");
    }
  }
  return norms;
}

}  // namespace

Matrix build_kot_cost(const Matrix& frames, const Matrix& actions) {
  if (frames.rows() < 1 || actions.rows() < 1 || frames.cols() < 1) {
    throw Error(ErrorCode::kInvalidInput, "build_kot_cost: empty embeddings");
  }
  if (frames.cols() != actions.cols()) {
    throw Error(ErrorCode::kInvalidInput,
                "build_kot_cost: frame dim " + std::to_string(frames.cols()) +
                    " != action dim " + std::to_string(actions.cols()));
  }
  const Vector fn = checked_row_norms(frames, "frame");
  const Vector an = checked_row_norms(actions, "action");

  Matrix cost = frames * actions.transpose();
  for (Index i = 0; i < cost.rows(); ++i) {
    for (Index j = 0; j < cost.cols(); ++j) {
      // Rounding can push |cos| slightly above 1.
      const double cosine = std::clamp(cost(i, j) / (fn[i] * an[j]), -1.0, 1.0);
      cost(i, j) = 1.0 - cosine;
    }
  }
  return cost;
}

Matrix add_temporal_prior(const Matrix& cost, double rho) {
  if (!(rho >= 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "add_temporal_prior: rho must be >= 0");
  }
  Matrix out = cost;
  if (rho == 0.0) return out;
  const double n = static_cast<double>(cost.rows());
  const double k = static_cast<double>(cost.cols());
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) {
      out(i, j) += rho * std::abs(static_cast<double>(i) / n - static_cast<double>(j) / k);
    }
  }
  return out;
}

void gw_structure_apply(const Matrix& plan, double radius, Matrix& out, Vector& row_sums,
                        Vector& window) {
  const Index n = plan.rows();
  const Index k = plan.cols();
  out.resize(n, k);
  const Index w = band_width(n, radius);
  if (w == 0 || k <= 1) {
    out.setZero();
    return;
  }
  // (T C^a)_{ml} = rowsum_m - T_ml; the band sums it over 1 <= |i - m| <= w.
  row_sums = plan.rowwise().sum();
  window.setZero(k);
  auto add_row = [&](Index m, double sign) {
    for (Index l = 0; l < k; ++l) window[l] += sign * (row_sums[m] - plan(m, l));
  };
  for (Index m = 0; m <= std::min(w, n - 1); ++m) add_row(m, 1.0);

  const double weight = 1.0 / radius;
  for (Index i = 0; i < n; ++i) {
    // window holds rows [i - w, i + w] clipped to the video.
    for (Index l = 0; l < k; ++l) {
      out(i, l) = weight * (window[l] - (row_sums[i] - plan(i, l)));
    }
    if (i + w + 1 < n) add_row(i + w + 1, 1.0);
    if (i - w >= 0) add_row(i - w, -1.0);
  }
}

Matrix gw_structure_apply(const Matrix& plan, double radius) {
  Matrix out;
  Vector row_sums, window;
  gw_structure_apply(plan, radius, out, row_sums, window);
  return out;
}

Matrix logits_to_cost(const Matrix& logits) {
  if (logits.size() == 0) {
    throw Error(ErrorCode::kInvalidInput, "logits_to_cost: empty logits");
  }
  if (!logits.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "logits_to_cost: non-finite logits");
  }
  const double lo = logits.minCoeff();
  const double hi = logits.maxCoeff();
  if (hi == lo) {
    throw Error(ErrorCode::kDegenerateInput, "logits_to_cost: constant logits");
  }
  return (2.0 * (1.0 - (logits.array() - lo) / (hi - lo))).matrix();
}

}  // namespace asot
