#include "asot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace asot {

namespace {

// Shortest augmenting path assignment for rows <= cols. Rows listed in
// `rows`, columns in `cols`; returns the optimal total and fills row -> col
// positions (indices into `cols`).
double assign_rows(const Matrix& cost, const std::vector<Index>& rows,
                   const std::vector<Index>& cols, std::vector<int>* out) {
  const std::size_t n = rows.size();
  const std::size_t m = cols.size();
  if (n == 0) {
    if (out) out->clear();
    return 0.0;
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  std::vector<int> assignment(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) {
      assignment[owner[j] - 1] = static_cast<int>(j - 1);
      total += cost(rows[owner[j] - 1], cols[j - 1]);
    }
  }
  if (out) *out = std::move(assignment);
  return total;
}

// rows <= cols. Lexicographically smallest optimal assignment by fixing rows
// in order to the first column that keeps the optimum reachable.
std::vector<int> lexicographic_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  std::vector<Index> free_rows(static_cast<std::size_t>(n)), free_cols(static_cast<std::size_t>(m));
  std::iota(free_rows.begin(), free_rows.end(), Index{0});
  std::iota(free_cols.begin(), free_cols.end(), Index{0});

  const double optimum = assign_rows(cost, free_rows, free_cols, nullptr);
  const double tol = 1e-9 * (1.0 + std::abs(optimum));

  std::vector<int> result(static_cast<std::size_t>(n), -1);
  double fixed_cost = 0.0;
  for (Index i = 0; i < n; ++i) {
    free_rows.erase(free_rows.begin());
    bool placed = false;
    for (std::size_t c = 0; c < free_cols.size(); ++c) {
      std::vector<Index> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(c));
      const double candidate = fixed_cost + cost(i, free_cols[c]) +
                               assign_rows(cost, free_rows, rest_cols, nullptr);
      if (candidate <= optimum + tol) {
        result[static_cast<std::size_t>(i)] = static_cast<int>(free_cols[c]);
        fixed_cost += cost(i, free_cols[c]);
        free_cols = std::move(rest_cols);
        placed = true;
        break;
      }
    }
    if (!placed) throw Error(ErrorCode::kInternal, "hungarian: lost the optimum");
  }
  return result;
}

struct SegmentCounts {
  std::size_t gt_segments = 0;
  std::size_t gt_hits = 0;
  std::size_t pred_segments = 0;
  std::size_t pred_hits = 0;

  SegmentCounts& operator+=(const SegmentCounts& o) {
    gt_segments += o.gt_segments;
    gt_hits += o.gt_hits;
    pred_segments += o.pred_segments;
    pred_hits += o.pred_hits;
    return *this;
  }

  double f1() const {
    if (gt_segments == 0 || pred_segments == 0) return 0.0;
    const double recall = static_cast<double>(gt_hits) / static_cast<double>(gt_segments);
    const double precision = static_cast<double>(pred_hits) / static_cast<double>(pred_segments);
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
};

// Segments of `a` whose frames agree with `b` on more than half their length.
std::size_t majority_hits(const Segmentation& a, const Segmentation& b) {
  std::size_t hits = 0;
  for (const auto& seg : a.segments()) {
    Index agree = 0;
    for (Index f = seg.start; f < seg.end(); ++f) {
      if (b.labels()[static_cast<std::size_t>(f)] == seg.action) ++agree;
    }
    if (2 * agree > seg.length) ++hits;
  }
  return hits;
}

SegmentCounts segment_counts(const Segmentation& pred, const Segmentation& gt) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::kInvalidInput, "f1_segment: length mismatch");
  }
  return {gt.segments().size(), majority_hits(gt, pred), pred.segments().size(),
          majority_hits(pred, gt)};
}

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

Index position(const std::vector<int>& ids, int id) {
  return std::lower_bound(ids.begin(), ids.end(), id) - ids.begin();
}

struct Unit {
  std::vector<const std::vector<int>*> pred;
  std::vector<const std::vector<int>*> gt;
};

// Scores one evaluation unit (a video, or every video pooled).
EvalResult score_unit(const Unit& unit, SegmentCounts* counts_out) {
  std::vector<int> pred_all, gt_all;
  for (std::size_t v = 0; v < unit.pred.size(); ++v) {
    pred_all.insert(pred_all.end(), unit.pred[v]->begin(), unit.pred[v]->end());
    gt_all.insert(gt_all.end(), unit.gt[v]->begin(), unit.gt[v]->end());
  }
  const std::vector<int> clusters = sorted_unique(pred_all);
  const std::vector<int> actions = sorted_unique(gt_all);

  EvalResult r;
  if (gt_all.empty()) return r;

  Matrix overlap = Matrix::Zero(static_cast<Index>(clusters.size()), static_cast<Index>(actions.size()));
  for (std::size_t f = 0; f < pred_all.size(); ++f) {
    overlap(position(clusters, pred_all[f]), position(actions, gt_all[f])) += 1.0;
  }
  const std::vector<int> match = hungarian(-overlap);

  double correct = 0.0;
  std::vector<int> mapped_id(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (match[c] >= 0) {
      r.matching[clusters[c]] = actions[static_cast<std::size_t>(match[c])];
      correct += overlap(static_cast<Index>(c), match[c]);
      mapped_id[c] = actions[static_cast<std::size_t>(match[c])];
    } else {
      // Unmatched clusters get ids that no ground-truth label can take.
      mapped_id[c] = std::numeric_limits<int>::min() + static_cast<int>(c);
    }
  }
  r.mof = correct / static_cast<double>(gt_all.size());

  const Vector cluster_sizes = overlap.rowwise().sum();
  const Vector action_sizes = overlap.colwise().sum().transpose();
  double iou_sum = 0.0;
  for (std::size_t a = 0; a < actions.size(); ++a) {
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      if (match[c] == static_cast<int>(a)) {
        const double inter = overlap(static_cast<Index>(c), static_cast<Index>(a));
        iou_sum += inter / (cluster_sizes[static_cast<Index>(c)] + action_sizes[static_cast<Index>(a)] - inter);
      }
    }
  }
  r.miou = iou_sum / static_cast<double>(actions.size());

  SegmentCounts counts;
  for (std::size_t v = 0; v < unit.pred.size(); ++v) {
    std::vector<int> mapped(unit.pred[v]->size());
    for (std::size_t f = 0; f < mapped.size(); ++f) {
      mapped[f] = mapped_id[static_cast<std::size_t>(position(clusters, (*unit.pred[v])[f]))];
    }
    counts += segment_counts(Segmentation(std::move(mapped)), Segmentation(*unit.gt[v]));
  }
  r.f1 = counts.f1();
  if (counts_out) *counts_out = counts;
  return r;
}

}  // namespace

std::vector<int> hungarian(const Matrix& cost) {
  if (!cost.allFinite()) throw Error(ErrorCode::kNonFinite, "hungarian: non-finite cost");
  if (cost.rows() == 0 || cost.cols() == 0) return std::vector<int>(static_cast<std::size_t>(cost.rows()), -1);
  if (cost.rows() <= cost.cols()) return lexicographic_assignment(cost);

  const Matrix transposed = cost.transpose();
  const std::vector<int> col_to_row = lexicographic_assignment(transposed);
  std::vector<int> row_to_col(static_cast<std::size_t>(cost.rows()), -1);
  for (std::size_t c = 0; c < col_to_row.size(); ++c) {
    row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
  }
  return row_to_col;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& row_to_col) {
  double total = 0.0;
  for (std::size_t i = 0; i < row_to_col.size(); ++i) {
    if (row_to_col[i] >= 0) total += cost(static_cast<Index>(i), row_to_col[i]);
  }
  return total;
}

EvalReport evaluate(const std::vector<Segmentation>& pred, const std::vector<std::vector<int>>& gt,
                    MatchMode mode) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::kInvalidInput, "evaluate: " + std::to_string(pred.size()) +
                                              " predictions for " + std::to_string(gt.size()) +
                                              " ground-truth videos");
  }
  for (std::size_t v = 0; v < pred.size(); ++v) {
    if (pred[v].labels().size() != gt[v].size()) {
      throw Error(ErrorCode::kInvalidInput,
                  "evaluate: video " + std::to_string(v) + " has " +
                      std::to_string(pred[v].labels().size()) + " predicted frames but " +
                      std::to_string(gt[v].size()) + " ground-truth frames");
    }
  }

  EvalReport report;
  if (mode == MatchMode::kFullDataset) {
    Unit unit;
    for (std::size_t v = 0; v < pred.size(); ++v) {
      unit.pred.push_back(&pred[v].labels());
      unit.gt.push_back(&gt[v]);
    }
    report.aggregate = score_unit(unit, nullptr);
    return report;
  }

  double correct = 0.0, frames = 0.0;
  for (std::size_t v = 0; v < pred.size(); ++v) {
    Unit unit{{&pred[v].labels()}, {&gt[v]}};
    report.per_video.push_back(score_unit(unit, nullptr));
    const auto& r = report.per_video.back();
    correct += r.mof * static_cast<double>(gt[v].size());
    frames += static_cast<double>(gt[v].size());
    report.aggregate.f1 += r.f1;
    report.aggregate.miou += r.miou;
  }
  if (!pred.empty()) {
    report.aggregate.mof = frames > 0.0 ? correct / frames : 0.0;
    report.aggregate.f1 /= static_cast<double>(pred.size());
    report.aggregate.miou /= static_cast<double>(pred.size());
  }
  return report;
}

double f1_segment(const Segmentation& pred, const Segmentation& gt) {
  return segment_counts(pred, gt).f1();
}

double edit_distance(const Segmentation& pred, const Segmentation& gt) {
  const auto& a = pred.segments();
  const auto& b = gt.segments();
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1].action == b[j - 1].action ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return 1.0 - static_cast<double>(prev[b.size()]) / static_cast<double>(longest);
}

double f1_at_tau(const Segmentation& pred, const Segmentation& gt, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::kInvalidInput, "f1_at_tau: tau must lie in (0, 1)");
  const auto& gs = gt.segments();
  std::vector<char> hit(gs.size(), 0);
  std::size_t tp = 0, fp = 0;
  for (const auto& p : pred.segments()) {
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t g = 0; g < gs.size(); ++g) {
      if (gs[g].action != p.action) continue;
      const Index inter = std::max<Index>(0, std::min(p.end(), gs[g].end()) - std::max(p.start, gs[g].start));
      const Index uni = std::max(p.end(), gs[g].end()) - std::min(p.start, gs[g].start);
      const double iou = static_cast<double>(inter) / static_cast<double>(uni);
      if (iou > best) {
        best = iou;
        best_idx = g;
      }
    }
    if (best > tau && !hit[best_idx]) {
      ++tp;
      hit[best_idx] = 1;
    } else {
      ++fp;
    }
  }
  const std::size_t fn = gs.size() - tp;
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

nlohmann::json result_json(const EvalResult& r) {
  nlohmann::json matching = nlohmann::json::object();
  for (const auto& [cluster, action] : r.matching) matching[std::to_string(cluster)] = action;
  return {{"mof", r.mof}, {"f1", r.f1}, {"miou", r.miou}, {"matching", matching}};
}

}  // namespace

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["aggregate"] = result_json(report.aggregate);
  if (!report.per_video.empty()) {
    j["per_video"] = nlohmann::json::array();
    for (const auto& r : report.per_video) j["per_video"].push_back(result_json(r));
  }
  return j.dump(2);
}

}  // namespace asot
