#pragma once

#include <map>
#include <string>
#include <vector>

#include "asot/segmentation.hpp"
#include "asot/types.hpp"

namespace asot {

/// Minimum-cost injective assignment. Returns, for each row, the matched
/// column or -1 when the row is left unmatched (only possible when there
/// are more rows than columns). Among optimal matchings the one that is
/// lexicographically smallest over the smaller side is returned.
std::vector<int> hungarian(const Matrix& cost);

/// Total cost of a row->column assignment as returned by hungarian().
double assignment_cost(const Matrix& cost, const std::vector<int>& row_to_col);

enum class MatchMode { kPerVideo, kFullDataset };

struct EvalResult {
  double mof = 0.0;
  double f1 = 0.0;
  double miou = 0.0;
  std::map<int, int> matching;  // predicted cluster -> ground-truth action
};

struct EvalReport {
  EvalResult aggregate;
  std::vector<EvalResult> per_video;  // filled in per-video mode only
};

/// Matches predicted clusters to ground-truth actions by maximal overlap and
/// scores the mapped predictions. In per-video mode the aggregate MoF pools
/// frames over videos while F1 and mIoU are averaged over videos.
EvalReport evaluate(const std::vector<Segmentation>& pred,
                    const std::vector<std::vector<int>>& gt, MatchMode mode);

/// Segment-level F1 where a ground-truth segment counts as recalled when more
/// than half of its frames are predicted correctly, and a predicted segment
/// counts as precise when more than half of its frames carry its label in
/// the ground truth. Labels must already share one id space.
double f1_segment(const Segmentation& pred, const Segmentation& gt);

/// 1 - Levenshtein(segment labels) / max(#segments). Higher is better.
double edit_distance(const Segmentation& pred, const Segmentation& gt);

/// Overlap F1 with greedy temporal-order matching and strict IoU > tau.
double f1_at_tau(const Segmentation& pred, const Segmentation& gt, double tau);

std::string to_json(const EvalReport& report);

}  // namespace asot
