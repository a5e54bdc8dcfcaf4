#pragma once

#include <string>
#include <vector>

#include "asot/solver.hpp"
#include "asot/types.hpp"

namespace asot {

struct Segment {
  int action = 0;
  Index start = 0;
  Index length = 0;

  Index end() const { return start + length; }
  bool operator==(const Segment&) const = default;
};

/// Per-frame labels together with their run-length encoding.
class Segmentation {
 public:
  Segmentation() = default;
  explicit Segmentation(std::vector<int> labels);

  static Segmentation from_segments(const std::vector<Segment>& segments);

  const std::vector<int>& labels() const { return labels_; }
  const std::vector<Segment>& segments() const { return segments_; }
  Index size() const { return static_cast<Index>(labels_.size()); }

 private:
  std::vector<int> labels_;
  std::vector<Segment> segments_;
};

std::vector<Segment> run_length_encode(const std::vector<int>& labels);

/// Row-wise argmax; ties go to the lowest action index.
Segmentation decode(const Matrix& plan);
inline Segmentation decode(const TransportPlan& plan) { return decode(plan.plan); }

/// Row-normalized plan. The result is a fixed training target: nothing
/// differentiates through it.
Matrix to_pseudo_labels(const Matrix& plan);
inline Matrix to_pseudo_labels(const TransportPlan& plan) { return to_pseudo_labels(plan.plan); }

inline Index segment_count(const Segmentation& s) {
  return static_cast<Index>(s.segments().size());
}

/// JSON array of {"action", "start", "length"} objects.
std::string segments_to_json(const Segmentation& s);

}  // namespace asot
