#include "asot/segmentation.hpp"

#include "json.hpp"

namespace asot {

std::vector<Segment> run_length_encode(const std::vector<int>& labels) {
  std::vector<Segment> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!out.empty() && out.back().action == labels[i]) {
      ++out.back().length;
    } else {
      out.push_back({labels[i], static_cast<Index>(i), 1});
    }
  }
  return out;
}

Segmentation::Segmentation(std::vector<int> labels)
    : labels_(std::move(labels)), segments_(run_length_encode(labels_)) {}

Segmentation Segmentation::from_segments(const std::vector<Segment>& segments) {
  std::vector<int> labels;
  for (const auto& s : segments) {
    if (s.start != static_cast<Index>(labels.size()) || s.length < 1) {
      throw Error(ErrorCode::kInvalidInput, "segments are not contiguous");
    }
    labels.insert(labels.end(), static_cast<std::size_t>(s.length), s.action);
  }
  return Segmentation(std::move(labels));
}

Segmentation decode(const Matrix& plan) {
  std::vector<int> labels(static_cast<std::size_t>(plan.rows()));
  for (Index i = 0; i < plan.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < plan.cols(); ++j) {
      if (plan(i, j) > plan(i, best)) best = j;
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return Segmentation(std::move(labels));
}

Matrix to_pseudo_labels(const Matrix& plan) {
  Matrix out = plan;
  for (Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (!(s > 0.0)) {
      throw Error(ErrorCode::kInternal, "to_pseudo_labels: row " + std::to_string(i) + " has no mass");
    }
    out.row(i) /= s;
  }
  return out;
}

std::string segments_to_json(const Segmentation& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& seg : s.segments()) {
    arr.push_back({{"action", seg.action}, {"start", seg.start}, {"length", seg.length}});
  }
  return arr.dump();
}

}  // namespace asot
