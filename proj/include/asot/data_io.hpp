#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "asot/types.hpp"

namespace asot {

/// Binary feature file layout (all little-endian):
///   bytes 0-7   magic "ASOTFEAT"
///   bytes 8-11  u32 version (1)
///   bytes 12-19 u64 N (rows)
///   bytes 20-27 u64 D (columns)
///   then N*D f32 values, row-major.
inline constexpr char kFeatureMagic[8] = {'A', 'S', 'O', 'T', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 28;

/// Values are widened to double on load. Throws kFormat on a bad magic or
/// version, kTruncated on a short payload and kNonFinite on NaN/Inf.
Matrix read_features(const std::filesystem::path& path);

/// Values are narrowed to f32.
void write_features(const std::filesystem::path& path, const Matrix& features);

/// One integer per line. Throws kParse naming the offending line.
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> parse_labels(const std::string& text);

struct SynthSpec {
  int n_videos = 20;
  int n_actions = 6;
  int dim = 16;
  int mean_frames = 600;
  double mean_segments_per_video = 8.0;
  double noise_sigma = 0.1;
  double class_imbalance = 0.5;  // Dirichlet concentration
  double min_segment_fraction = 0.4;
  bool order_variation = true;
  bool repeat_actions = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthDataset {
  std::vector<Matrix> features;
  std::vector<std::vector<int>> labels;
  Matrix prototypes;        // K x D, unit rows
  std::vector<int> canonical_order;
};

/// Deterministic for a given spec. Frames are noisy copies of unit-norm
/// action prototypes whose pairwise cosine similarity is at most 0.3.
SynthDataset synth_generate(const SynthSpec& spec);

}  // namespace asot
