#include "asot/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

namespace asot {

namespace {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
T load(const std::string& bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <typename T>
void store(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

Matrix read_features(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string();
  if (bytes.size() < sizeof(kFeatureMagic) ||
      std::memcmp(bytes.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0) {
    throw Error(ErrorCode::kFormat, where + ": bad magic, not a feature file");
  }
  if (bytes.size() < kFeatureHeaderBytes) {
    throw Error(ErrorCode::kTruncated, where + ": truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  const auto version = load<std::uint32_t>(bytes, 8);
  if (version != kFeatureVersion) {
    throw Error(ErrorCode::kFormat, where + ": unsupported version " + std::to_string(version));
  }
  const auto rows = load<std::uint64_t>(bytes, 12);
  const auto cols = load<std::uint64_t>(bytes, 20);
  const std::size_t available = (bytes.size() - kFeatureHeaderBytes) / sizeof(float);
  if (cols != 0 && rows > available / cols) {
    throw Error(ErrorCode::kTruncated, where + ": payload holds " + std::to_string(available) +
                                           " values, header declares " + std::to_string(rows) + "x" +
                                           std::to_string(cols));
  }
  const std::size_t count = static_cast<std::size_t>(rows * cols);
  if (bytes.size() != kFeatureHeaderBytes + count * sizeof(float)) {
    throw Error(ErrorCode::kFormat, where + ": trailing bytes after payload");
  }

  Matrix out(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t k = 0; k < count; ++k) {
    const float v = load<float>(bytes, kFeatureHeaderBytes + k * sizeof(float));
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFinite, where + ": non-finite value at row " + std::to_string(k / cols) +
                                             ", column " + std::to_string(k % cols));
    }
    out.data()[k] = static_cast<double>(v);
  }
  return out;
}

void write_features(const std::filesystem::path& path, const Matrix& features) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  store<std::uint32_t>(out, kFeatureVersion);
  store<std::uint64_t>(out, static_cast<std::uint64_t>(features.rows()));
  store<std::uint64_t>(out, static_cast<std::uint64_t>(features.cols()));
  for (Index k = 0; k < features.size(); ++k) store<float>(out, static_cast<float>(features.data()[k]));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<int> parse_labels(const std::string& text) {
  std::vector<int> labels;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    ++line_no;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;

    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(line, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != line.size()) {
      throw Error(ErrorCode::kParse, "labels: line " + std::to_string(line_no) + ": '" + line +
                                         "' is not an integer");
    }
    labels.push_back(value);
  }
  return labels;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  try {
    return parse_labels(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParse) throw Error(e.code(), path.string() + ": " + e.what());
    throw;
  }
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (int l : labels) out << l << '\n';
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidInput, "synth: " + msg); };
  if (n_videos < 1 || n_actions < 1 || dim < 1 || mean_frames < 1) fail("counts must be >= 1");
  if (!(mean_segments_per_video >= 1.0)) fail("mean_segments_per_video must be >= 1");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(class_imbalance > 0.0)) fail("class_imbalance must be > 0");
  if (!(min_segment_fraction >= 0.0 && min_segment_fraction <= 1.0)) {
    fail("min_segment_fraction must lie in [0, 1]");
  }
}

namespace {

Matrix draw_prototypes(int k, int d, std::mt19937_64& rng) {
  constexpr int kMaxRejections = 10000;
  constexpr double kMaxCosine = 0.3;
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix protos(k, d);
  int rejections = 0;
  for (int a = 0; a < k;) {
    Vector v(d);
    for (int c = 0; c < d; ++c) v[c] = normal(rng);
    const double norm = v.norm();
    if (norm == 0.0) continue;
    v /= norm;
    bool ok = true;
    for (int b = 0; b < a && ok; ++b) ok = protos.row(b).dot(v) <= kMaxCosine;
    if (ok) {
      protos.row(a++) = v.transpose();
    } else if (++rejections > kMaxRejections) {
      throw Error(ErrorCode::kInvalidInput,
                  "synth: cannot place " + std::to_string(k) + " prototypes in dimension " +
                      std::to_string(d) + " with cosine <= 0.3; use fewer actions or a larger dimension");
    }
  }
  return protos;
}

Vector dirichlet(int k, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  Vector w(k);
  for (int a = 0; a < k; ++a) w[a] = gamma(rng);
  const double s = w.sum();
  if (s > 0.0) return w / s;
  return Vector::Constant(k, 1.0 / k);
}

// Action id per segment, no two neighbours equal.
std::vector<int> segment_sequence(const SynthSpec& spec, const std::vector<int>& order, int n_segments,
                                  std::mt19937_64& rng) {
  std::vector<int> seq(order.begin(), order.begin() + std::min<int>(n_segments, spec.n_actions));
  if (!spec.repeat_actions || spec.n_actions < 2) return seq;
  // Repeats go into random gaps between neighbours that differ from the action.
  while (static_cast<int>(seq.size()) < n_segments) {
    const int a = seq[std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng)];
    std::vector<std::size_t> gaps;
    for (std::size_t g = 0; g <= seq.size(); ++g) {
      const bool left_ok = g == 0 || seq[g - 1] != a;
      const bool right_ok = g == seq.size() || seq[g] != a;
      if (left_ok && right_ok) gaps.push_back(g);
    }
    if (gaps.empty()) continue;
    const std::size_t g = gaps[std::uniform_int_distribution<std::size_t>(0, gaps.size() - 1)(rng)];
    seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(g), a);
  }
  return seq;
}

// Largest-remainder apportionment of `total` frames to the given weights.
std::vector<int> apportion(const std::vector<double>& weights, int total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    const double exact = weights[s] / sum * total;
    out[s] = static_cast<int>(std::floor(exact));
    assigned += out[s];
    remainders.push_back({exact - out[s], s});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[remainders[r % remainders.size()].second];
  return out;
}

}  // namespace

SynthDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthDataset ds;
  ds.prototypes = draw_prototypes(spec.n_actions, spec.dim, rng);
  ds.canonical_order.resize(static_cast<std::size_t>(spec.n_actions));
  std::iota(ds.canonical_order.begin(), ds.canonical_order.end(), 0);
  std::shuffle(ds.canonical_order.begin(), ds.canonical_order.end(), rng);

  std::uniform_real_distribution<double> jitter(0.75, 1.25);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int v = 0; v < spec.n_videos; ++v) {
    const int n_frames = std::max(1, static_cast<int>(std::lround(spec.mean_frames * jitter(rng))));
    int n_segments = std::max(1, static_cast<int>(std::lround(spec.mean_segments_per_video * jitter(rng))));
    if (!spec.repeat_actions) n_segments = std::min(n_segments, spec.n_actions);
    n_segments = std::min(n_segments, n_frames);

    std::vector<int> order = ds.canonical_order;
    if (spec.order_variation) std::shuffle(order.begin(), order.end(), rng);
    const Vector proportions = dirichlet(spec.n_actions, spec.class_imbalance, rng);
    const std::vector<int> seq = segment_sequence(spec, order, n_segments, rng);

    std::vector<int> occurrences(static_cast<std::size_t>(spec.n_actions), 0);
    for (int a : seq) ++occurrences[static_cast<std::size_t>(a)];
    std::vector<double> weights;
    for (int a : seq) weights.push_back(proportions[a] / occurrences[static_cast<std::size_t>(a)]);

    // Every segment gets a floor share, the rest follows the proportions.
    const int floor_frames = static_cast<int>(
        std::floor(spec.min_segment_fraction * n_frames / static_cast<double>(seq.size())));
    const int free_frames = n_frames - floor_frames * static_cast<int>(seq.size());
    std::vector<int> lengths = apportion(weights, free_frames);

    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(n_frames));
    for (std::size_t s = 0; s < seq.size(); ++s) {
      labels.insert(labels.end(), static_cast<std::size_t>(lengths[s] + floor_frames), seq[s]);
    }

    Matrix x(n_frames, spec.dim);
    for (int i = 0; i < n_frames; ++i) {
      x.row(i) = ds.prototypes.row(labels[static_cast<std::size_t>(i)]);
      for (int c = 0; c < spec.dim; ++c) x(i, c) += spec.noise_sigma * normal(rng);
    }
    ds.features.push_back(std::move(x));
    ds.labels.push_back(std::move(labels));
  }
  return ds;
}

}  // namespace asot
