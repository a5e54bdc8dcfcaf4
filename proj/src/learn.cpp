#include "asot/learn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <span>

#include "asot/costs.hpp"
#include "asot/segmentation.hpp"
#include "json.hpp"

namespace asot {

namespace {

// The five tensors of a parameter set as flat spans, in a fixed order.
std::array<std::span<double>, 5> tensors(EncoderParams& p) {
  return {std::span<double>(p.w1.data(), static_cast<std::size_t>(p.w1.size())),
          std::span<double>(p.b1.data(), static_cast<std::size_t>(p.b1.size())),
          std::span<double>(p.w2.data(), static_cast<std::size_t>(p.w2.size())),
          std::span<double>(p.b2.data(), static_cast<std::size_t>(p.b2.size())),
          std::span<double>(p.actions.data(), static_cast<std::size_t>(p.actions.size()))};
}

std::array<std::span<const double>, 5> tensors(const EncoderParams& p) {
  auto& m = const_cast<EncoderParams&>(p);
  auto t = tensors(m);
  return {t[0], t[1], t[2], t[3], t[4]};
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (Index i = 0; i < out.rows(); ++i) {
    const double top = out.row(i).maxCoeff();
    const double lse = top + std::log((out.row(i).array() - top).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

}  // namespace

EncoderParams EncoderParams::zeros_like() const {
  return {Matrix::Zero(w1.rows(), w1.cols()), Vector::Zero(b1.size()), Matrix::Zero(w2.rows(), w2.cols()),
          Vector::Zero(b2.size()), Matrix::Zero(actions.rows(), actions.cols())};
}

bool EncoderParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && actions.allFinite();
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidInput, "train config: " + msg); };
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (frames_per_video < 1 || batch_videos < 1 || hidden < 1 || out_dim < 1 || n_actions < 1) {
    fail("sizes must be >= 1");
  }
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(rho >= 0.0)) fail("rho must be >= 0");
  solver_train.validate();
  solver_infer.validate();
}

namespace {

nlohmann::json solver_json(const SolverConfig& c) {
  nlohmann::json j = {{"alpha", c.alpha},         {"lambda", c.lambda}, {"epsilon", c.epsilon},
          {"radius", c.radius},       {"n_iter", c.n_iter},
          {"stop_tol", c.stop_tol},   {"halve_on_increase", c.halve_on_increase}};
  if (c.step_size) j["step_size"] = *c.step_size;
  return j;
}

SolverConfig solver_from_json(const nlohmann::json& j, SolverConfig c) {
  c.alpha = j.value("alpha", c.alpha);
  c.lambda = j.value("lambda", c.lambda);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.radius = j.value("radius", c.radius);
  if (j.contains("step_size") && !j["step_size"].is_null()) c.step_size = j["step_size"].get<double>();
  c.n_iter = j.value("n_iter", c.n_iter);
  c.stop_tol = j.value("stop_tol", c.stop_tol);
  c.halve_on_increase = j.value("halve_on_increase", c.halve_on_increase);
  return c;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("train config: ") + e.what());
  }
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.temperature = j.value("temperature", c.temperature);
    c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
    c.batch_videos = j.value("batch_videos", c.batch_videos);
    c.epochs = j.value("epochs", c.epochs);
    c.hidden = j.value("hidden", c.hidden);
    c.out_dim = j.value("out_dim", c.out_dim);
    c.n_actions = j.value("n_actions", c.n_actions);
    c.rho = j.value("rho", c.rho);
    c.seed = j.value("seed", c.seed);
    if (j.contains("solver_train")) c.solver_train = solver_from_json(j["solver_train"], c.solver_train);
    if (j.contains("solver_infer")) c.solver_infer = solver_from_json(j["solver_infer"], c.solver_infer);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const TrainConfig& c) {
  const nlohmann::json j = {{"lr", c.lr},
                            {"weight_decay", c.weight_decay},
                            {"temperature", c.temperature},
                            {"frames_per_video", c.frames_per_video},
                            {"batch_videos", c.batch_videos},
                            {"epochs", c.epochs},
                            {"hidden", c.hidden},
                            {"out_dim", c.out_dim},
                            {"n_actions", c.n_actions},
                            {"rho", c.rho},
                            {"seed", c.seed},
                            {"solver_train", solver_json(c.solver_train)},
                            {"solver_infer", solver_json(c.solver_infer)}};
  return j.dump(2);
}

EncoderState init_encoder(Index input_dim, const TrainConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](Index rows, Index cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    return m;
  };
  const double b_in = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double b_hidden = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));

  EncoderState s;
  s.params.w1 = uniform(input_dim, cfg.hidden, b_in);
  s.params.b1 = uniform(cfg.hidden, 1, b_in).col(0);
  s.params.w2 = uniform(cfg.hidden, cfg.out_dim, b_hidden);
  s.params.b2 = uniform(cfg.out_dim, 1, b_hidden).col(0);
  s.params.actions = Matrix::Zero(cfg.n_actions, cfg.out_dim);
  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  return s;
}

ForwardCache forward_cached(const EncoderParams& params, const Matrix& raw) {
  if (raw.cols() != params.w1.rows()) {
    throw Error(ErrorCode::kInvalidInput, "forward: input dim " + std::to_string(raw.cols()) +
                                              " != encoder input dim " + std::to_string(params.w1.rows()));
  }
  ForwardCache c;
  c.pre = raw * params.w1;
  c.pre.rowwise() += params.b1.transpose();
  c.hidden = c.pre.cwiseMax(0.0);
  c.out = c.hidden * params.w2;
  c.out.rowwise() += params.b2.transpose();
  c.norms = c.out.rowwise().norm();
  for (Index i = 0; i < c.norms.size(); ++i) {
    if (c.norms[i] < kNormFloor) {
      c.norms[i] = kNormFloor;
      ++c.degenerate_rows;
    }
  }
  c.emb = c.out.array().colwise() / c.norms.array();
  return c;
}

Matrix forward(const EncoderParams& params, const Matrix& raw) { return forward_cached(params, raw).emb; }

Matrix soft_assign(const Matrix& emb, const Matrix& actions, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::kInvalidInput, "soft_assign: temperature must be > 0");
  return log_softmax_rows(emb * actions.transpose() / temperature).array().exp();
}

LossAndGrads ce_loss_and_grads(const EncoderParams& params, const Matrix& raw, const Matrix& pseudo,
                               double temperature, double scale) {
  const ForwardCache c = forward_cached(params, raw);
  if (pseudo.rows() != raw.rows() || pseudo.cols() != params.actions.rows()) {
    throw Error(ErrorCode::kInvalidInput, "ce_loss: pseudo-label shape mismatch");
  }
  const Matrix log_p = log_softmax_rows(c.emb * params.actions.transpose() / temperature);

  LossAndGrads out;
  out.loss = -scale * pseudo.cwiseProduct(log_p).sum();

  // d loss / d logits = scale * (P * rowsum(pseudo) - pseudo)
  const Vector target_mass = pseudo.rowwise().sum();
  Matrix d_logits = log_p.array().exp().colwise() * target_mass.array();
  d_logits = scale * (d_logits - pseudo);

  const Matrix d_emb = d_logits * params.actions / temperature;
  out.grads.actions = d_logits.transpose() * c.emb / temperature;

  Matrix d_out(d_emb.rows(), d_emb.cols());
  for (Index i = 0; i < d_emb.rows(); ++i) {
    if (c.norms[i] > kNormFloor) {
      const double radial = c.emb.row(i).dot(d_emb.row(i));
      d_out.row(i) = (d_emb.row(i) - radial * c.emb.row(i)) / c.norms[i];
    } else {
      d_out.row(i) = d_emb.row(i) / kNormFloor;
    }
  }
  out.grads.w2 = c.hidden.transpose() * d_out;
  out.grads.b2 = d_out.colwise().sum().transpose();

  const Matrix d_hidden = (d_out * params.w2.transpose()).array() * (c.pre.array() > 0.0).cast<double>();
  out.grads.w1 = raw.transpose() * d_hidden;
  out.grads.b1 = d_hidden.colwise().sum().transpose();
  return out;
}

void adam_step(EncoderState& state, const EncoderParams& grads, double lr, double weight_decay) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);

  auto params = tensors(state.params);
  auto ms = tensors(state.adam_m);
  auto vs = tensors(state.adam_v);
  const auto gs = tensors(grads);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (gs[k].size() != params[k].size()) throw Error(ErrorCode::kInvalidInput, "adam_step: gradient shape mismatch");
    for (std::size_t e = 0; e < params[k].size(); ++e) {
      const double g = gs[k][e];
      ms[k][e] = kBeta1 * ms[k][e] + (1.0 - kBeta1) * g;
      vs[k][e] = kBeta2 * vs[k][e] + (1.0 - kBeta2) * g * g;
      const double m_hat = ms[k][e] / c1;
      const double v_hat = vs[k][e] / c2;
      params[k][e] -= lr * (m_hat / (std::sqrt(v_hat) + kEps) + weight_decay * params[k][e]);
    }
  }
}

std::vector<Index> sample_frames(Index n_frames, Index n_samples, std::uint64_t seed) {
  if (n_frames < 1) throw Error(ErrorCode::kInvalidInput, "sample_frames: no frames");
  std::mt19937_64 rng(seed);
  std::vector<Index> out(static_cast<std::size_t>(n_samples));
  for (Index k = 0; k < n_samples; ++k) {
    const Index lo = k * n_frames / n_samples;
    const Index hi = (k + 1) * n_frames / n_samples;
    if (hi > lo) {
      out[static_cast<std::size_t>(k)] = std::uniform_int_distribution<Index>(lo, hi - 1)(rng);
    } else {
      out[static_cast<std::size_t>(k)] = std::min(lo, n_frames - 1);
    }
  }
  return out;
}

namespace {

// One k-means++ seeding followed by Lloyd iterations; returns the inertia.
double lloyd_run(const Matrix& points, Index k, std::mt19937_64& rng, Matrix& centroids) {
  const Index n = points.rows();
  centroids.resize(k, points.cols());

  // k-means++ seeding.
  centroids.row(0) = points.row(std::uniform_int_distribution<Index>(0, n - 1)(rng));
  Vector dist2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    const double total = dist2.sum();
    Index chosen = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      chosen = n - 1;
      for (Index i = 0; i < n; ++i) {
        target -= dist2[i];
        if (target < 0.0 && dist2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = std::uniform_int_distribution<Index>(0, n - 1)(rng);
    }
    centroids.row(c) = points.row(chosen);
    dist2 = dist2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }

  std::vector<Index> assign(static_cast<std::size_t>(n));
  for (int it = 0; it < 100; ++it) {
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < k; ++c) {
        const double d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    Matrix sums = Matrix::Zero(k, points.cols());
    Vector counts = Vector::Zero(k);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    double shift = 0.0;
    for (Index c = 0; c < k; ++c) {
      if (counts[c] == 0.0) continue;  // empty cluster keeps its centroid
      const Eigen::RowVectorXd updated = sums.row(c) / counts[c];
      shift = std::max(shift, (updated - centroids.row(c)).norm());
      centroids.row(c) = updated;
    }
    if (shift < 1e-6) break;
  }
  double inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    double best_d = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < k; ++c) best_d = std::min(best_d, (points.row(i) - centroids.row(c)).squaredNorm());
    inertia += best_d;
  }
  return inertia;
}

}  // namespace

Matrix kmeans_init(const Matrix& points, Index k, std::uint64_t seed, int restarts) {
  const Index n = points.rows();
  if (k < 1 || n < k) {
    throw Error(ErrorCode::kInvalidInput, "kmeans_init: need at least " + std::to_string(k) +
                                              " points, got " + std::to_string(n));
  }
  if (restarts < 1) throw Error(ErrorCode::kInvalidInput, "kmeans_init: restarts must be >= 1");
  std::mt19937_64 rng(seed);
  Matrix best, trial;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    const double inertia = lloyd_run(points, k, rng, trial);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best = trial;
    }
  }
  return best;
}

Matrix pseudo_labels_for(const Matrix& emb, const Matrix& actions, double rho, const SolverConfig& cfg) {
  const Matrix cost = add_temporal_prior(build_kot_cost(emb, actions), rho);
  return to_pseudo_labels(solve(cost, cfg).plan);
}

EncoderState train(const std::vector<Matrix>& videos, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (videos.empty()) throw Error(ErrorCode::kInvalidInput, "train: empty dataset");
  cfg.validate();
  const Index input_dim = videos.front().cols();
  for (std::size_t v = 0; v < videos.size(); ++v) {
    if (videos[v].cols() != input_dim || videos[v].rows() < 1) {
      throw Error(ErrorCode::kInvalidInput, "train: video " + std::to_string(v) + " has an incompatible shape");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  EncoderState state = init_encoder(input_dim, cfg, rng());

  auto sampled = [&](std::size_t v) {
    const auto idx = sample_frames(videos[v].rows(), cfg.frames_per_video, rng());
    Matrix x(static_cast<Index>(idx.size()), input_dim);
    for (std::size_t r = 0; r < idx.size(); ++r) x.row(static_cast<Index>(r)) = videos[v].row(idx[r]);
    return x;
  };

  {
    std::vector<Matrix> pooled;
    Index rows = 0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
      pooled.push_back(forward(state.params, sampled(v)));
      rows += pooled.back().rows();
    }
    Matrix pool(rows, cfg.out_dim);
    Index at = 0;
    for (const auto& p : pooled) {
      pool.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
    state.params.actions = kmeans_init(pool, cfg.n_actions, rng());
  }

  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_videos)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_videos));
      const double scale = 1.0 / static_cast<double>(stop - start);
      EncoderParams grads = state.params.zeros_like();
      double loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t v = order[b];
        const Matrix x = sampled(v);
        Matrix pseudo;
        try {
          pseudo = pseudo_labels_for(forward(state.params, x), state.params.actions, cfg.rho, cfg.solver_train);
        } catch (const Error& e) {
          throw Error(e.code(), "train: video " + std::to_string(v) + ": " + e.what());
        }
        LossAndGrads lg = ce_loss_and_grads(state.params, x, pseudo, cfg.temperature, scale);
        loss += lg.loss;
        auto acc = tensors(grads);
        const auto add = tensors(lg.grads);
        for (std::size_t k = 0; k < acc.size(); ++k) {
          for (std::size_t e = 0; e < acc[k].size(); ++e) acc[k][e] += add[k][e];
        }
      }
      adam_step(state, grads, cfg.lr, cfg.weight_decay);
      loss_sum += loss;
      ++batches;
    }
    if (!state.params.all_finite()) {
      throw Error(ErrorCode::kNumericalFailure, "train: non-finite parameters after epoch " + std::to_string(epoch));
    }
    if (on_epoch) on_epoch({epoch, loss_sum / static_cast<double>(batches)}, state);
  }
  return state;
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'S', 'O', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct Reader {
  std::string bytes;
  std::size_t at = 0;
  std::string where;

  template <typename T>
  T get() {
    if (bytes.size() - at < sizeof(T)) throw Error(ErrorCode::kTruncated, where + ": truncated checkpoint");
    T v;
    std::memcpy(&v, bytes.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
  }
};

void put_tensor(std::ostream& out, Index rows, Index cols, const double* data) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(rows));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(cols));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(rows * cols * sizeof(double)));
}

void write_params(std::ostream& out, const EncoderParams& p) {
  put_tensor(out, p.w1.rows(), p.w1.cols(), p.w1.data());
  put_tensor(out, p.b1.size(), 1, p.b1.data());
  put_tensor(out, p.w2.rows(), p.w2.cols(), p.w2.data());
  put_tensor(out, p.b2.size(), 1, p.b2.data());
  put_tensor(out, p.actions.rows(), p.actions.cols(), p.actions.data());
}

Matrix get_tensor(Reader& r) {
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  if (cols != 0 && rows > (r.bytes.size() - r.at) / sizeof(double) / cols) {
    throw Error(ErrorCode::kTruncated, r.where + ": truncated tensor payload");
  }
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
  std::memcpy(m.data(), r.bytes.data() + r.at, n);
  r.at += n;
  return m;
}

EncoderParams read_params(Reader& r) {
  EncoderParams p;
  p.w1 = get_tensor(r);
  p.b1 = get_tensor(r).col(0);
  p.w2 = get_tensor(r);
  p.b2 = get_tensor(r).col(0);
  p.actions = get_tensor(r);
  if (p.b1.size() != p.w1.cols() || p.w2.rows() != p.w1.cols() || p.b2.size() != p.w2.cols() ||
      p.actions.cols() != p.w2.cols()) {
    throw Error(ErrorCode::kFormat, r.where + ": inconsistent tensor shapes");
  }
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::int64_t>(out, state.step_count);
  write_params(out, state.params);
  write_params(out, state.adam_m);
  write_params(out, state.adam_v);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

EncoderState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  Reader r{{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, 0, path.string()};
  if (r.bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(r.bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw Error(ErrorCode::kFormat, r.where + ": bad magic, not a checkpoint");
  }
  r.at = sizeof(kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, r.where + ": unsupported checkpoint version " + std::to_string(version));
  }
  EncoderState s;
  s.step_count = r.get<std::int64_t>();
  s.params = read_params(r);
  s.adam_m = read_params(r);
  s.adam_v = read_params(r);
  if (r.at != r.bytes.size()) throw Error(ErrorCode::kFormat, r.where + ": trailing bytes");
  return s;
}

}  // namespace asot
