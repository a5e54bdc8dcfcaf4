#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "asot/solver.hpp"
#include "asot/types.hpp"

namespace asot {

/// Trainable tensors: a one-hidden-layer ReLU MLP plus the action embeddings.
struct EncoderParams {
  Matrix w1;       // D_in x H
  Vector b1;       // H
  Matrix w2;       // H x D_out
  Vector b2;       // D_out
  Matrix actions;  // K x D_out

  /// Same shapes, all zeros.
  EncoderParams zeros_like() const;
  bool all_finite() const;
};

struct EncoderState {
  EncoderParams params;
  EncoderParams adam_m;
  EncoderParams adam_v;
  std::int64_t step_count = 0;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double temperature = 0.1;
  int frames_per_video = 256;
  int batch_videos = 2;
  int epochs = 30;
  int hidden = 128;
  int out_dim = 40;
  int n_actions = 6;
  double rho = 0.25;  // temporal prior weight, pseudo-labelling only
  SolverConfig solver_train = SolverConfig::training();
  SolverConfig solver_infer = SolverConfig::inference();
  std::uint64_t seed = 0;

  void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string to_json(const TrainConfig& cfg);

/// Fan-in scaled uniform initialization; action embeddings start at zero
/// and are expected to be set by kmeans_init.
EncoderState init_encoder(Index input_dim, const TrainConfig& cfg, std::uint64_t seed);

/// Intermediate values of a forward pass, kept for backpropagation.
struct ForwardCache {
  Matrix pre;     // X w1 + b1
  Matrix hidden;  // relu(pre)
  Matrix out;     // hidden w2 + b2
  Vector norms;   // max(||out_i||, kNormFloor)
  Matrix emb;     // out_i / norms_i
  Index degenerate_rows = 0;  // rows whose norm hit the floor
};

inline constexpr double kNormFloor = 1e-12;

ForwardCache forward_cached(const EncoderParams& params, const Matrix& raw);

/// Row-wise l2-normalized embeddings.
Matrix forward(const EncoderParams& params, const Matrix& raw);

/// Softmax over actions of emb * actions^T / temperature.
Matrix soft_assign(const Matrix& emb, const Matrix& actions, double temperature);

struct LossAndGrads {
  double loss = 0.0;
  EncoderParams grads;
};

/// -scale * sum_ij pseudo_ij log P_ij and its gradient with respect to every
/// parameter. `pseudo` is a constant target.
LossAndGrads ce_loss_and_grads(const EncoderParams& params, const Matrix& raw, const Matrix& pseudo,
                               double temperature, double scale = 1.0);

/// Adam (0.9, 0.999, 1e-8) with decoupled weight decay.
void adam_step(EncoderState& state, const EncoderParams& grads, double lr, double weight_decay);

/// One uniform draw per interval [floor(kN/n), floor((k+1)N/n)); sorted.
/// Empty intervals (N < n) draw from the interval's start frame.
std::vector<Index> sample_frames(Index n_frames, Index n_samples, std::uint64_t seed);

/// Lloyd iterations from k-means++ seeding; at most 100 iterations or until
/// the largest centroid shift drops below 1e-6. The run with the lowest
/// inertia out of `restarts` seedings is kept.
Matrix kmeans_init(const Matrix& points, Index k, std::uint64_t seed, int restarts = 10);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&, const EncoderState&)>;

/// Self-training with solver pseudo-labels. Deterministic for a given seed.
EncoderState train(const std::vector<Matrix>& videos, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Pseudo-labels for one video under the training solver settings.
Matrix pseudo_labels_for(const Matrix& emb, const Matrix& actions, double rho, const SolverConfig& cfg);

void save_checkpoint(const std::filesystem::path& path, const EncoderState& state);
EncoderState load_checkpoint(const std::filesystem::path& path);

}  // namespace asot
