#pragma once

// Small fully connected eps-predictor:
//
//   in  = [x, metadata * (1 - null), null, time features]
//   h1  = silu(W1 in + b1 + Wc control)     control enters as an additive residual
//   h2  = silu(W2 h1 + b2)
//   eps = W3 h2 + b3
//
// Time features are sin/cos of (t / T) * pi * 2^j for j = 0..F-1.

#include <filesystem>
#include <random>

#include "morphcf/diffusion.hpp"

namespace morphcf {

struct MLPShape {
  int state_dim = 1;
  int metadata_dim = 0;
  int control_dim = 0;  // flattened control length (channels * voxels), 0 for none
  int hidden = 64;
  int time_features = 8;
  int timesteps = 1000;  // T of the schedule the network is trained for

  int input_dim() const { return state_dim + metadata_dim + 1 + 2 * time_features; }
  friend bool operator==(const MLPShape&, const MLPShape&) = default;
};

struct MLPParameters {
  Eigen::MatrixXd w1, wc, w2, w3;
  Eigen::VectorXd b1, b2, b3;

  Eigen::Index count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::Ref<const Eigen::VectorXd>& theta);
};

/// A mini-batch in column layout (one sample per column).
struct DenoiserBatch {
  Eigen::MatrixXd x;         // state_dim x B
  Eigen::MatrixXd metadata;  // metadata_dim x B
  Eigen::RowVectorXd null;   // 1 x B, 0 or 1
  Eigen::RowVectorXi t;      // 1 x B
  Eigen::MatrixXd control;   // control_dim x B, or empty for no control
  Eigen::MatrixXd target;    // state_dim x B (true eps)
};

class MLPDenoiser : public Denoiser {
 public:
  MLPDenoiser() = default;
  /// Glorot-uniform weights, zero biases, zero control weights.
  MLPDenoiser(const MLPShape& shape, std::uint64_t seed);

  const MLPShape& shape() const { return shape_; }
  Eigen::Index parameter_count() const { return params_.count(); }
  const MLPParameters& params() const { return params_; }
  Eigen::VectorXd parameters() const { return params_.flatten(); }
  void set_parameters(const Eigen::Ref<const Eigen::VectorXd>& theta) { params_.unflatten(theta); }

  State predict_eps(const State& x, int t, const Conditioning& cond) const override;

  /// Batch forward pass.
  Eigen::MatrixXd forward(const DenoiserBatch& batch) const;

  /// Mean squared error over all entries of the batch, with analytic gradient.
  double loss(const DenoiserBatch& batch, Eigen::VectorXd* grad = nullptr) const;

  Eigen::VectorXd time_embedding(int t) const;

  /// JSON header at `path` and a float64 little-endian payload beside it (.bin).
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static MLPDenoiser load(const std::filesystem::path& path);

 private:
  MLPShape shape_;
  MLPParameters params_;
};

struct TrainingExample {
  State x0;
  Conditioning cond;
};

struct TrainConfig {
  long steps = 2000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double p_uncond = 0.1;
  int hidden = 64;
  int time_features = 8;
  std::uint64_t seed = 0;
  long log_every = 0;  // record loss every n steps (0: only final)
};

struct TrainReport {
  std::vector<std::pair<long, double>> loss_history;
  double final_loss = 0.0;
};

/// Adam on the eps-prediction MSE; conditioning dropped with probability p_uncond.
MLPDenoiser train_mlp_denoiser(const std::vector<TrainingExample>& data, const NoiseSchedule& sched,
                               const TrainConfig& config, TrainReport* report = nullptr);

}  // namespace morphcf
