#pragma once

// Diffusion arithmetic on flattened states (x-fastest voxel order).
//
//   forward:  x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps,   abar_0 = 1
//   DDIM:     x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
//             x_s = sqrt(abar_s) x0_hat + sqrt(1 - abar_s - sigma^2) eps_hat + sigma z

#include <Eigen/Core>

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphcf/volume.hpp"

namespace morphcf {

using State = Eigen::ArrayXd;

enum class ScheduleKind { linear, cosine };

const char* to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(const std::string& s);

class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  /// betas[t-1] is beta_t for t = 1..T; each must lie in (0, 1).
  explicit NoiseSchedule(std::vector<double> betas, ScheduleKind kind = ScheduleKind::linear);

  int steps() const { return static_cast<int>(betas_.size()); }
  ScheduleKind kind() const { return kind_; }
  double beta(int t) const;
  double alpha_bar(int t) const;  // t in [0, T]
  const std::vector<double>& betas() const { return betas_; }

 private:
  ScheduleKind kind_ = ScheduleKind::linear;
  std::vector<double> betas_;
  std::vector<double> alpha_bar_;  // index t, alpha_bar_[0] = 1
};

struct BetaRange {
  double min = 1e-4;
  double max = 0.02;
};

/// Linear: [1e-4, 0.02]. Cosine: [1e-8, 0.999], the usual clip that leaves the
/// squared-cosine curve intact except at its singular last step.
BetaRange default_beta_range(ScheduleKind kind);

/// Linear: betas evenly spaced from beta_min to beta_max. Cosine: squared-cosine
/// abar curve (offset 0.008) with betas clipped to [beta_min, beta_max].
NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max);
NoiseSchedule make_schedule(ScheduleKind kind, int steps);

nlohmann::json to_json(const NoiseSchedule& s, double beta_min, double beta_max);

/// Conditioning for one denoiser call.
struct Conditioning {
  Eigen::VectorXd metadata;              // z-scored metadata
  std::optional<Eigen::MatrixXd> control;  // channels x state voxels (one-hot mask, downsampled)
  std::optional<State> latent;           // upsampled latent for the decoder path
  bool null = false;                     // unconditional branch: metadata dropped

  Conditioning as_null() const {
    Conditioning c = *this;
    c.null = true;
    return c;
  }
};

/// Epsilon-prediction interface. Implementations are deterministic and const-callable
/// from several threads.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual State predict_eps(const State& x, int t, const Conditioning& cond) const = 0;
};

/// Timestep t_i = round(i T / K), i = 0..K.
std::vector<int> substep_timesteps(int T, int substeps);

State q_sample(const State& x0, int t, const State& eps, const NoiseSchedule& sched);

/// One DDIM update from t to t_prev < t. With eta > 0 `noise` must be supplied.
State ddim_step(const State& x_t, int t, int t_prev, const State& eps_hat, const NoiseSchedule& sched,
                double eta = 0.0, const State* noise = nullptr);

/// (1 - w) eps_uncond + w eps_cond; exact at w = 0 and w = 1.
State cfg_combine(const State& eps_uncond, const State& eps_cond, double w);

/// Guided prediction; skips the branch whose weight is zero.
State guided_eps(const Denoiser& denoiser, const State& x, int t, const Conditioning& cond, double w);

/// Closed-form eps_hat for x0 ~ N(m, diag(S)); zero at t = 0.
State oracle_eps(const State& x_t, int t, const NoiseSchedule& sched, const State& mean, const State& variance);

struct Trajectory {
  std::vector<int> timesteps;  // timestep of each state
  std::vector<State> states;
  const State& back() const { return states.back(); }
};

struct SampleOptions {
  double guidance = 2.0;
  double eta = 0.0;
  std::uint64_t seed = 0;  // noise for eta > 0
  /// Substep index of the starting state; -1 means K (start from x_T).
  int start_index = -1;
};

/// Runs from substep `start_index` down to t = 0. States are in generation order.
Trajectory ddim_sample(const Denoiser& denoiser, const Conditioning& cond, const NoiseSchedule& sched, int substeps,
                       const State& x_start, const SampleOptions& options = {});

struct InversionOptions {
  double guidance = 2.0;
  /// Last substep index to reach; -1 means K.
  int stop_index = -1;
  /// Fixed-point refinements per step; 0 gives the plain reversed recurrence.
  int max_refine_iters = 50;
  double tolerance = 1e-12;  // RMS change between refinements
};

/// Reversed DDIM recurrence from x0; states ascend in timestep. Each step solves
/// x_next = step^{-1}(x_cur) with eps_hat evaluated at (x_next, t_next) by fixed-point
/// iteration, starting from the plain reversed update.
Trajectory ddim_invert(const Denoiser& denoiser, const Conditioning& cond, const NoiseSchedule& sched, int substeps,
                       const State& x0, const InversionOptions& options = {});

// ---------------------------------------------------------------------------
// Toy encoder / latent conditioning

/// Block-average downsampling by an integer factor per axis.
Grid encode_toy(const Grid& x, int factor);

/// Latent condition: trilinear upsampling of z by `factor`.
Conditioning condition_from_latent(const Grid& z, int factor);

/// One-hot label channels block-averaged to the latent grid: labels x latent voxels.
Eigen::MatrixXd control_from_labels(const LabelVolume& labels, int factor);

}  // namespace morphcf
