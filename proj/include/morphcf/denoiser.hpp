#pragma once

// Closed-form denoisers for Gaussian data; they make DDIM behavior checkable
// against analytic targets.

#include "morphcf/diffusion.hpp"

namespace morphcf {

/// Exact eps-prediction for x0 ~ N(mean, diag(variance)). Ignores conditioning.
class GaussianOracleDenoiser : public Denoiser {
 public:
  GaussianOracleDenoiser(NoiseSchedule sched, State mean, State variance);

  State predict_eps(const State& x, int t, const Conditioning& cond) const override;

  const State& mean() const { return mean_; }
  const State& variance() const { return variance_; }

 private:
  NoiseSchedule sched_;
  State mean_, variance_;
};

/// Gaussian oracle whose mean follows the conditioning: the latent condition when
/// present, otherwise the tissue template implied by the control channels
/// (sum over channels of channel intensity times channel weight). Metadata and the
/// null flag are ignored, so guidance is neutral.
class TemplateOracleDenoiser : public Denoiser {
 public:
  TemplateOracleDenoiser(NoiseSchedule sched, Eigen::VectorXd channel_intensity, double variance = 0.01);

  State predict_eps(const State& x, int t, const Conditioning& cond) const override;

  State mean_for(const Conditioning& cond) const;
  double variance() const { return variance_; }

 private:
  NoiseSchedule sched_;
  Eigen::VectorXd channel_intensity_;
  double variance_;
};

/// eps_hat independent of x (an affine denoiser); DDIM inversion is exact for it.
class ConstantDenoiser : public Denoiser {
 public:
  explicit ConstantDenoiser(State eps) : eps_(std::move(eps)) {}
  State predict_eps(const State& x, int, const Conditioning&) const override;

 private:
  State eps_;
};

}  // namespace morphcf
