#include "morphcf/denoiser.hpp"

namespace morphcf {

GaussianOracleDenoiser::GaussianOracleDenoiser(NoiseSchedule sched, State mean, State variance)
    : sched_(std::move(sched)), mean_(std::move(mean)), variance_(std::move(variance)) {
  if (mean_.size() != variance_.size()) throw InvalidArgument("oracle mean/variance size mismatch");
  if ((variance_ < 0.0).any()) throw InvalidArgument("oracle variance must be >= 0");
}

State GaussianOracleDenoiser::predict_eps(const State& x, int t, const Conditioning&) const {
  return oracle_eps(x, t, sched_, mean_, variance_);
}

TemplateOracleDenoiser::TemplateOracleDenoiser(NoiseSchedule sched, Eigen::VectorXd channel_intensity,
                                               double variance)
    : sched_(std::move(sched)), channel_intensity_(std::move(channel_intensity)), variance_(variance) {
  if (!(variance_ > 0.0)) throw InvalidArgument("template oracle variance must be > 0");
}

State TemplateOracleDenoiser::mean_for(const Conditioning& cond) const {
  if (cond.latent) return *cond.latent;
  if (cond.control) {
    if (cond.control->rows() != channel_intensity_.size())
      throw InvalidArgument("control has " + std::to_string(cond.control->rows()) + " channels, expected " +
                            std::to_string(channel_intensity_.size()));
    return (channel_intensity_.transpose() * *cond.control).transpose().array();
  }
  throw InvalidArgument("template oracle needs a latent or control condition");
}

State TemplateOracleDenoiser::predict_eps(const State& x, int t, const Conditioning& cond) const {
  const State mean = mean_for(cond);
  return oracle_eps(x, t, sched_, mean, State::Constant(x.size(), variance_));
}

State ConstantDenoiser::predict_eps(const State& x, int, const Conditioning&) const {
  if (x.size() != eps_.size()) throw InvalidArgument("constant denoiser size mismatch");
  return eps_;
}

}  // namespace morphcf
