#include "morphcf/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace morphcf {

const char* to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw InvalidArgument("unknown schedule kind '" + s + "'");
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas, ScheduleKind kind) : kind_(kind), betas_(std::move(betas)) {
  if (betas_.empty()) throw InvalidArgument("schedule needs at least one step");
  alpha_bar_.assign(betas_.size() + 1, 1.0);
  for (std::size_t t = 1; t <= betas_.size(); ++t) {
    const double b = betas_[t - 1];
    if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("beta_" + std::to_string(t) + " must lie in (0, 1)");
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - b);
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, T]");
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, T]");
  return alpha_bar_[t];
}

BetaRange default_beta_range(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? BetaRange{1e-4, 0.02} : BetaRange{1e-8, 0.999};
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_min, double beta_max) {
  if (steps < 1) throw InvalidArgument("schedule needs T >= 1");
  if (!(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0))
    throw InvalidArgument("betas must satisfy 0 < beta_min <= beta_max < 1");
  std::vector<double> betas(steps);
  if (kind == ScheduleKind::linear) {
    for (int t = 0; t < steps; ++t)
      betas[t] = steps == 1 ? beta_min : beta_min + (beta_max - beta_min) * t / double(steps - 1);
  } else {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) betas[t - 1] = std::clamp(1.0 - f(t) / f(t - 1), beta_min, beta_max);
  }
  return NoiseSchedule(std::move(betas), kind);
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps) {
  const BetaRange r = default_beta_range(kind);
  return make_schedule(kind, steps, r.min, r.max);
}

nlohmann::json to_json(const NoiseSchedule& s, double beta_min, double beta_max) {
  return {{"kind", to_string(s.kind())}, {"steps", s.steps()}, {"beta_min", beta_min}, {"beta_max", beta_max}};
}

std::vector<int> substep_timesteps(int T, int substeps) {
  if (substeps < 1 || substeps > T) throw InvalidArgument("substeps must lie in [1, T]");
  std::vector<int> ts(substeps + 1);
  for (int i = 0; i <= substeps; ++i)
    ts[i] = static_cast<int>((2LL * i * T + substeps) / (2LL * substeps));
  return ts;
}

namespace {

void check_same_size(const State& a, const State& b, const char* what) {
  if (a.size() != b.size())
    throw InvalidArgument(std::string(what) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
}

}  // namespace

State q_sample(const State& x0, int t, const State& eps, const NoiseSchedule& sched) {
  check_same_size(x0, eps, "q_sample");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

State ddim_step(const State& x_t, int t, int t_prev, const State& eps_hat, const NoiseSchedule& sched, double eta,
                const State* noise) {
  if (!(t_prev < t)) throw InvalidArgument("ddim_step needs t_prev < t");
  check_same_size(x_t, eps_hat, "ddim_step");
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  const State x0_hat = (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  if (eta == 0.0) return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;

  if (eta < 0.0) throw InvalidArgument("eta must be >= 0");
  if (!noise) throw InvalidArgument("ddim_step with eta > 0 needs a noise field");
  check_same_size(x_t, *noise, "ddim_step noise");
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  return std::sqrt(ab_prev) * x0_hat + dir * eps_hat + sigma * *noise;
}

State cfg_combine(const State& eps_uncond, const State& eps_cond, double w) {
  check_same_size(eps_uncond, eps_cond, "cfg_combine");
  return (1.0 - w) * eps_uncond + w * eps_cond;
}

State guided_eps(const Denoiser& denoiser, const State& x, int t, const Conditioning& cond, double w) {
  if (w == 1.0) return denoiser.predict_eps(x, t, cond);
  if (w == 0.0) return denoiser.predict_eps(x, t, cond.as_null());
  return cfg_combine(denoiser.predict_eps(x, t, cond.as_null()), denoiser.predict_eps(x, t, cond), w);
}

State oracle_eps(const State& x_t, int t, const NoiseSchedule& sched, const State& mean, const State& variance) {
  check_same_size(x_t, mean, "oracle_eps");
  check_same_size(x_t, variance, "oracle_eps");
  if ((variance < 0.0).any()) throw InvalidArgument("oracle variance must be >= 0");
  const double ab = sched.alpha_bar(t);
  if (ab >= 1.0) return State::Zero(x_t.size());
  const double sab = std::sqrt(ab);
  // Gaussian posterior mean of x0 given x_t, componentwise.
  const State posterior = (mean * (1.0 - ab) + sab * variance * x_t) / (ab * variance + (1.0 - ab));
  return (x_t - sab * posterior) / std::sqrt(1.0 - ab);
}

Trajectory ddim_sample(const Denoiser& denoiser, const Conditioning& cond, const NoiseSchedule& sched, int substeps,
                       const State& x_start, const SampleOptions& options) {
  const auto ts = substep_timesteps(sched.steps(), substeps);
  const int start = options.start_index < 0 ? substeps : options.start_index;
  if (start > substeps) throw InvalidArgument("start_index exceeds substeps");

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Trajectory traj;
  traj.timesteps.push_back(ts[start]);
  traj.states.push_back(x_start);
  State x = x_start;
  for (int i = start; i > 0; --i) {
    const State eps = guided_eps(denoiser, x, ts[i], cond, options.guidance);
    if (options.eta > 0.0) {
      State z(x.size());
      for (auto& v : z) v = normal(rng);
      x = ddim_step(x, ts[i], ts[i - 1], eps, sched, options.eta, &z);
    } else {
      x = ddim_step(x, ts[i], ts[i - 1], eps, sched);
    }
    if (!x.allFinite()) throw NumericalError("non-finite state at timestep " + std::to_string(ts[i - 1]));
    traj.timesteps.push_back(ts[i - 1]);
    traj.states.push_back(x);
  }
  return traj;
}

Trajectory ddim_invert(const Denoiser& denoiser, const Conditioning& cond, const NoiseSchedule& sched, int substeps,
                       const State& x0, const InversionOptions& options) {
  const auto ts = substep_timesteps(sched.steps(), substeps);
  const int stop = options.stop_index < 0 ? substeps : options.stop_index;
  if (stop > substeps) throw InvalidArgument("stop_index exceeds substeps");
  if (options.max_refine_iters < 0) throw InvalidArgument("max_refine_iters must be >= 0");

  Trajectory traj;
  traj.timesteps.push_back(ts[0]);
  traj.states.push_back(x0);
  State x = x0;
  for (int i = 0; i < stop; ++i) {
    const int t = ts[i], t_next = ts[i + 1];
    const double ab = sched.alpha_bar(t), ab_next = sched.alpha_bar(t_next);
    // Inverse of ddim_step(x_next, t_next, t, eps): solve for x_next given eps.
    auto reverse = [&](const State& eps) {
      const State x0_hat = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
      return State(std::sqrt(ab_next) * x0_hat + std::sqrt(1.0 - ab_next) * eps);
    };
    State next = reverse(guided_eps(denoiser, x, t_next, cond, options.guidance));
    for (int it = 0; it < options.max_refine_iters; ++it) {
      State refined = reverse(guided_eps(denoiser, next, t_next, cond, options.guidance));
      const double change = std::sqrt((refined - next).square().mean());
      next = std::move(refined);
      if (change <= options.tolerance) break;
    }
    if (!next.allFinite()) throw NumericalError("non-finite inversion state at timestep " + std::to_string(t_next));
    x = std::move(next);
    traj.timesteps.push_back(t_next);
    traj.states.push_back(x);
  }
  return traj;
}

Grid encode_toy(const Grid& x, int factor) {
  if (factor < 1) throw InvalidArgument("encoder factor must be >= 1");
  const Dims& d = x.dims();
  for (int n : d)
    if (n % factor) throw InvalidArgument("dims " + to_string(d) + " not divisible by " + std::to_string(factor));
  const Dims out{d[0] / factor, d[1] / factor, d[2] / factor};
  Grid z(out, x.spacing() * factor, 0.0);
  const double inv = 1.0 / (double(factor) * factor * factor);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) z(i / factor, j / factor, k / factor) += x(i, j, k);
  z.values() *= inv;
  return z;
}

Conditioning condition_from_latent(const Grid& z, int factor) {
  Conditioning c;
  c.latent = trilinear_upsample(z, {factor, factor, factor}).values();
  return c;
}

Eigen::MatrixXd control_from_labels(const LabelVolume& labels, int factor) {
  if (factor < 1) throw InvalidArgument("control factor must be >= 1");
  const Dims& d = labels.dims();
  for (int n : d)
    if (n % factor) throw InvalidArgument("dims " + to_string(d) + " not divisible by " + std::to_string(factor));
  const Dims out{d[0] / factor, d[1] / factor, d[2] / factor};
  Eigen::MatrixXd control = Eigen::MatrixXd::Zero(labels.num_labels(), voxel_count(out));
  const double inv = 1.0 / (double(factor) * factor * factor);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i)
        control(labels(i, j, k), linear_index(out, i / factor, j / factor, k / factor)) += inv;
  return control;
}

}  // namespace morphcf
