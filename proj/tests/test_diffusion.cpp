#include <doctest.h>

#include <random>

#include "morphcf/denoiser.hpp"
#include "morphcf/diffusion.hpp"

using namespace morphcf;

namespace {

State random_state(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  State s(n);
  for (auto& v : s) v = scale * n01(rng);
  return s;
}

Conditioning plain() {
  Conditioning c;
  c.metadata = Eigen::VectorXd(0);
  return c;
}

double rms(const State& a, const State& b) { return std::sqrt((a - b).square().mean()); }

}  // namespace

TEST_CASE("noise schedules") {
  CHECK(NoiseSchedule({0.5}).alpha_bar(1) == doctest::Approx(0.5));
  const NoiseSchedule two = make_schedule(ScheduleKind::linear, 2, 0.1, 0.3);
  CHECK(two.alpha_bar(0) == 1.0);
  CHECK(two.alpha_bar(1) == doctest::Approx(0.9));
  CHECK(two.alpha_bar(2) == doctest::Approx(0.63));

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> lo(1e-5, 1e-3), hi(1e-2, 0.05);
  std::uniform_int_distribution<int> steps(2, 400);
  for (int rep = 0; rep < 20; ++rep)
    for (const auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
      const NoiseSchedule s = make_schedule(kind, steps(rng), lo(rng), hi(rng));
      for (int t = 1; t <= s.steps(); ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  CHECK_THROWS_AS(NoiseSchedule({0.5, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 0), InvalidArgument);

  // Default cosine bounds only bite on the singular last step.
  const NoiseSchedule cosine = make_schedule(ScheduleKind::cosine, 1000);
  auto curve = [](double t) { return std::pow(std::cos((t / 1000 + 0.008) / 1.008 * M_PI / 2), 2); };
  for (int t = 0; t < 1000; ++t) CHECK(cosine.alpha_bar(t) == doctest::Approx(curve(t) / curve(0)).epsilon(1e-9));
  CHECK(cosine.beta(1000) == 0.999);
  CHECK(cosine.alpha_bar(1000) < 1e-8);
}

TEST_CASE("forward noising") {
  const NoiseSchedule s({0.36});
  const State x0 = State::Constant(1, 1.0), eps = State::Constant(1, 1.0);
  CHECK(q_sample(x0, 0, eps, s)[0] == 1.0);
  CHECK(q_sample(x0, 1, eps, s)[0] == doctest::Approx(1.4));
  CHECK(q_sample(x0, 1, State::Zero(1), s)[0] == doctest::Approx(0.8));
}

TEST_CASE("DDIM step consistency") {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> pick(1, 999);
  for (int rep = 0; rep < 50; ++rep) {
    const NoiseSchedule s = make_schedule(rep % 2 ? ScheduleKind::cosine : ScheduleKind::linear, 1000);
    const State x0 = random_state(27, rng), eps = random_state(27, rng);
    int t = pick(rng), tp = pick(rng);
    if (tp > t) std::swap(t, tp);
    const State step = ddim_step(q_sample(x0, t, eps, s), t, tp, eps, s);
    CHECK((step - q_sample(x0, tp, eps, s)).abs().maxCoeff() < 1e-9);
    CHECK((ddim_step(q_sample(x0, t, eps, s), t, 0, eps, s) - x0).abs().maxCoeff() < 1e-9);
  }
  const NoiseSchedule s = make_schedule(ScheduleKind::linear, 100);
  const State x = random_state(5, rng), e = random_state(5, rng);
  CHECK((ddim_step(x, 50, 20, e, s) == ddim_step(x, 50, 20, e, s)).all());
}

TEST_CASE("guidance combination") {
  const State u = State::Constant(3, 0.0), c = State::Constant(3, 1.0);
  CHECK((cfg_combine(u, c, 0.0) == u).all());
  CHECK((cfg_combine(u, c, 1.0) == c).all());
  CHECK(cfg_combine(u, c, 2.0)[0] == doctest::Approx(2.0));
  std::mt19937_64 rng(23);
  const State a = random_state(4, rng), b = random_state(4, rng);
  const State mid = cfg_combine(a, b, 0.5 * (0.3 + 1.7));
  CHECK((mid - 0.5 * (cfg_combine(a, b, 0.3) + cfg_combine(a, b, 1.7))).abs().maxCoeff() < 1e-12);
}

TEST_CASE("Gaussian oracle") {
  const NoiseSchedule s = make_schedule(ScheduleKind::linear, 1000);
  const State m = State::Constant(2, 0.7);
  // Point mass: eps = (x_t - sqrt(ab) m) / sqrt(1 - ab).
  const State x = State::Constant(2, 0.3);
  const double ab = s.alpha_bar(400);
  const State point = oracle_eps(x, 400, s, m, State::Zero(2));
  CHECK(point[0] == doctest::Approx((0.3 - std::sqrt(ab) * 0.7) / std::sqrt(1 - ab)));
  CHECK(oracle_eps(std::sqrt(ab) * m, 400, s, m, State::Constant(2, 0.5)).abs().maxCoeff() < 1e-14);

  // m = 0, S = 1: compare with a Monte-Carlo regression of eps on x_t.
  std::mt19937_64 rng(24);
  std::normal_distribution<double> n01;
  for (int t : {100, 500, 900}) {
    const double a = s.alpha_bar(t);
    double sxy = 0.0, sxx = 0.0;
    for (int n = 0; n < 1000000; ++n) {
      const double x0 = n01(rng), eps = n01(rng);
      const double xt = std::sqrt(a) * x0 + std::sqrt(1 - a) * eps;
      sxy += xt * eps;
      sxx += xt * xt;
    }
    const double slope = sxy / sxx;
    const double analytic = oracle_eps(State::Constant(1, 1.0), t, s, State::Zero(1), State::Ones(1))[0];
    CHECK(std::abs(analytic - slope) < 0.01 * std::abs(slope));
  }
}

TEST_CASE("DDIM sampling") {
  const NoiseSchedule s = make_schedule(ScheduleKind::linear, 1000);
  const GaussianOracleDenoiser oracle(s, State::Constant(3, 0.2), State::Constant(3, 0.0));
  std::mt19937_64 rng(25);
  const State xT = random_state(3, rng);
  const Trajectory one = ddim_sample(oracle, plain(), s, 1, xT);
  REQUIRE(one.states.size() == 2);
  CHECK((one.back() - 0.2).abs().maxCoeff() < 1e-9);

  // w = 0 only ever queries the unconditional branch.
  struct CondOnly : Denoiser {
    State predict_eps(const State& x, int, const Conditioning& c) const override {
      return c.null ? State(State::Zero(x.size())) : State(State::Constant(x.size(), 5.0));
    }
  } probe;
  const ConstantDenoiser zero(State::Zero(3));
  SampleOptions w0;
  w0.guidance = 0.0;
  CHECK((ddim_sample(probe, plain(), s, 10, xT, w0).back() == ddim_sample(zero, plain(), s, 10, xT, w0).back()).all());
}

TEST_CASE("DDIM inversion") {
  const NoiseSchedule s = make_schedule(ScheduleKind::linear, 1000);
  std::mt19937_64 rng(26);
  const State mean = random_state(8, rng, 0.5), var = (random_state(8, rng).abs() + 0.1) * 0.1;
  const GaussianOracleDenoiser oracle(s, mean, var);
  InversionOptions io;
  io.guidance = 1.0;
  SampleOptions so;
  so.guidance = 1.0;
  for (int rep = 0; rep < 5; ++rep) {
    const State x0 = mean + var.sqrt() * random_state(8, rng);
    const State z = ddim_invert(oracle, plain(), s, 50, x0, io).back();
    CHECK(rms(ddim_sample(oracle, plain(), s, 50, z, so).back(), x0) < 1e-3);
  }
  const Trajectory at_mean = ddim_invert(oracle, plain(), s, 50, mean, io);
  for (const auto& st : at_mean.states) CHECK(st.allFinite());
  CHECK(rms(ddim_sample(oracle, plain(), s, 50, at_mean.back(), so).back(), mean) < 1e-3);

  // Constant eps: the recurrence is affine and inverts exactly at full resolution.
  const NoiseSchedule small = make_schedule(ScheduleKind::linear, 100);
  const ConstantDenoiser constant(random_state(4, rng));
  const State x0 = random_state(4, rng);
  const State z = ddim_invert(constant, plain(), small, 100, x0, io).back();
  CHECK(rms(ddim_sample(constant, plain(), small, 100, z, so).back(), x0) < 1e-12);

  // Partial inversion stops at the requested substep.
  io.stop_index = 10;
  const Trajectory partial = ddim_invert(oracle, plain(), s, 50, mean, io);
  CHECK(partial.states.size() == 11);
}

TEST_CASE("toy encoder") {
  std::mt19937_64 rng(27);
  Grid x({4, 4, 2}, Spacing::Ones());
  for (auto& v : x.values()) v = std::normal_distribution<double>()(rng);
  CHECK(encode_toy(x, 1) == x);

  const Grid c({4, 4, 4}, Spacing::Ones(), 3.0);
  const Grid zc = encode_toy(c, 2);
  CHECK((zc.values() == 3.0).all());
  const Conditioning up = condition_from_latent(zc, 2);
  REQUIRE(up.latent.has_value());
  CHECK(up.latent->size() == 64);
  CHECK((up.latent->array() - 3.0).abs().maxCoeff() < 1e-12);

  Grid blocks({4, 2, 2}, Spacing::Ones());
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 4; ++i) blocks(i, j, k) = i < 2 ? 1.0 + i + j + k : 10.0 * (i + j + k);
  const Grid z = encode_toy(blocks, 2);
  REQUIRE(z.dims() == Dims{2, 1, 1});
  CHECK(z(0, 0, 0) == doctest::Approx(2.5));  // mean of 1 + i + j + k over the block
  CHECK(z(1, 0, 0) == doctest::Approx(35.0));
  CHECK(z.spacing() == Spacing(2, 2, 2));
}
