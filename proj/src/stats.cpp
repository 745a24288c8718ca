#include "morphcf/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace morphcf {

const char* to_string(EffectBucket b) {
  switch (b) {
    case EffectBucket::small: return "small";
    case EffectBucket::medium: return "medium";
    case EffectBucket::large: return "large";
  }
  return "unknown";
}

EffectBucket effect_bucket(double abs_d) {
  if (abs_d <= kSmallEffect) return EffectBucket::small;
  if (abs_d <= kMediumEffect) return EffectBucket::medium;
  return EffectBucket::large;
}

double mean(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw UndefinedStatistic("mean of an empty sample");
  return x.mean();
}

double sample_variance(const Eigen::VectorXd& x) {
  if (x.size() < 2) throw UndefinedStatistic("variance needs at least two values");
  return (x.array() - x.mean()).square().sum() / double(x.size() - 1);
}

CohenD cohen_d(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() < 2 || y.size() < 2) throw UndefinedStatistic("cohen_d needs at least two values per sample");
  const double nx = double(x.size()), ny = double(y.size());
  const double pooled = ((nx - 1) * sample_variance(x) + (ny - 1) * sample_variance(y)) / (nx + ny - 2);
  if (!(pooled > 0.0)) throw UndefinedStatistic("cohen_d undefined: pooled standard deviation is zero");
  CohenD r;
  r.d = std::abs(x.mean() - y.mean()) / std::sqrt(pooled);
  r.bucket = effect_bucket(r.d);
  return r;
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2) throw UndefinedStatistic("pearson needs equal-length series of >= 2");
  const Eigen::ArrayXd dx = x.array() - x.mean(), dy = y.array() - y.mean();
  const double sxx = dx.square().sum(), syy = dy.square().sum();
  if (!(sxx > 0.0) || !(syy > 0.0)) throw UndefinedStatistic("pearson undefined for a constant series");
  return std::clamp((dx * dy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

double nmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref) {
  if (pred.size() != ref.size() || pred.size() < 1) throw UndefinedStatistic("nmse needs equal-length series");
  const double norm = ref.squaredNorm();
  if (!(norm > 0.0)) throw UndefinedStatistic("nmse undefined for a zero reference");
  return (pred - ref).squaredNorm() / norm;
}

namespace {

// Continued fraction for I_x(a, b) by the modified Lentz method.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int max_iter = 10000;
  constexpr double eps = 1e-16, tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw InvalidArgument("incomplete_beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete_beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The continued fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0)) throw InvalidArgument("degrees of freedom must be > 0");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

WelchResult welch_t(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() < 2 || y.size() < 2) throw UndefinedStatistic("welch_t needs at least two values per sample");
  const double nx = double(x.size()), ny = double(y.size());
  const double vx = sample_variance(x) / nx, vy = sample_variance(y) / ny;
  const double se2 = vx + vy;
  if (!(se2 > 0.0)) throw UndefinedStatistic("welch_t undefined: both samples are constant");
  WelchResult r;
  r.t = (x.mean() - y.mean()) / std::sqrt(se2);
  r.df = se2 * se2 / (vx * vx / (nx - 1) + vy * vy / (ny - 1));
  r.p = std::clamp(student_t_two_sided(r.t, r.df), 0.0, 1.0);
  return r;
}

double bonferroni_threshold(double alpha, int tests) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  if (tests < 1) throw InvalidArgument("number of tests must be >= 1");
  return alpha / tests;
}

double ks_uniform_distance(Eigen::VectorXd sample) {
  if (sample.size() == 0) throw UndefinedStatistic("KS distance of an empty sample");
  std::sort(sample.data(), sample.data() + sample.size());
  const double n = double(sample.size());
  double d = 0.0;
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    const double u = std::clamp(sample[i], 0.0, 1.0);
    d = std::max({d, (i + 1) / n - u, u - i / n});
  }
  return d;
}

}  // namespace morphcf
