#pragma once

// Two-sample statistics: effect sizes, Welch's t-test, correlation.

#include <Eigen/Core>

#include <string>

#include "morphcf/error.hpp"

namespace morphcf {

enum class EffectBucket { small, medium, large };

const char* to_string(EffectBucket b);

/// Boundary values fall in the lower bucket: |d| <= 0.2 small, <= 0.5 medium, else large.
inline constexpr double kSmallEffect = 0.2;
inline constexpr double kMediumEffect = 0.5;
EffectBucket effect_bucket(double abs_d);

struct CohenD {
  double d = 0.0;  // absolute standardized mean difference
  EffectBucket bucket = EffectBucket::small;
};

/// |mean(x) - mean(y)| / pooled sd with (n-1)-weighted pooled variance.
CohenD cohen_d(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

double mean(const Eigen::VectorXd& x);
/// Sample variance (n - 1 denominator).
double sample_variance(const Eigen::VectorXd& x);

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
/// |pred - ref|^2 / |ref|^2.
double nmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& ref);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// Two-sided tail probability P(|T| >= |t|) of Student's t with df degrees of freedom.
double student_t_two_sided(double t, double df);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

WelchResult welch_t(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

double bonferroni_threshold(double alpha, int tests);

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
double ks_uniform_distance(Eigen::VectorXd sample);

}  // namespace morphcf
