#pragma once

// Image-space similarity and distribution distances.

#include <Eigen/Core>

#include <cstdint>

#include "morphcf/volume.hpp"

namespace morphcf {

struct MsSsimOptions {
  int levels = 5;  // upper bound; reduced to what the volume supports
  int window = 11;
  double sigma = 1.5;
  double data_range = 1.0;
};

/// Standard five-level weights.
inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Number of dyadic levels usable for the given dims and window (0 if none).
int ms_ssim_levels(const Dims& dims, const MsSsimOptions& options = {});

/// Multi-scale SSIM with a separable 3D Gaussian window (valid convolution),
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2, contrast-structure terms clamped at 0,
/// weights renormalized over the levels used.
double ms_ssim_3d(const Grid& a, const Grid& b, const MsSsimOptions& options = {});

/// |synth - real| / real * 100.
double relative_msssim_diff(double synth_score, double real_score);

enum class KernelKind { rbf, linear };

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  double bandwidth = 0.0;  // rbf: exp(-|x-y|^2 / (2 h^2)); 0 picks the median heuristic
  int heuristic_subsample = 1000;
};

/// Median pooled pairwise distance over an evenly strided subsample.
double median_heuristic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int subsample = 1000);

struct MmdResult {
  double value = 0.0;      // squared MMD
  double bandwidth = 0.0;  // rbf bandwidth used (0 for linear)
  bool unbiased = true;    // false when a singleton set forced the biased estimator
};

/// Squared MMD between row-sample sets. Unbiased U-statistic by default (can be
/// slightly negative); falls back to the biased V-statistic when either set has
/// fewer than two samples.
MmdResult mmd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& kernel = {});

/// Biased V-statistic; nonnegative and exactly zero for identical sets.
MmdResult mmd_biased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& kernel = {});

struct PermutationTest {
  double statistic = 0.0;
  double p_value = 1.0;
  double null_quantile_95 = 0.0;
  std::vector<double> null_distribution;
};

/// Permutation null of the unbiased statistic; the kernel matrix is streamed in
/// row blocks so memory stays linear in the sample count.
PermutationTest mmd_permutation_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& kernel,
                                     int permutations, std::uint64_t seed);

}  // namespace morphcf
