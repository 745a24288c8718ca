#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <algorithm>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "morphcf/cmg.hpp"

namespace morphcf::testing {

/// Random label map (CSF-dominated, a few WM and ROI blobs) with random
/// probability columns.
struct RandomMaskCase {
  LabelVolume labels;
  ProbabilityVolume probs;
};

inline RandomMaskCase random_mask_case(std::mt19937_64& rng, int size = 8, int num_rois = 3) {
  const Dims dims{size, size, size};
  LabelVolume labels(dims, Spacing::Ones(), num_rois, kCsf);
  std::uniform_int_distribution<int> coord(0, size - 1), radius(1, 2);
  auto blob = [&](Label l) {
    const int ci = coord(rng), cj = coord(rng), ck = coord(rng), r = radius(rng);
    for (int k = 0; k < size; ++k)
      for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i)
          if (std::abs(i - ci) + std::abs(j - cj) + std::abs(k - ck) <= r) labels.set(linear_index(dims, i, j, k), l);
  };
  blob(kWhiteMatter);
  for (int k = 1; k <= num_rois; ++k) blob(roi_label(k));
  for (int k = 0; k < size; ++k)
    for (int j = 0; j < size; ++j) labels.set(linear_index(dims, 0, j, k), kBackground);

  std::uniform_real_distribution<double> u(0.01, 1.0);
  ProbabilityVolume::Table table(labels.num_labels(), labels.size());
  for (std::int64_t n = 0; n < labels.size(); ++n) {
    for (int l = 0; l < labels.num_labels(); ++l) table(l, n) = u(rng);
    table.col(n) /= table.col(n).sum();
  }
  return {labels, ProbabilityVolume(dims, labels.num_labels(), table)};
}

/// Exhaustive ranking written independently of the library: scan every voxel,
/// keep those that are eligible, score, sort with a full (score, i, j, k) key.
inline std::vector<VoxelIndex> brute_force_ranking(const LabelVolume& labels, const ProbabilityVolume& probs,
                                                   Label roi, bool grow, bool ratio) {
  const Dims& d = labels.dims();
  const Label from = grow ? kCsf : roi, other = grow ? roi : kCsf;
  std::vector<std::tuple<double, int, int, int>> scored;
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        if (labels(i, j, k) != from) continue;
        bool adjacent = false;
        const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (const auto& o : off) {
          const VoxelIndex n{i + o[0], j + o[1], k + o[2]};
          if (inside(d, n) && labels[n] == other) adjacent = true;
        }
        if (!adjacent) continue;
        const VoxelIndex v{i, j, k};
        const double gain = grow ? probs(v, roi) : probs(v, kCsf);
        const double loss = grow ? probs(v, kCsf) : probs(v, roi);
        const double score = ratio ? gain / std::max(loss, 1e-12) : gain - loss;
        scored.emplace_back(-score, i, j, k);
      }
  std::sort(scored.begin(), scored.end());
  std::vector<VoxelIndex> out;
  for (const auto& [s, i, j, k] : scored) out.push_back({i, j, k});
  return out;
}

}  // namespace morphcf::testing
