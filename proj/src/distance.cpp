#include "morphcf/distance.hpp"

#include <limits>
#include <vector>

namespace morphcf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform of sampled function f with sample spacing h
// (Felzenszwalb & Huttenlocher lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, double h, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double h2 = h * h;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + h2 * q * q) - (f[p] + h2 * p * p)) / (2.0 * h2 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = h * (q - v[j]);
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace

Eigen::ArrayXd squared_distance_transform(const Dims& dims, const Spacing& spacing, const Mask& mask) {
  if (mask.size() != voxel_count(dims)) throw InvalidArgument("mask size does not match dims");
  Eigen::ArrayXd out(mask.size());
  for (Eigen::Index n = 0; n < mask.size(); ++n) out[n] = mask[n] ? 0.0 : kInf;

  const int longest = std::max({dims[0], dims[1], dims[2]});
  std::vector<double> f(longest), d(longest), z(longest + 1);
  std::vector<int> v(longest);

  for (int axis = 0; axis < 3; ++axis) {
    const int n = dims[axis];
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    f.resize(n);
    d.resize(n);
    for (int p = 0; p < dims[a1]; ++p)
      for (int q = 0; q < dims[a2]; ++q) {
        int idx[3];
        idx[a1] = p;
        idx[a2] = q;
        for (int t = 0; t < n; ++t) {
          idx[axis] = t;
          f[t] = out[linear_index(dims, idx[0], idx[1], idx[2])];
        }
        edt_1d(f, spacing[axis], d, v, z);
        for (int t = 0; t < n; ++t) {
          idx[axis] = t;
          out[linear_index(dims, idx[0], idx[1], idx[2])] = d[t];
        }
      }
  }
  return out;
}

Eigen::ArrayXd signed_distance(const Dims& dims, const Spacing& spacing, const Mask& region) {
  const Eigen::ArrayXd outside = squared_distance_transform(dims, spacing, region).sqrt();
  const Mask complement = !region;
  const Eigen::ArrayXd inside = squared_distance_transform(dims, spacing, complement).sqrt();
  // Empty region or empty complement: cap at the grid diagonal.
  const double extent = Eigen::Vector3d(dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]).norm();
  return region.select(-inside.min(extent), outside.min(extent));
}

}  // namespace morphcf
