#pragma once

// Dense 3D volumes. Memory order everywhere is x-fastest:
//   linear = i + nx * (j + ny * k)

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "morphcf/error.hpp"

namespace morphcf {

using Dims = std::array<int, 3>;
using Spacing = Eigen::Vector3d;

inline std::int64_t voxel_count(const Dims& d) {
  return static_cast<std::int64_t>(d[0]) * d[1] * d[2];
}

inline std::string to_string(const Dims& d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) + ")";
}

inline void check_dims(const Dims& d) {
  for (int n : d)
    if (n <= 0) throw InvalidArgument("dims must be positive, got " + to_string(d));
}

inline void check_spacing(const Spacing& s) {
  for (int a = 0; a < 3; ++a)
    if (!(s[a] > 0.0) || !std::isfinite(s[a]))
      throw InvalidArgument("spacing must be finite and > 0");
}

struct VoxelIndex {
  int i = 0, j = 0, k = 0;

  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
  friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

inline bool inside(const Dims& d, const VoxelIndex& v) {
  return v.i >= 0 && v.j >= 0 && v.k >= 0 && v.i < d[0] && v.j < d[1] && v.k < d[2];
}

inline std::int64_t linear_index(const Dims& d, int i, int j, int k) {
  return i + static_cast<std::int64_t>(d[0]) * (j + static_cast<std::int64_t>(d[1]) * k);
}

inline std::int64_t linear_index(const Dims& d, const VoxelIndex& v) {
  return linear_index(d, v.i, v.j, v.k);
}

inline VoxelIndex voxel_at(const Dims& d, std::int64_t linear) {
  VoxelIndex v;
  v.i = static_cast<int>(linear % d[0]);
  linear /= d[0];
  v.j = static_cast<int>(linear % d[1]);
  v.k = static_cast<int>(linear / d[1]);
  return v;
}

/// Scalar field on a regular grid with physical spacing in millimeters.
template <typename Scalar>
class VoxelGrid {
 public:
  using Values = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  VoxelGrid() = default;

  VoxelGrid(const Dims& dims, const Spacing& spacing, Scalar fill = Scalar(0))
      : dims_(dims), spacing_(spacing) {
    check_dims(dims_);
    check_spacing(spacing_);
    values_ = Values::Constant(voxel_count(dims_), fill);
  }

  VoxelGrid(const Dims& dims, const Spacing& spacing, Values values)
      : dims_(dims), spacing_(spacing), values_(std::move(values)) {
    check_dims(dims_);
    check_spacing(spacing_);
    if (values_.size() != voxel_count(dims_))
      throw InvalidArgument("value count " + std::to_string(values_.size()) +
                            " does not match dims " + to_string(dims_));
    if (!values_.allFinite()) throw InvalidArgument("voxel values must be finite");
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::int64_t size() const { return values_.size(); }
  double voxel_volume() const { return spacing_.prod(); }

  const Values& values() const { return values_; }
  Values& values() { return values_; }

  Scalar operator()(int i, int j, int k) const { return values_[linear_index(dims_, i, j, k)]; }
  Scalar& operator()(int i, int j, int k) { return values_[linear_index(dims_, i, j, k)]; }
  Scalar operator[](const VoxelIndex& v) const { return values_[linear_index(dims_, v)]; }

  template <typename Other>
  VoxelGrid<Other> cast() const {
    return VoxelGrid<Other>(dims_, spacing_, values_.template cast<Other>().eval());
  }

  friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && (a.values_ == b.values_).all();
  }

 private:
  Dims dims_{1, 1, 1};
  Spacing spacing_ = Spacing::Ones();
  Values values_ = Values::Zero(1);
};

using Grid = VoxelGrid<double>;
using GridF = VoxelGrid<float>;

// ---------------------------------------------------------------------------
// Labels

using Label = std::int16_t;

inline constexpr Label kBackground = 0;
inline constexpr Label kWhiteMatter = 1;
inline constexpr Label kCsf = 2;

/// Label of cortical ROI k (1-based).
inline constexpr Label roi_label(int k) { return static_cast<Label>(kCsf + k); }
inline constexpr int roi_number(Label l) { return l - kCsf; }
inline constexpr bool is_roi(Label l) { return l > kCsf; }

/// Hard label map over the set {BACKGROUND, WM, CSF, ROI_1..ROI_M}.
class LabelVolume {
 public:
  using Labels = Eigen::Array<Label, Eigen::Dynamic, 1>;

  LabelVolume() = default;

  LabelVolume(const Dims& dims, const Spacing& spacing, int num_rois, Labels labels)
      : dims_(dims), spacing_(spacing), num_rois_(num_rois), labels_(std::move(labels)) {
    check_dims(dims_);
    check_spacing(spacing_);
    if (num_rois_ < 0) throw InvalidArgument("num_rois must be >= 0");
    if (labels_.size() != voxel_count(dims_))
      throw InvalidArgument("label count does not match dims " + to_string(dims_));
    for (Eigen::Index n = 0; n < labels_.size(); ++n)
      if (!valid_label(labels_[n]))
        throw InvalidArgument("label " + std::to_string(labels_[n]) + " outside declared set");
  }

  LabelVolume(const Dims& dims, const Spacing& spacing, int num_rois, Label fill = kBackground)
      : LabelVolume(dims, spacing, num_rois, Labels::Constant(voxel_count(dims), fill)) {}

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  int num_rois() const { return num_rois_; }
  int num_labels() const { return num_rois_ + 3; }
  std::int64_t size() const { return labels_.size(); }
  double voxel_volume() const { return spacing_.prod(); }

  bool valid_label(Label l) const { return l >= 0 && l < num_labels(); }

  const Labels& labels() const { return labels_; }
  Label operator[](std::int64_t n) const { return labels_[n]; }
  Label operator[](const VoxelIndex& v) const { return labels_[linear_index(dims_, v)]; }
  Label operator()(int i, int j, int k) const { return labels_[linear_index(dims_, i, j, k)]; }

  /// Mutation is checked against the declared label set.
  void set(std::int64_t n, Label l) {
    if (!valid_label(l)) throw InvalidArgument("label " + std::to_string(l) + " outside declared set");
    labels_[n] = l;
  }

  friend bool operator==(const LabelVolume& a, const LabelVolume& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.num_rois_ == b.num_rois_ &&
           (a.labels_ == b.labels_).all();
  }

 private:
  Dims dims_{1, 1, 1};
  Spacing spacing_ = Spacing::Ones();
  int num_rois_ = 0;
  Labels labels_ = Labels::Zero(1);
};

/// Per-voxel probability simplex over the label set of a LabelVolume.
class ProbabilityVolume {
 public:
  /// Column n holds the probability vector of voxel n.
  using Table = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;

  ProbabilityVolume() = default;

  ProbabilityVolume(const Dims& dims, int num_labels, Table probs)
      : dims_(dims), probs_(std::move(probs)) {
    check_dims(dims_);
    if (num_labels < 3) throw InvalidArgument("probability volume needs >= 3 labels");
    if (probs_.rows() != num_labels || probs_.cols() != voxel_count(dims_))
      throw InvalidArgument("probability table shape does not match dims/labels");
    for (Eigen::Index n = 0; n < probs_.cols(); ++n) {
      const auto col = probs_.col(n);
      if ((col.array() < 0.0).any() || std::abs(col.sum() - 1.0) > 1e-6)
        throw InvalidArgument("voxel " + std::to_string(n) + " is not a probability vector");
    }
  }

  const Dims& dims() const { return dims_; }
  int num_labels() const { return static_cast<int>(probs_.rows()); }
  const Table& table() const { return probs_; }

  double operator()(std::int64_t voxel, Label l) const { return probs_(l, voxel); }
  double operator()(const VoxelIndex& v, Label l) const { return probs_(l, linear_index(dims_, v)); }

  Label argmax(std::int64_t voxel) const {
    Eigen::Index best;
    probs_.col(voxel).maxCoeff(&best);
    return static_cast<Label>(best);
  }

  /// Number of voxels where argmax disagrees with `labels` (warn-level consistency check).
  std::int64_t argmax_mismatches(const LabelVolume& labels) const {
    if (labels.dims() != dims_) throw InvalidArgument("dims mismatch");
    std::int64_t n = 0;
    for (std::int64_t v = 0; v < labels.size(); ++v) n += argmax(v) != labels[v];
    return n;
  }

 private:
  Dims dims_{1, 1, 1};
  Table probs_;
};

// ---------------------------------------------------------------------------
// Geometry

/// Corner-aligned trilinear upsampling: output voxel 0 and n*f-1 coincide with
/// input voxels 0 and n-1 along every axis.
template <typename Scalar>
VoxelGrid<Scalar> trilinear_upsample(const VoxelGrid<Scalar>& grid, const std::array<int, 3>& factor) {
  for (int f : factor)
    if (f < 1) throw InvalidArgument("upsampling factor must be >= 1");
  const Dims& in = grid.dims();
  Dims out{in[0] * factor[0], in[1] * factor[1], in[2] * factor[2]};
  Spacing spacing;
  for (int a = 0; a < 3; ++a) spacing[a] = grid.spacing()[a] / factor[a];

  // Per-axis source position: lower index and fractional weight.
  std::array<std::vector<int>, 3> lo;
  std::array<std::vector<double>, 3> frac;
  for (int a = 0; a < 3; ++a) {
    lo[a].resize(out[a]);
    frac[a].resize(out[a]);
    const double scale = out[a] > 1 ? double(in[a] - 1) / double(out[a] - 1) : 0.0;
    for (int o = 0; o < out[a]; ++o) {
      const double pos = o * scale;
      int l = std::min(static_cast<int>(std::floor(pos)), std::max(in[a] - 2, 0));
      lo[a][o] = l;
      frac[a][o] = in[a] > 1 ? pos - l : 0.0;
    }
  }

  typename VoxelGrid<Scalar>::Values values(voxel_count(out));
  for (int k = 0; k < out[2]; ++k) {
    const int k0 = lo[2][k], k1 = std::min(k0 + 1, in[2] - 1);
    const double fz = frac[2][k];
    for (int j = 0; j < out[1]; ++j) {
      const int j0 = lo[1][j], j1 = std::min(j0 + 1, in[1] - 1);
      const double fy = frac[1][j];
      for (int i = 0; i < out[0]; ++i) {
        const int i0 = lo[0][i], i1 = std::min(i0 + 1, in[0] - 1);
        const double fx = frac[0][i];
        auto lerp = [](double a, double b, double t) { return std::lerp(a, b, t); };
        const double c00 = lerp(grid(i0, j0, k0), grid(i1, j0, k0), fx);
        const double c10 = lerp(grid(i0, j1, k0), grid(i1, j1, k0), fx);
        const double c01 = lerp(grid(i0, j0, k1), grid(i1, j0, k1), fx);
        const double c11 = lerp(grid(i0, j1, k1), grid(i1, j1, k1), fx);
        const double c0 = lerp(c00, c10, fy);
        const double c1 = lerp(c01, c11, fy);
        values[linear_index(out, i, j, k)] = static_cast<Scalar>(lerp(c0, c1, fz));
      }
    }
  }
  return VoxelGrid<Scalar>(out, spacing, std::move(values));
}

using AxisPermutation = std::array<int, 3>;

inline void check_permutation(const AxisPermutation& perm) {
  std::array<bool, 3> seen{};
  for (int p : perm) {
    if (p < 0 || p > 2 || seen[p]) throw InvalidArgument("not a permutation of (0,1,2)");
    seen[p] = true;
  }
}

inline AxisPermutation inverse_permutation(const AxisPermutation& perm) {
  check_permutation(perm);
  AxisPermutation inv{};
  for (int a = 0; a < 3; ++a) inv[perm[a]] = a;
  return inv;
}

/// Output axis a is input axis perm[a]; dims and spacing are reordered alike.
template <typename Scalar>
VoxelGrid<Scalar> permute_planes(const VoxelGrid<Scalar>& grid, const AxisPermutation& perm) {
  check_permutation(perm);
  const Dims& in = grid.dims();
  Dims out{in[perm[0]], in[perm[1]], in[perm[2]]};
  Spacing spacing(grid.spacing()[perm[0]], grid.spacing()[perm[1]], grid.spacing()[perm[2]]);
  typename VoxelGrid<Scalar>::Values values(grid.size());
  std::array<int, 3> src{};
  for (int k = 0; k < out[2]; ++k)
    for (int j = 0; j < out[1]; ++j)
      for (int i = 0; i < out[0]; ++i) {
        src[perm[0]] = i;
        src[perm[1]] = j;
        src[perm[2]] = k;
        values[linear_index(out, i, j, k)] = grid(src[0], src[1], src[2]);
      }
  return VoxelGrid<Scalar>(out, spacing, std::move(values));
}

// ---------------------------------------------------------------------------
// Region measurements

inline std::int64_t roi_voxel_count(const LabelVolume& labels, Label roi) {
  if (!labels.valid_label(roi)) throw InvalidArgument("unknown label " + std::to_string(roi));
  return (labels.labels() == roi).count();
}

inline double roi_volume_mm3(const LabelVolume& labels, Label roi) {
  return static_cast<double>(roi_voxel_count(labels, roi)) * labels.voxel_volume();
}

/// Voxel count of every label, indexed by label value.
inline std::vector<std::int64_t> label_histogram(const LabelVolume& labels) {
  std::vector<std::int64_t> h(labels.num_labels(), 0);
  for (std::int64_t n = 0; n < labels.size(); ++n) ++h[labels[n]];
  return h;
}

}  // namespace morphcf
