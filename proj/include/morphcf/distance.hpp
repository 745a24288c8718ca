#pragma once

#include "morphcf/volume.hpp"

namespace morphcf {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Exact squared Euclidean distance (mm^2) from every voxel center to the nearest
/// voxel where `mask` is true. Voxels in the mask get 0; an empty mask yields +inf.
/// Separable lower-envelope algorithm, linear in voxel count.
Eigen::ArrayXd squared_distance_transform(const Dims& dims, const Spacing& spacing, const Mask& mask);

/// Signed distance (mm): negative inside the region (distance to the nearest outside
/// voxel), positive outside (distance to the nearest inside voxel).
Eigen::ArrayXd signed_distance(const Dims& dims, const Spacing& spacing, const Mask& region);

}  // namespace morphcf
