#pragma once

// File formats:
//  * NIfTI-1 single file (.nii): 348-byte header, magic "n+1", vox_offset 352,
//    no extensions, little-endian. float32 -> VoxelGrid<float>; int16/uint8 -> LabelVolume.
//    Only dim[1..3] and pixdim[1..3] are interpreted (qform/sform ignored).
//  * Raw (.json + .bin): JSON header {dims, spacing, dtype:"f32", order:"x-fastest"}
//    with a little-endian float32 payload in the sibling .bin file. An optional
//    "channels" key stores channel-major multi-channel data (probability maps).

#include <filesystem>
#include <variant>

#include "morphcf/volume.hpp"

namespace morphcf {

enum class NiftiDtype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

using VolumeData = std::variant<GridF, LabelVolume>;

/// Dispatches on extension (.nii or .json).
VolumeData read_volume(const std::filesystem::path& path);

GridF read_grid(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path, int num_rois = -1);

void write_volume(const GridF& grid, const std::filesystem::path& path);
void write_volume(const LabelVolume& labels, const std::filesystem::path& path,
                  NiftiDtype dtype = NiftiDtype::int16);

/// Raw float32 format; `path` names the .json header, payload goes to path with .bin.
void write_raw(const GridF& grid, const std::filesystem::path& json_path);
GridF read_raw(const std::filesystem::path& json_path);

void write_probabilities(const ProbabilityVolume& probs, const Spacing& spacing,
                         const std::filesystem::path& json_path);
ProbabilityVolume read_probabilities(const std::filesystem::path& json_path);

}  // namespace morphcf
