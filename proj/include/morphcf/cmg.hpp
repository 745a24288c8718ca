#pragma once

// Counterfactual mask editing: move an ROI's voxel count to a target by flipping
// voxels across the ROI/CSF interface only, most probable flips first.

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "morphcf/distance.hpp"
#include "morphcf/volume.hpp"

namespace morphcf {

enum class RankMode { difference, ratio };
enum class EditDirection { grow, shrink };

const char* to_string(RankMode m);
const char* to_string(EditDirection d);
RankMode parse_rank_mode(const std::string& s);

inline constexpr double kRatioFloor = 1e-12;

struct Flip {
  VoxelIndex voxel;
  Label from = kCsf;
  Label to = kCsf;
  int ring = 0;
};

struct MaskEditPlan {
  Label roi = 0;
  EditDirection direction = EditDirection::grow;
  std::int64_t budget = 0;  // |d|
  std::vector<Flip> flips;
  std::int64_t achieved = 0;
  bool exhausted = false;
  std::vector<std::int64_t> flips_per_ring;
};

nlohmann::json to_json(const MaskEditPlan& plan);

/// round_half_away_from_zero(target / voxel volume) - v_orig.
std::int64_t volume_delta(std::int64_t v_orig_voxels, double target_mm3, const Spacing& spacing);

/// CSF voxels 6-adjacent to the ROI, lexicographic (i, j, k) order.
std::vector<VoxelIndex> grow_candidates(const LabelVolume& labels, Label roi);
/// ROI voxels 6-adjacent to CSF, lexicographic (i, j, k) order.
std::vector<VoxelIndex> shrink_candidates(const LabelVolume& labels, Label roi);

double candidate_score(const ProbabilityVolume& probs, const VoxelIndex& v, Label roi, EditDirection dir,
                       RankMode mode);

/// Descending score, ties by lexicographic index.
std::vector<VoxelIndex> rank_candidates(const std::vector<VoxelIndex>& candidates, const ProbabilityVolume& probs,
                                        Label roi, EditDirection dir, RankMode mode);

struct EditResult {
  LabelVolume labels;
  MaskEditPlan plan;
};

/// Flip up to |d| voxels (d > 0 grows, d < 0 shrinks), recomputing the boundary
/// after each ring. Voxels set in `frozen` are never flipped; flipped voxels are
/// added to it when provided.
EditResult apply_edit(const LabelVolume& labels, const ProbabilityVolume& probs, Label roi, std::int64_t d,
                      RankMode mode = RankMode::difference, Mask* frozen = nullptr);

struct MultiEditResult {
  LabelVolume labels;
  std::vector<MaskEditPlan> plans;  // in application order
};

/// Several ROIs at once: applied in descending |d| (ties by label), each flipped
/// voxel frozen for the rest of the request.
MultiEditResult apply_edits(const LabelVolume& labels, const ProbabilityVolume& probs,
                            const std::map<Label, std::int64_t>& deltas, RankMode mode = RankMode::difference);

}  // namespace morphcf
