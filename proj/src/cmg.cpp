#include "morphcf/cmg.hpp"

#include <algorithm>
#include <cmath>

namespace morphcf {

const char* to_string(RankMode m) { return m == RankMode::difference ? "difference" : "ratio"; }
const char* to_string(EditDirection d) { return d == EditDirection::grow ? "grow" : "shrink"; }

RankMode parse_rank_mode(const std::string& s) {
  if (s == "difference") return RankMode::difference;
  if (s == "ratio") return RankMode::ratio;
  throw InvalidArgument("unknown rank mode '" + s + "' (expected difference or ratio)");
}

nlohmann::json to_json(const MaskEditPlan& p) {
  nlohmann::json flips = nlohmann::json::array();
  for (const auto& f : p.flips) flips.push_back({f.voxel.i, f.voxel.j, f.voxel.k, f.from, f.to, f.ring});
  return {{"roi", p.roi},
          {"direction", to_string(p.direction)},
          {"d", p.direction == EditDirection::grow ? p.budget : -p.budget},
          {"achieved", p.achieved},
          {"exhausted", p.exhausted},
          {"flips_per_ring", p.flips_per_ring},
          {"flips", flips}};
}

std::int64_t volume_delta(std::int64_t v_orig_voxels, double target_mm3, const Spacing& spacing) {
  check_spacing(spacing);
  if (!std::isfinite(target_mm3)) throw InvalidArgument("target volume must be finite");
  // llround rounds halfway cases away from zero.
  return std::llround(target_mm3 / spacing.prod()) - v_orig_voxels;
}

namespace {

void check_roi(const LabelVolume& labels, Label roi) {
  if (!labels.valid_label(roi) || !is_roi(roi))
    throw InvalidArgument("label " + std::to_string(roi) + " is not an ROI of this volume");
}

/// Voxels labeled `self` with a face neighbor labeled `other`, lexicographic order.
std::vector<VoxelIndex> interface_voxels(const LabelVolume& labels, Label self, Label other) {
  const Dims& d = labels.dims();
  static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  std::vector<VoxelIndex> out;
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        if (labels(i, j, k) != self) continue;
        for (const auto& o : off) {
          const VoxelIndex n{i + o[0], j + o[1], k + o[2]};
          if (inside(d, n) && labels[n] == other) {
            out.push_back({i, j, k});
            break;
          }
        }
      }
  return out;
}

}  // namespace

std::vector<VoxelIndex> grow_candidates(const LabelVolume& labels, Label roi) {
  check_roi(labels, roi);
  return interface_voxels(labels, kCsf, roi);
}

std::vector<VoxelIndex> shrink_candidates(const LabelVolume& labels, Label roi) {
  check_roi(labels, roi);
  return interface_voxels(labels, roi, kCsf);
}

double candidate_score(const ProbabilityVolume& probs, const VoxelIndex& v, Label roi, EditDirection dir,
                       RankMode mode) {
  if (!inside(probs.dims(), v)) throw InvalidArgument("candidate voxel outside the probability volume");
  const double p_roi = probs(v, roi), p_csf = probs(v, kCsf);
  const double gain = dir == EditDirection::grow ? p_roi : p_csf;
  const double loss = dir == EditDirection::grow ? p_csf : p_roi;
  return mode == RankMode::difference ? gain - loss : gain / std::max(loss, kRatioFloor);
}

std::vector<VoxelIndex> rank_candidates(const std::vector<VoxelIndex>& candidates, const ProbabilityVolume& probs,
                                        Label roi, EditDirection dir, RankMode mode) {
  if (roi < 0 || roi >= probs.num_labels()) throw InvalidArgument("ROI label outside probability volume");
  std::vector<std::pair<double, VoxelIndex>> scored;
  scored.reserve(candidates.size());
  for (const auto& c : candidates) scored.emplace_back(candidate_score(probs, c, roi, dir, mode), c);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<VoxelIndex> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

EditResult apply_edit(const LabelVolume& labels, const ProbabilityVolume& probs, Label roi, std::int64_t d,
                      RankMode mode, Mask* frozen) {
  check_roi(labels, roi);
  if (probs.dims() != labels.dims() || probs.num_labels() != labels.num_labels())
    throw InvalidArgument("probability volume does not match the label map");
  if (frozen && frozen->size() != labels.size()) throw InvalidArgument("frozen mask size mismatch");

  EditResult result{labels, {}};
  MaskEditPlan& plan = result.plan;
  plan.roi = roi;
  plan.direction = d >= 0 ? EditDirection::grow : EditDirection::shrink;
  plan.budget = d >= 0 ? d : -d;
  const Label from = plan.direction == EditDirection::grow ? kCsf : roi;
  const Label to = plan.direction == EditDirection::grow ? roi : kCsf;

  std::int64_t remaining = plan.budget;
  for (int ring = 0; remaining > 0; ++ring) {
    auto cands = plan.direction == EditDirection::grow ? grow_candidates(result.labels, roi)
                                                       : shrink_candidates(result.labels, roi);
    if (frozen)
      std::erase_if(cands, [&](const VoxelIndex& v) { return (*frozen)[linear_index(labels.dims(), v)]; });
    if (cands.empty()) break;
    const auto ranked = rank_candidates(cands, probs, roi, plan.direction, mode);
    const auto take = std::min<std::int64_t>(remaining, ranked.size());
    for (std::int64_t n = 0; n < take; ++n) {
      const auto lin = linear_index(labels.dims(), ranked[n]);
      result.labels.set(lin, to);
      if (frozen) (*frozen)[lin] = true;
      plan.flips.push_back({ranked[n], from, to, ring});
    }
    plan.flips_per_ring.push_back(take);
    remaining -= take;
  }
  plan.achieved = plan.budget - remaining;
  plan.exhausted = remaining > 0;
  return result;
}

MultiEditResult apply_edits(const LabelVolume& labels, const ProbabilityVolume& probs,
                            const std::map<Label, std::int64_t>& deltas, RankMode mode) {
  std::vector<std::pair<Label, std::int64_t>> order(deltas.begin(), deltas.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
  MultiEditResult out{labels, {}};
  Mask frozen = Mask::Constant(labels.size(), false);
  for (const auto& [roi, d] : order) {
    auto r = apply_edit(out.labels, probs, roi, d, mode, &frozen);
    out.labels = std::move(r.labels);
    out.plans.push_back(std::move(r.plan));
  }
  return out;
}

}  // namespace morphcf
