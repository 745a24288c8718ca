#pragma once

// Synthetic brain phantoms with known causal ground truth.
//
// Geometry: a ball of white matter at the grid center, wrapped by a gray-matter
// layer split into M azimuthal sectors (one per ROI), with CSF filling the rest
// of a spherical skull. Tissue is assigned by distance from the center: WM takes
// the innermost voxels, then each sector's ROI takes its innermost remaining
// voxels, so requested volumes are rendered exactly (to the nearest voxel).

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphcf/scm.hpp"
#include "morphcf/volume.hpp"

namespace morphcf {

struct PhantomSpec {
  Dims dims{48, 48, 48};
  Spacing spacing = Spacing::Ones();
  int num_rois = 6;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  // Nominal shell radii (mm): used for default volumes and validation.
  double wm_radius_mm = 12.0;
  double gm_radius_mm = 17.0;
  double skull_radius_mm = 22.0;

  /// Softmax temperature of the probability map, in voxels.
  double temperature_voxels = 1.0;
  /// Rotation of the sector boundaries, keeps them off grid planes.
  double sector_offset_rad = 0.1234;
};

/// Throws InvalidArgument unless M >= 1 and WM < GM < skull < grid boundary.
void validate(const PhantomSpec& spec);

nlohmann::json to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);

/// Tissue intensities of the noiseless rendering.
struct TissueIntensity {
  static constexpr double background = 0.0;
  static constexpr double csf = 0.25;
  static constexpr double gray = 0.55;
  static constexpr double white = 0.85;
};

double tissue_intensity(Label l);

struct SubjectRecord {
  std::string id;
  std::string group;                      // "control" or "case"
  std::map<std::string, double> metadata;  // age, sex, diagnosis, ...
  std::vector<double> roi_volumes_mm3;     // entry k-1 is ROI k
  double wm_volume_mm3 = 0.0;
};

/// SCM node name carrying the volume of ROI k (1-based) and of white matter.
std::string roi_node(int k);
inline const std::string kWhiteMatterNode = "wm";

/// Full SCM observation of a record: metadata plus wm and ROI volumes.
Observation to_observation(const SubjectRecord& r);

/// Nominal volumes implied by the shell radii.
double nominal_wm_volume_mm3(const PhantomSpec& spec);
double nominal_roi_volume_mm3(const PhantomSpec& spec, int roi);

/// Ground truth used by the phantom studies: roots age ~ N(50,10), sex and
/// diagnosis ~ Bernoulli(0.5); wm depends on age and sex; every ROI depends on
/// age, sex and diagnosis, except the last ROI which has no diagnosis effect.
CausalGraph default_ground_truth(const PhantomSpec& spec, double diagnosis_effect_mm3 = -60.0);

/// Ancestral sampling through `gt`. Deterministic given seed.
std::vector<SubjectRecord> sample_cohort(const PhantomSpec& spec, const CausalGraph& gt, int n,
                                         std::uint64_t seed);

struct PhantomVolumes {
  Grid image;
  LabelVolume labels;
  ProbabilityVolume probabilities;
};

/// Labels only (no distance transforms); throws CapacityError naming the ROI.
LabelVolume render_labels(const PhantomSpec& spec, const SubjectRecord& record);

/// Signed-distance softmax over every label class.
ProbabilityVolume label_probabilities(const LabelVolume& labels, double temperature_voxels);

/// Intensity image of a label map with optional Gaussian noise.
Grid render_image(const LabelVolume& labels, double noise_sigma, std::mt19937_64& rng);

PhantomVolumes render_phantom(const PhantomSpec& spec, const SubjectRecord& record);

/// Cohort manifest: id, group, metadata columns, wm_mm3, roi_1..roi_M.
/// An empty cohort still gets the full header: age, diagnosis, sex, wm and `num_rois` ROI columns.
void write_manifest(const std::vector<SubjectRecord>& cohort, int num_rois, const std::filesystem::path& path);
std::vector<SubjectRecord> read_manifest(const std::filesystem::path& path);

}  // namespace morphcf
