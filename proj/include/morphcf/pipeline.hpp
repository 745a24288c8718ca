#pragma once

// End-to-end counterfactual generation:
//   SCM counterfactual -> target ROI volumes -> mask edits -> latent DDIM inversion
//   under the original conditioning -> regeneration under the counterfactual
//   metadata and edited mask -> decoding through the latent-conditioned path.

#include <functional>
#include <optional>

#include "morphcf/cmg.hpp"
#include "morphcf/denoiser.hpp"
#include "morphcf/phantom.hpp"
#include "morphcf/scm.hpp"
#include "morphcf/study.hpp"

namespace morphcf {

/// z-scoring of metadata entries for denoiser conditioning.
struct MetadataScaler {
  std::vector<std::string> names;
  Eigen::VectorXd mean, sd;

  Eigen::VectorXd transform(const Assignment& values) const;
  static MetadataScaler fit(const std::vector<SubjectRecord>& cohort);
  static MetadataScaler identity(const std::vector<std::string>& names);
};

nlohmann::json to_json(const MetadataScaler& s);
MetadataScaler metadata_scaler_from_json(const nlohmann::json& j);

struct PipelineConfig {
  int encoder_factor = 2;
  int substeps = 50;
  double tau = 0.8;            // fraction of substeps inverted before regenerating
  double guidance = 2.0;       // latent denoiser guidance
  double decoder_guidance = 1.0;
  RankMode rank_mode = RankMode::difference;
  std::uint64_t seed = 0;
  int max_refine_iters = 50;
  double refine_tolerance = 1e-12;
  bool null_diagnostic = true;  // also regenerate under the original conditioning
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

struct DiffusionModels {
  const Denoiser* latent = nullptr;   // metadata + control conditioned, on encoded volumes
  const Denoiser* decoder = nullptr;  // conditioned on the upsampled latent
  NoiseSchedule schedule;
  MetadataScaler scaler;
};

struct CounterfactualRequest {
  std::string id;
  Grid image;
  LabelVolume labels;
  ProbabilityVolume probabilities;
  Assignment metadata;
  Intervention intervention;
};

/// Inversion products that depend only on the original conditioning; reusable
/// across interventions on the same subject.
struct SubjectInversion {
  Grid latent;           // encoded volume
  State latent_partial;  // latent DDIM state at substep start_index
  int start_index = 0;
  State image_noise;     // decoder-inverted image at t = T
  Conditioning original_cond;
};

struct PipelineDiagnostics {
  double null_reconstruction_rms = -1.0;  // -1 when not computed
  int start_index = 0;
};

struct CounterfactualResult {
  std::string id;
  Grid volume;
  LabelVolume edited_labels;
  std::vector<MaskEditPlan> plans;
  Observation scm_values;                       // SCM counterfactual of every node
  std::map<std::string, double> edited_volumes;  // ROI node -> mm3 of the edited label map
  PipelineDiagnostics diagnostics;
};

/// SCM observation of a subject: metadata plus volumes measured from the labels.
Observation measured_observation(const LabelVolume& labels, const Assignment& metadata, const CausalGraph& scm);

Conditioning make_condition(const DiffusionModels& models, const Assignment& metadata, const LabelVolume& labels,
                            int factor);

SubjectInversion invert_subject(const CounterfactualRequest& req, const DiffusionModels& models,
                                const PipelineConfig& config);

CounterfactualResult generate_counterfactual(const CounterfactualRequest& req, const CausalGraph& scm,
                                             const DiffusionModels& models, const PipelineConfig& config,
                                             const SubjectInversion* cached = nullptr);

struct BatchItem {
  std::optional<CounterfactualResult> result;
  std::string error;
};

/// Order-preserving; per-item errors are captured, not rethrown.
std::vector<BatchItem> batch_generate(const std::vector<CounterfactualRequest>& requests, const CausalGraph& scm,
                                      const DiffusionModels& models, const PipelineConfig& config, int jobs = 1);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

/// Oracle models for phantom volumes: the latent denoiser is a template oracle
/// over the tissue intensities, the decoder a template oracle on the latent.
struct OracleModels {
  TemplateOracleDenoiser latent;
  TemplateOracleDenoiser decoder;
  DiffusionModels view() const;
  NoiseSchedule schedule;
  MetadataScaler scaler;
};
OracleModels make_oracle_models(const NoiseSchedule& sched, int num_rois, const MetadataScaler& scaler,
                                double variance = 0.01);

// ---------------------------------------------------------------------------
// Cohort study

struct SubjectOutcome {
  std::string id;
  std::string group;     // real group
  std::string cf_group;  // "cf-case" for controls, "cf-control" for cases
  std::map<std::string, double> real_volumes, cf_volumes;  // roi_k and wm (mm3)
  bool exhausted = false;
  double null_reconstruction_rms = -1.0;
  std::string error;
};

struct CohortStudy {
  std::vector<SubjectOutcome> outcomes;
  StudyTable table;
  int failures = 0;
};

/// Renders every subject, flips its diagnosis, and assembles the study table
/// (real and counterfactual rows, ROI volumes plus the supratentorial covariate).
CohortStudy run_cohort_study(const PhantomSpec& spec, const std::vector<SubjectRecord>& cohort,
                             const CausalGraph& scm, const DiffusionModels& models, const PipelineConfig& config,
                             int jobs = 1);

std::vector<std::string> roi_names(int num_rois);

}  // namespace morphcf
