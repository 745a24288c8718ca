#include "morphcf/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <thread>

namespace morphcf {

// ---------------------------------------------------------------------------
// Metadata scaling

Eigen::VectorXd MetadataScaler::transform(const Assignment& values) const {
  Eigen::VectorXd out(names.size());
  for (std::size_t n = 0; n < names.size(); ++n) {
    auto it = values.find(names[n]);
    if (it == values.end()) throw IncompleteObservation("metadata lacks '" + names[n] + "'");
    out[n] = (it->second - mean[n]) / sd[n];
  }
  return out;
}

MetadataScaler MetadataScaler::fit(const std::vector<SubjectRecord>& cohort) {
  if (cohort.empty()) throw InvalidArgument("cannot fit a metadata scaler on an empty cohort");
  MetadataScaler s;
  for (const auto& [k, v] : cohort.front().metadata) s.names.push_back(k);
  const auto p = s.names.size();
  s.mean = Eigen::VectorXd::Zero(p);
  s.sd = Eigen::VectorXd::Zero(p);
  for (std::size_t n = 0; n < p; ++n) {
    Eigen::VectorXd col(cohort.size());
    for (std::size_t r = 0; r < cohort.size(); ++r) col[r] = cohort[r].metadata.at(s.names[n]);
    s.mean[n] = col.mean();
    const double sd = std::sqrt((col.array() - s.mean[n]).square().mean());
    s.sd[n] = sd > 0 ? sd : 1.0;
  }
  return s;
}

MetadataScaler MetadataScaler::identity(const std::vector<std::string>& names) {
  return {names, Eigen::VectorXd::Zero(names.size()), Eigen::VectorXd::Ones(names.size())};
}

nlohmann::json to_json(const MetadataScaler& s) {
  return {{"names", s.names},
          {"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"sd", std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size())}};
}

MetadataScaler metadata_scaler_from_json(const nlohmann::json& j) {
  MetadataScaler s;
  s.names = j.at("names").get<std::vector<std::string>>();
  const auto m = j.at("mean").get<std::vector<double>>(), sd = j.at("sd").get<std::vector<double>>();
  if (m.size() != s.names.size() || sd.size() != s.names.size())
    throw InvalidArgument("metadata scaler arrays disagree in length");
  s.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  s.sd = Eigen::Map<const Eigen::VectorXd>(sd.data(), sd.size());
  if (!(s.sd.array() > 0).all()) throw InvalidArgument("metadata scaler sd must be > 0");
  return s;
}

// ---------------------------------------------------------------------------
// Config

nlohmann::json to_json(const PipelineConfig& c) {
  return {{"encoder_factor", c.encoder_factor},
          {"substeps", c.substeps},
          {"tau", c.tau},
          {"guidance", c.guidance},
          {"decoder_guidance", c.decoder_guidance},
          {"rank_mode", to_string(c.rank_mode)},
          {"seed", c.seed},
          {"max_refine_iters", c.max_refine_iters},
          {"refine_tolerance", c.refine_tolerance},
          {"null_diagnostic", c.null_diagnostic}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c) {
  try {
    c.encoder_factor = j.value("encoder_factor", c.encoder_factor);
    c.substeps = j.value("substeps", c.substeps);
    c.tau = j.value("tau", c.tau);
    c.guidance = j.value("guidance", c.guidance);
    c.decoder_guidance = j.value("decoder_guidance", c.decoder_guidance);
    if (j.contains("rank_mode")) c.rank_mode = parse_rank_mode(j.at("rank_mode").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.max_refine_iters = j.value("max_refine_iters", c.max_refine_iters);
    c.refine_tolerance = j.value("refine_tolerance", c.refine_tolerance);
    c.null_diagnostic = j.value("null_diagnostic", c.null_diagnostic);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed pipeline config: ") + e.what());
  }
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw InvalidArgument("tau must lie in (0, 1]");
  if (c.encoder_factor < 1) throw InvalidArgument("encoder_factor must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Single subject

Observation measured_observation(const LabelVolume& labels, const Assignment& metadata, const CausalGraph& scm) {
  Observation obs(metadata.begin(), metadata.end());
  for (int k = 1; k <= labels.num_rois(); ++k) {
    if (!scm.contains(roi_node(k))) throw InvalidArgument("SCM has no node for ROI " + std::to_string(k));
    obs[roi_node(k)] = roi_volume_mm3(labels, roi_label(k));
  }
  if (scm.contains(kWhiteMatterNode)) obs[kWhiteMatterNode] = roi_volume_mm3(labels, kWhiteMatter);
  return obs;
}

Conditioning make_condition(const DiffusionModels& models, const Assignment& metadata, const LabelVolume& labels,
                            int factor) {
  Conditioning c;
  c.metadata = models.scaler.transform(metadata);
  c.control = control_from_labels(labels, factor);
  return c;
}

namespace {

int start_index(const PipelineConfig& c) {
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw InvalidArgument("tau must lie in (0, 1]");
  return static_cast<int>(std::ceil(c.tau * c.substeps - 1e-9));
}

void check_request(const CounterfactualRequest& req, const DiffusionModels& models) {
  if (!models.latent || !models.decoder) throw InvalidArgument("pipeline needs latent and decoder denoisers");
  if (req.image.dims() != req.labels.dims() || req.probabilities.dims() != req.labels.dims())
    throw InvalidArgument("subject " + req.id + ": image, labels and probabilities disagree in dims");
}

Assignment metadata_of(const Observation& values, const Assignment& like) {
  Assignment out;
  for (const auto& [k, v] : like) out[k] = values.at(k);
  return out;
}

Grid decode(const DiffusionModels& models, const PipelineConfig& config, const SubjectInversion& inv,
            const Grid& latent, const Dims& dims, const Spacing& spacing) {
  SampleOptions so;
  so.guidance = config.decoder_guidance;
  so.seed = config.seed;
  const Conditioning cond = condition_from_latent(latent, config.encoder_factor);
  const State x = ddim_sample(*models.decoder, cond, models.schedule, config.substeps, inv.image_noise, so).back();
  return Grid(dims, spacing, x);
}

Grid regenerate_latent(const DiffusionModels& models, const PipelineConfig& config, const SubjectInversion& inv,
                       const Conditioning& cond) {
  SampleOptions so;
  so.guidance = config.guidance;
  so.seed = config.seed;
  so.start_index = inv.start_index;
  const State z = ddim_sample(*models.latent, cond, models.schedule, config.substeps, inv.latent_partial, so).back();
  return Grid(inv.latent.dims(), inv.latent.spacing(), z);
}

}  // namespace

SubjectInversion invert_subject(const CounterfactualRequest& req, const DiffusionModels& models,
                                const PipelineConfig& config) {
  check_request(req, models);
  SubjectInversion inv;
  inv.latent = encode_toy(req.image, config.encoder_factor);
  inv.original_cond = make_condition(models, req.metadata, req.labels, config.encoder_factor);
  inv.start_index = start_index(config);

  InversionOptions io;
  io.guidance = config.guidance;
  io.stop_index = inv.start_index;
  io.max_refine_iters = config.max_refine_iters;
  io.tolerance = config.refine_tolerance;
  inv.latent_partial =
      ddim_invert(*models.latent, inv.original_cond, models.schedule, config.substeps, inv.latent.values(), io).back();

  InversionOptions dec = io;
  dec.guidance = config.decoder_guidance;
  dec.stop_index = -1;
  inv.image_noise = ddim_invert(*models.decoder, condition_from_latent(inv.latent, config.encoder_factor),
                                models.schedule, config.substeps, req.image.values(), dec)
                        .back();
  return inv;
}

CounterfactualResult generate_counterfactual(const CounterfactualRequest& req, const CausalGraph& scm,
                                             const DiffusionModels& models, const PipelineConfig& config,
                                             const SubjectInversion* cached) {
  check_request(req, models);
  for (const auto& [name, v] : req.intervention)
    if (!req.metadata.count(name)) throw InvalidArgument("intervention key '" + name + "' is not a metadata root");

  CounterfactualResult out;
  out.id = req.id;

  // (1) target volumes from the SCM.
  const Observation obs = measured_observation(req.labels, req.metadata, scm);
  out.scm_values = counterfactual(scm, obs, req.intervention);

  // (2) mask edits toward those volumes.
  std::map<Label, std::int64_t> deltas;
  for (int k = 1; k <= req.labels.num_rois(); ++k) {
    const Label roi = roi_label(k);
    deltas[roi] = volume_delta(roi_voxel_count(req.labels, roi), out.scm_values.at(roi_node(k)),
                               req.labels.spacing());
  }
  auto edits = apply_edits(req.labels, req.probabilities, deltas, config.rank_mode);
  out.edited_labels = std::move(edits.labels);
  out.plans = std::move(edits.plans);
  for (int k = 1; k <= req.labels.num_rois(); ++k)
    out.edited_volumes[roi_node(k)] = roi_volume_mm3(out.edited_labels, roi_label(k));

  // (3) partial inversion under the original conditioning (cached per subject).
  SubjectInversion local;
  if (!cached) {
    local = invert_subject(req, models, config);
    cached = &local;
  }
  out.diagnostics.start_index = cached->start_index;

  // (4) regenerate under counterfactual metadata and edited mask, (5) decode.
  const Conditioning cf_cond =
      make_condition(models, metadata_of(out.scm_values, req.metadata), out.edited_labels, config.encoder_factor);
  const Grid z_cf = regenerate_latent(models, config, *cached, cf_cond);
  out.volume = decode(models, config, *cached, z_cf, req.image.dims(), req.image.spacing());

  if (config.null_diagnostic) {
    const Grid z_null = regenerate_latent(models, config, *cached, cached->original_cond);
    const Grid x_null = decode(models, config, *cached, z_null, req.image.dims(), req.image.spacing());
    out.diagnostics.null_reconstruction_rms = std::sqrt((x_null.values() - req.image.values()).square().mean());
  }
  return out;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

std::vector<BatchItem> batch_generate(const std::vector<CounterfactualRequest>& requests, const CausalGraph& scm,
                                      const DiffusionModels& models, const PipelineConfig& config, int jobs) {
  std::vector<BatchItem> out(requests.size());
  parallel_for(static_cast<int>(requests.size()), jobs, [&](int i) {
    try {
      out[i].result = generate_counterfactual(requests[i], scm, models, config);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

DiffusionModels OracleModels::view() const { return {&latent, &decoder, schedule, scaler}; }

OracleModels make_oracle_models(const NoiseSchedule& sched, int num_rois, const MetadataScaler& scaler,
                                double variance) {
  Eigen::VectorXd intensity(num_rois + 3);
  for (Label l = 0; l < num_rois + 3; ++l) intensity[l] = tissue_intensity(l);
  return {TemplateOracleDenoiser(sched, intensity, variance), TemplateOracleDenoiser(sched, Eigen::VectorXd(), variance),
          sched, scaler};
}

// ---------------------------------------------------------------------------
// Cohort study

std::vector<std::string> roi_names(int num_rois) {
  std::vector<std::string> out;
  for (int k = 1; k <= num_rois; ++k) out.push_back(roi_node(k));
  return out;
}

CohortStudy run_cohort_study(const PhantomSpec& spec, const std::vector<SubjectRecord>& cohort,
                             const CausalGraph& scm, const DiffusionModels& models, const PipelineConfig& config,
                             int jobs) {
  CohortStudy study;
  study.outcomes.resize(cohort.size());
  parallel_for(static_cast<int>(cohort.size()), jobs, [&](int i) {
    const SubjectRecord& rec = cohort[i];
    SubjectOutcome& o = study.outcomes[i];
    o.id = rec.id;
    o.group = rec.group;
    o.cf_group = rec.group == "case" ? "cf-control" : "cf-case";
    try {
      PhantomVolumes vol = render_phantom(spec, rec);
      CounterfactualRequest req;
      req.id = rec.id;
      req.metadata = rec.metadata;
      req.intervention = {{"diagnosis", rec.group == "case" ? 0.0 : 1.0}};
      req.image = std::move(vol.image);
      req.labels = std::move(vol.labels);
      req.probabilities = std::move(vol.probabilities);
      const auto result = generate_counterfactual(req, scm, models, config);

      for (int k = 1; k <= spec.num_rois; ++k) {
        o.real_volumes[roi_node(k)] = roi_volume_mm3(req.labels, roi_label(k));
        o.cf_volumes[roi_node(k)] = result.edited_volumes.at(roi_node(k));
      }
      o.real_volumes[kWhiteMatterNode] = roi_volume_mm3(req.labels, kWhiteMatter);
      o.cf_volumes[kWhiteMatterNode] = roi_volume_mm3(result.edited_labels, kWhiteMatter);
      for (const auto& p : result.plans) o.exhausted = o.exhausted || p.exhausted;
      o.null_reconstruction_rms = result.diagnostics.null_reconstruction_rms;
    } catch (const std::exception& e) {
      o.error = e.what();
    }
  });

  auto row = [&](const std::map<std::string, double>& volumes) {
    std::map<std::string, double> values = volumes;
    double supra = 0.0;
    for (const auto& [k, v] : volumes) supra += v;
    values["supratentorial"] = supra;
    return values;
  };
  for (const auto& o : study.outcomes) {
    if (!o.error.empty()) {
      ++study.failures;
      continue;
    }
    study.table.add_row(o.id, o.group, row(o.real_volumes));
    study.table.add_row(o.id, o.cf_group, row(o.cf_volumes));
  }
  return study;
}

}  // namespace morphcf
