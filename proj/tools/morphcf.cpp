// morphcf command-line front end.
//
// Every subcommand accepts --config <file.json> with the same keys as its flags
// (underscored); flags given on the command line win. The resolved config is
// written to <out>/run_config.json before the command runs.
//
// Exit codes: 0 ok, 1 usage, 2 data (bad input, missing file), 3 numerical.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <random>

#include "morphcf/csv.hpp"
#include "morphcf/metrics.hpp"
#include "morphcf/mlp_denoiser.hpp"
#include "morphcf/pipeline.hpp"
#include "morphcf/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace morphcf;

namespace {

constexpr int kExitUsage = 1, kExitData = 2, kExitNumerical = 3;

std::string dashed(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

/// Flag/config-file parameters of one subcommand.
class Params {
 public:
  explicit Params(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    add<std::string>("out", "", "output directory (default: $MORPHCF_OUT/<command> or ./morphcf-out/<command>)");
  }

  template <typename T>
  void add(const std::string& key, T fallback, const std::string& help) {
    auto holder = std::make_shared<T>(fallback);
    defaults_[key] = fallback;
    CLI::Option* opt;
    if constexpr (std::is_same_v<T, bool>)
      opt = app_->add_flag("--" + dashed(key) + ",!--no-" + dashed(key), *holder, help);
    else
      opt = app_->add_option("--" + dashed(key), *holder, help);
    overrides_.push_back([opt, key, holder](json& j) {
      if (opt->count() > 0) j[key] = *holder;
    });
  }

  /// Config-file-only object (nested settings such as the phantom spec).
  void add_object(const std::string& key) { defaults_[key] = json::object(); }

  json resolve(const std::string& command) const {
    json j = defaults_;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw IoError(IoErrorKind::open_failed, "cannot open config " + config_path_);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw InvalidArgument("config " + config_path_ + " is not valid JSON: " + e.what());
      }
      if (!file.is_object()) throw InvalidArgument("config " + config_path_ + " must hold a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (!defaults_.contains(k)) throw InvalidArgument("config key '" + k + "' is not used by " + command);
        j[k] = v;
      }
    }
    for (const auto& apply : overrides_) apply(j);
    if (j["out"].get<std::string>().empty()) {
      const char* root = std::getenv("MORPHCF_OUT");
      j["out"] = (fs::path(root && *root ? root : "morphcf-out") / command).string();
    }
    return j;
  }

 private:
  CLI::App* app_;
  std::string config_path_;
  json defaults_ = json::object();
  std::vector<std::function<void(json&)>> overrides_;
};

template <typename T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument("config field '" + key + "' has the wrong type: " + e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + " is not valid JSON: " + e.what());
  }
}

std::string required_path(const json& cfg, const std::string& key) {
  const auto p = get<std::string>(cfg, key);
  if (p.empty()) throw InvalidArgument("--" + dashed(key) + " is required");
  if (!fs::exists(p)) throw IoError(IoErrorKind::open_failed, "--" + dashed(key) + ": no such file " + p);
  return p;
}

Intervention parse_do(const std::vector<std::string>& items) {
  Intervention iv;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("--do expects name=value, got '" + item + "'");
    iv[item.substr(0, eq)] = parse_double(item.substr(eq + 1), "--do " + item.substr(0, eq));
  }
  return iv;
}

json to_json(const Assignment& a) {
  json j = json::object();
  for (const auto& [k, v] : a) j[k] = v;
  return j;
}

Assignment assignment_from_json(const json& j, const std::string& what) {
  if (!j.is_object()) throw InvalidArgument(what + " must be a JSON object of name -> number");
  Assignment a;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw InvalidArgument(what + ": value of '" + k + "' is not a number");
    a[k] = v.get<double>();
  }
  return a;
}

// ---------------------------------------------------------------------------
// Shared settings

void add_phantom_params(Params& p) {
  p.add_object("phantom");
  p.add<int>("size", 0, "cubic grid size in voxels (0: keep the phantom spec); radii scale along");
  p.add<int>("num_rois", 0, "number of ROIs (0: keep the phantom spec)");
  p.add<double>("noise_sigma", -1.0, "image noise sd (negative: keep the phantom spec)");
}

PhantomSpec phantom_from(const json& cfg) {
  PhantomSpec spec = phantom_spec_from_json(cfg.at("phantom"));
  if (const int size = get<int>(cfg, "size"); size > 0) {
    const double f = double(size) / double(spec.dims[0]);
    spec.dims = {size, size, size};
    spec.wm_radius_mm *= f;
    spec.gm_radius_mm *= f;
    spec.skull_radius_mm *= f;
  }
  if (const int m = get<int>(cfg, "num_rois"); m > 0) spec.num_rois = m;
  if (const double s = get<double>(cfg, "noise_sigma"); s >= 0) spec.noise_sigma = s;
  validate(spec);
  return spec;
}

void add_schedule_params(Params& p) {
  p.add<std::string>("schedule", "linear", "noise schedule: linear | cosine");
  p.add<int>("timesteps", 1000, "diffusion steps T");
  p.add<double>("beta_min", -1.0, "lower beta bound (negative: 1e-4 linear, 1e-8 cosine)");
  p.add<double>("beta_max", -1.0, "upper beta bound (negative: 0.02 linear, 0.999 cosine)");
}

BetaRange beta_range_from(const json& cfg) {
  BetaRange r = default_beta_range(parse_schedule_kind(get<std::string>(cfg, "schedule")));
  if (const double lo = get<double>(cfg, "beta_min"); lo >= 0) r.min = lo;
  if (const double hi = get<double>(cfg, "beta_max"); hi >= 0) r.max = hi;
  return r;
}

NoiseSchedule schedule_from(const json& cfg) {
  const BetaRange r = beta_range_from(cfg);
  return make_schedule(parse_schedule_kind(get<std::string>(cfg, "schedule")), get<int>(cfg, "timesteps"), r.min,
                       r.max);
}

void add_pipeline_params(Params& p) {
  p.add_object("pipeline");
  p.add<int>("substeps", 0, "DDIM substeps (0: keep pipeline config)");
  p.add<double>("tau", 0.0, "inversion depth in (0, 1] (0: keep pipeline config)");
  p.add<double>("guidance", -1.0, "latent guidance weight (negative: keep pipeline config)");
  p.add<std::string>("rank_mode", "", "mask edit ranking: difference | ratio");
  p.add<int>("jobs", 1, "worker threads");
}

PipelineConfig pipeline_from(const json& cfg) {
  json j = cfg.at("pipeline");
  if (get<int>(cfg, "substeps") > 0) j["substeps"] = cfg.at("substeps");
  if (get<double>(cfg, "tau") > 0) j["tau"] = cfg.at("tau");
  if (get<double>(cfg, "guidance") >= 0) j["guidance"] = cfg.at("guidance");
  if (!get<std::string>(cfg, "rank_mode").empty()) j["rank_mode"] = cfg.at("rank_mode");
  if (cfg.contains("seed")) j["seed"] = cfg.at("seed");
  return pipeline_config_from_json(j);
}

CausalGraph ground_truth_from(const json& cfg, const PhantomSpec& spec) {
  const auto path = get<std::string>(cfg, "ground_truth");
  if (!path.empty()) return load_graph(path);
  return default_ground_truth(spec, get<double>(cfg, "diagnosis_effect"));
}

std::vector<SubjectRecord> cohort_from(const json& cfg, const PhantomSpec& spec, const CausalGraph& gt) {
  const auto path = get<std::string>(cfg, "cohort");
  if (!path.empty()) return read_manifest(path);
  return sample_cohort(spec, gt, get<int>(cfg, "n"), get<std::uint64_t>(cfg, "cohort_seed"));
}

void write_subject_volumes(const PhantomVolumes& v, const fs::path& dir, const std::string& stem) {
  write_volume(v.image.cast<float>(), dir / (stem + "_image.nii"));
  write_volume(v.labels, dir / (stem + "_labels.nii"));
  write_probabilities(v.probabilities, v.labels.spacing(), dir / (stem + "_probs.json"));
}

// ---------------------------------------------------------------------------
// phantom

json cmd_phantom(const json& cfg, const fs::path& out) {
  const PhantomSpec spec = phantom_from(cfg);
  const CausalGraph gt = ground_truth_from(cfg, spec);
  const int n = get<int>(cfg, "n");
  if (n < 0) throw InvalidArgument("--n must be >= 0");
  const auto cohort = sample_cohort(spec, gt, n, get<std::uint64_t>(cfg, "seed"));
  write_manifest(cohort, spec.num_rois, out / "manifest.csv");
  write_json(to_json(spec), out / "phantom.json");
  save_graph(gt, (out / "ground_truth.json").string());

  int render = get<int>(cfg, "render");
  if (render < 0 || render > n) render = n;
  if (render > 0) fs::create_directories(out / "volumes");
  parallel_for(render, get<int>(cfg, "jobs"),
               [&](int i) { write_subject_volumes(render_phantom(spec, cohort[i]), out / "volumes", cohort[i].id); });

  int cases = 0;
  for (const auto& r : cohort) cases += r.group == "case";
  std::cout << "phantom: " << n << " subjects (" << cases << " case, " << n - cases << " control), " << render
            << " rendered -> " << out.string() << "\n";
  return {{"subjects", n}, {"cases", cases}, {"rendered", render}, {"manifest", "manifest.csv"}};
}

// ---------------------------------------------------------------------------
// scm

json cmd_scm_fit(const json& cfg, const fs::path& out) {
  const auto cohort = read_manifest(required_path(cfg, "cohort"));
  if (cohort.empty()) throw InvalidArgument("cohort " + get<std::string>(cfg, "cohort") + " has no subjects");
  const CausalGraph skeleton = load_graph(required_path(cfg, "skeleton"));
  std::vector<Observation> data;
  for (const auto& r : cohort) data.push_back(to_observation(r));
  FitConfig fc;
  fc.max_iters = get<long>(cfg, "max_iters");
  fc.learning_rate = get<double>(cfg, "learning_rate");
  fc.grad_tolerance = get<double>(cfg, "grad_tolerance");
  fc.loss_tolerance = get<double>(cfg, "loss_tolerance");
  const FitResult fitted = fit(skeleton, data, fc);
  save_graph(fitted.graph, (out / "model.json").string());

  json nodes = json::array();
  for (const auto& r : fitted.nodes) {
    nodes.push_back({{"node", r.node}, {"iterations", r.iterations}, {"nll", r.nll}});
    std::cout << "  " << r.node << ": nll " << r.nll << " after " << r.iterations << " iterations\n";
  }
  std::cout << "scm fit: " << cohort.size() << " subjects, total nll " << fitted.nll << " -> "
            << (out / "model.json").string() << "\n";
  return {{"subjects", cohort.size()}, {"nll", fitted.nll}, {"nodes", nodes}, {"model", "model.json"}};
}

json cmd_scm_cf(const json& cfg, const fs::path& out) {
  const CausalGraph model = load_graph(required_path(cfg, "model"));
  const Observation obs = assignment_from_json(read_json(required_path(cfg, "obs")), "observation");
  const Intervention iv = parse_do(get<std::vector<std::string>>(cfg, "do"));
  const Observation cf = counterfactual(model, obs, iv);
  json report = {{"observation", to_json(obs)}, {"intervention", to_json(iv)}, {"counterfactual", to_json(cf)}};
  write_json(report, out / "counterfactual.json");
  for (const auto& [k, v] : cf) std::cout << "  " << k << ": " << obs.at(k) << " -> " << v << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// mask

json cmd_mask(const json& cfg, const fs::path& out) {
  const LabelVolume labels = read_labels(required_path(cfg, "labels"));
  const ProbabilityVolume probs = read_probabilities(required_path(cfg, "probs"));
  const int k = get<int>(cfg, "roi");
  if (k < 1 || k > labels.num_rois())
    throw InvalidArgument("--roi " + std::to_string(k) + " outside 1.." + std::to_string(labels.num_rois()));
  const Label roi = roi_label(k);
  const auto count = roi_voxel_count(labels, roi);
  const double target = get<double>(cfg, "target_mm3");
  std::int64_t d = get<long>(cfg, "delta");
  if (target >= 0) d = volume_delta(count, target, labels.spacing());
  const RankMode mode = parse_rank_mode(get<std::string>(cfg, "rank_mode"));

  const EditResult edit = apply_edit(labels, probs, roi, d, mode);
  write_volume(edit.labels, out / "labels_edited.nii");
  json report = to_json(edit.plan);
  report["roi_label"] = report["roi"];
  report["roi"] = k;
  report["d"] = d;
  report["voxels_before"] = count;
  report["voxels_after"] = roi_voxel_count(edit.labels, roi);
  report["rank_mode"] = to_string(mode);
  write_json(report, out / "edit_report.json");
  std::cout << "mask: ROI " << k << " d=" << d << " achieved " << edit.plan.achieved
            << (edit.plan.exhausted ? " (candidates exhausted)" : "") << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// diffuse (toy vector data: independent Gaussian coordinates)

void add_toy_params(Params& p) {
  add_schedule_params(p);
  p.add<int>("dim", 1, "state dimension");
  p.add<double>("mean", 0.5, "target mean of every coordinate");
  p.add<double>("sd", 0.2, "target sd of every coordinate");
  p.add<std::uint64_t>("seed", 0, "random seed");
}

Eigen::MatrixXd toy_draws(const json& cfg, int dim, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(get<double>(cfg, "mean"), get<double>(cfg, "sd"));
  Eigen::MatrixXd x(dim, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < dim; ++r) x(r, c) = normal(rng);
  return x;
}

struct ToyModel {
  std::unique_ptr<Denoiser> denoiser;
  std::string kind;
  NoiseSchedule schedule;
  int dim = 0;
};

// A trained model carries its own schedule and dimension; otherwise the Gaussian
// oracle is built from the schedule and toy-data flags.
ToyModel toy_model(const json& cfg) {
  const auto path = get<std::string>(cfg, "model");
  if (!path.empty()) {
    const fs::path file = required_path(cfg, "model");
    auto m = std::make_unique<MLPDenoiser>(MLPDenoiser::load(file));
    const json header = read_json(file);
    const json sched = header.at("extra").value("schedule", json::object());
    if (sched.empty()) throw InvalidArgument(file.string() + " records no noise schedule");
    NoiseSchedule schedule = make_schedule(parse_schedule_kind(sched.at("kind").get<std::string>()),
                                           sched.at("steps").get<int>(), sched.at("beta_min").get<double>(),
                                           sched.at("beta_max").get<double>());
    const int dim = m->shape().state_dim;
    return {std::move(m), "mlp", std::move(schedule), dim};
  }
  const NoiseSchedule schedule = schedule_from(cfg);
  const int dim = get<int>(cfg, "dim");
  const double sd = get<double>(cfg, "sd");
  return {std::make_unique<GaussianOracleDenoiser>(schedule, State::Constant(dim, get<double>(cfg, "mean")),
                                                   State::Constant(dim, sd * sd)),
          "gaussian-oracle", schedule, dim};
}

Conditioning toy_condition() {
  Conditioning c;
  c.metadata = Eigen::VectorXd(0);
  return c;
}

void write_matrix_csv(const Eigen::MatrixXd& columns, const fs::path& path) {
  CsvTable t;
  for (Eigen::Index r = 0; r < columns.rows(); ++r) t.header.push_back("x" + std::to_string(r));
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    std::vector<std::string> row;
    for (Eigen::Index r = 0; r < columns.rows(); ++r) row.push_back(format_double(columns(r, c)));
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  Eigen::MatrixXd x(t.header.size(), t.rows.size());
  for (std::size_t c = 0; c < t.rows.size(); ++c)
    for (std::size_t r = 0; r < t.header.size(); ++r) x(r, c) = parse_double(t.rows[c][r], path.string());
  return x;
}

json summary_of(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::VectorXd var =
      x.cols() > 1 ? Eigen::VectorXd((x.colwise() - mean).array().square().rowwise().sum() / double(x.cols() - 1))
                   : Eigen::VectorXd::Zero(x.rows());
  return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
          {"variance", std::vector<double>(var.data(), var.data() + var.size())}};
}

json cmd_diffuse_train(const json& cfg, const fs::path& out) {
  const NoiseSchedule sched = schedule_from(cfg);
  const Eigen::MatrixXd x = toy_draws(cfg, get<int>(cfg, "dim"), get<int>(cfg, "samples"), get<std::uint64_t>(cfg, "seed") + 1);
  std::vector<TrainingExample> data;
  for (Eigen::Index c = 0; c < x.cols(); ++c) data.push_back({x.col(c).array(), toy_condition()});
  TrainConfig tc;
  tc.steps = get<long>(cfg, "steps");
  tc.batch_size = get<int>(cfg, "batch_size");
  tc.learning_rate = get<double>(cfg, "learning_rate");
  tc.p_uncond = get<double>(cfg, "p_uncond");
  tc.hidden = get<int>(cfg, "hidden");
  tc.seed = get<std::uint64_t>(cfg, "seed");
  tc.log_every = std::max<long>(1, tc.steps / 20);
  TrainReport tr;
  const MLPDenoiser model = train_mlp_denoiser(data, sched, tc, &tr);
  const BetaRange range = beta_range_from(cfg);
  model.save(out / "model.json", {{"schedule", to_json(sched, range.min, range.max)}});
  json history = json::array();
  for (const auto& [step, loss] : tr.loss_history) history.push_back({step, loss});
  std::cout << "diffuse train: " << tc.steps << " steps, final loss " << tr.final_loss << " -> "
            << (out / "model.json").string() << "\n";
  return {{"final_loss", tr.final_loss}, {"loss_history", history}, {"parameters", model.parameter_count()}};
}

json cmd_diffuse_sample(const json& cfg, const fs::path& out) {
  const ToyModel model = toy_model(cfg);
  const NoiseSchedule& sched = model.schedule;
  const int draws = get<int>(cfg, "draws"), dim = model.dim;
  if (draws < 1) throw InvalidArgument("--draws must be >= 1");
  SampleOptions so;
  so.guidance = get<double>(cfg, "guidance");
  so.eta = get<double>(cfg, "eta");
  std::mt19937_64 rng(get<std::uint64_t>(cfg, "seed"));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(dim, draws);
  const Conditioning cond = toy_condition();
  for (int c = 0; c < draws; ++c) {
    State noise(dim);
    for (auto& v : noise) v = normal(rng);
    so.seed = rng();
    x.col(c) = ddim_sample(*model.denoiser, cond, sched, get<int>(cfg, "substeps"), noise, so).back().matrix();
  }
  write_matrix_csv(x, out / "samples.csv");
  json report = summary_of(x);
  report["denoiser"] = model.kind;
  report["draws"] = draws;
  std::cout << "diffuse sample: " << draws << " draws from " << model.kind << ", mean[0] "
            << report["mean"][0].get<double>() << ", variance[0] " << report["variance"][0].get<double>() << "\n";
  return report;
}

json cmd_diffuse_invert(const json& cfg, const fs::path& out) {
  const ToyModel model = toy_model(cfg);
  const NoiseSchedule& sched = model.schedule;
  const auto input = get<std::string>(cfg, "input");
  const Eigen::MatrixXd x0 =
      input.empty() ? toy_draws(cfg, model.dim, get<int>(cfg, "draws"), get<std::uint64_t>(cfg, "seed"))
                    : read_matrix_csv(required_path(cfg, "input"));
  if (x0.rows() != model.dim)
    throw InvalidArgument("input has " + std::to_string(x0.rows()) + " columns, the model expects " +
                          std::to_string(model.dim));
  const int substeps = get<int>(cfg, "substeps");
  InversionOptions io;
  io.guidance = get<double>(cfg, "guidance");
  SampleOptions so;
  so.guidance = io.guidance;
  const Conditioning cond = toy_condition();
  Eigen::MatrixXd latents(x0.rows(), x0.cols());
  double sq = 0.0;
  for (Eigen::Index c = 0; c < x0.cols(); ++c) {
    const State z = ddim_invert(*model.denoiser, cond, sched, substeps, x0.col(c).array(), io).back();
    latents.col(c) = z.matrix();
    const State back = ddim_sample(*model.denoiser, cond, sched, substeps, z, so).back();
    sq += (back - x0.col(c).array()).square().sum();
  }
  write_matrix_csv(latents, out / "latents.csv");
  const double rms = std::sqrt(sq / double(x0.size()));
  std::cout << "diffuse invert: " << x0.cols() << " states, round-trip RMS " << rms << "\n";
  return {{"denoiser", model.kind}, {"states", x0.cols()}, {"round_trip_rms", rms}};
}

// ---------------------------------------------------------------------------
// pipeline

void add_cohort_params(Params& p, int default_n) {
  add_phantom_params(p);
  p.add<std::string>("cohort", "", "cohort manifest (default: sample --n subjects from the ground truth)");
  p.add<int>("n", default_n, "cohort size when sampling");
  p.add<std::uint64_t>("cohort_seed", 1, "seed for cohort sampling");
  p.add<std::string>("ground_truth", "", "ground-truth SCM JSON (default: built-in phantom truth)");
  p.add<double>("diagnosis_effect", -60.0, "diagnosis effect on ROI volumes (mm3) of the built-in truth");
  add_schedule_params(p);
  add_pipeline_params(p);
  p.add<std::uint64_t>("seed", 0, "pipeline seed");
}

json cmd_pipeline(const json& cfg, const fs::path& out) {
  const PhantomSpec spec = phantom_from(cfg);
  const CausalGraph gt = ground_truth_from(cfg, spec);
  const auto cohort_all = cohort_from(cfg, spec, gt);
  const auto model_path = get<std::string>(cfg, "model");
  const CausalGraph scm = model_path.empty() ? gt : load_graph(required_path(cfg, "model"));
  const PipelineConfig pc = pipeline_from(cfg);
  const Intervention fixed_iv = parse_do(get<std::vector<std::string>>(cfg, "do"));
  const bool save = get<bool>(cfg, "save_volumes");

  int limit = get<int>(cfg, "subjects");
  if (limit < 0 || limit > int(cohort_all.size())) limit = int(cohort_all.size());
  if (cohort_all.empty()) throw InvalidArgument("cohort is empty");
  const auto oracle = make_oracle_models(schedule_from(cfg), spec.num_rois, MetadataScaler::fit(cohort_all));
  const DiffusionModels models = oracle.view();
  if (save) fs::create_directories(out / "volumes");

  std::vector<json> rows(limit);
  std::vector<std::string> errors(limit);
  parallel_for(limit, get<int>(cfg, "jobs"), [&](int i) {
    const SubjectRecord& rec = cohort_all[i];
    try {
      PhantomVolumes vol = render_phantom(spec, rec);
      CounterfactualRequest req{rec.id, std::move(vol.image), std::move(vol.labels), std::move(vol.probabilities),
                                rec.metadata, fixed_iv};
      if (req.intervention.empty()) req.intervention = {{"diagnosis", rec.group == "case" ? 0.0 : 1.0}};
      const CounterfactualResult res = generate_counterfactual(req, scm, models, pc);
      json plans = json::array();
      for (const auto& p : res.plans) plans.push_back(to_json(p));
      rows[i] = {{"id", rec.id},
                 {"group", rec.group},
                 {"intervention", to_json(req.intervention)},
                 {"scm_counterfactual", to_json(res.scm_values)},
                 {"edited_volumes_mm3", to_json(res.edited_volumes)},
                 {"edits", plans},
                 {"null_reconstruction_rms", res.diagnostics.null_reconstruction_rms},
                 {"start_index", res.diagnostics.start_index}};
      if (save) {
        write_volume(res.volume.cast<float>(), out / "volumes" / (rec.id + "_cf_image.nii"));
        write_volume(res.edited_labels, out / "volumes" / (rec.id + "_cf_labels.nii"));
        write_volume(req.image.cast<float>(), out / "volumes" / (rec.id + "_image.nii"));
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  json subjects = json::array(), failures = json::array();
  for (int i = 0; i < limit; ++i) {
    if (errors[i].empty())
      subjects.push_back(rows[i]);
    else
      failures.push_back({{"id", cohort_all[i].id}, {"error", errors[i]}});
  }
  std::cout << "pipeline: " << subjects.size() << " counterfactuals, " << failures.size() << " failures -> "
            << out.string() << "\n";
  for (const auto& f : failures) std::cerr << "  " << f["id"].get<std::string>() << ": " << f["error"].get<std::string>() << "\n";
  if (subjects.empty() && !failures.empty()) throw InvalidArgument("every subject failed; first: " + errors[0]);
  return {{"pipeline", to_json(pc)}, {"subjects", subjects}, {"failures", failures}};
}

// ---------------------------------------------------------------------------
// eval

json cmd_eval(const json& cfg, const fs::path& out) {
  json report = json::object();
  const auto image_a = get<std::string>(cfg, "image_a"), image_b = get<std::string>(cfg, "image_b");
  if (!image_a.empty() || !image_b.empty()) {
    const Grid a = read_grid(required_path(cfg, "image_a")).cast<double>();
    const Grid b = read_grid(required_path(cfg, "image_b")).cast<double>();
    MsSsimOptions mo;
    mo.data_range = get<double>(cfg, "data_range");
    const double score = ms_ssim_3d(a, b, mo);
    report["ms_ssim"] = score;
    std::cout << "eval: MS-SSIM " << score << "\n";
    if (get<std::string>(cfg, "table").empty() && get<int>(cfg, "n") == 0) return report;
  }

  StudyTable table;
  int num_rois = 0;
  if (const auto path = get<std::string>(cfg, "table"); !path.empty()) {
    table = StudyTable::load_csv(required_path(cfg, "table"));
    for (const auto& c : table.column_names())
      if (c.rfind("roi_", 0) == 0) ++num_rois;
  } else {
    const PhantomSpec spec = phantom_from(cfg);
    const CausalGraph gt = ground_truth_from(cfg, spec);
    const auto cohort = cohort_from(cfg, spec, gt);
    if (cohort.empty()) throw InvalidArgument("cohort is empty");
    const auto oracle = make_oracle_models(schedule_from(cfg), spec.num_rois, MetadataScaler::fit(cohort));
    const CohortStudy study = run_cohort_study(spec, cohort, gt, oracle.view(), pipeline_from(cfg), get<int>(cfg, "jobs"));
    for (const auto& o : study.outcomes)
      if (!o.error.empty()) std::cerr << "  " << o.id << ": " << o.error << "\n";
    report["failures"] = study.failures;
    table = study.table;
    num_rois = spec.num_rois;
  }
  table.save_csv(out / "study_table.csv");

  StudyOptions so;
  so.alpha = get<double>(cfg, "alpha");
  so.covariate = get<std::string>(cfg, "covariate");
  const EffectReport effects = group_study(table, roi_names(num_rois), replication_comparisons(), so);
  write_report_csv(effects, out / "effect_report.csv");
  report["study"] = to_json(effects);

  std::cout << "eval: threshold p < " << effects.threshold << "\n";
  for (const auto& c : effects.comparisons) {
    std::cout << "  " << c.label << ":";
    for (const auto& roi : effects.rois) std::cout << " " << roi << (effects.at(c.label, roi).significant ? "*" : "-");
    std::cout << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------

struct Command {
  std::string name;  // output subdirectory and report prefix
  CLI::App* app;
  std::unique_ptr<Params> params;
  std::function<json(const json&, const fs::path&)> run;
};

int run_command(const Command& cmd) {
  const json cfg = cmd.params->resolve(cmd.name);
  const fs::path out = cfg.at("out").get<std::string>();
  fs::create_directories(out);
  write_json(cfg, out / "run_config.json");
  const json report = cmd.run(cfg, out);
  write_json(report, out / "report.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morphcf: morphology-aware counterfactual volumes on synthetic phantoms"};
  app.require_subcommand(1);
  std::vector<Command> commands;
  auto command = [&](CLI::App* parent, const std::string& sub, const std::string& name, const std::string& help,
                     std::function<json(const json&, const fs::path&)> run) -> Params& {
    CLI::App* a = parent->add_subcommand(sub, help);
    commands.push_back({name, a, std::make_unique<Params>(a), std::move(run)});
    return *commands.back().params;
  };

  {
    Params& p = command(&app, "phantom", "phantom", "sample a phantom cohort and optionally render its volumes", cmd_phantom);
    add_phantom_params(p);
    p.add<int>("n", 20, "number of subjects");
    p.add<std::uint64_t>("seed", 0, "cohort seed");
    p.add<int>("render", 0, "render volumes for the first N subjects (-1: all)");
    p.add<std::string>("ground_truth", "", "ground-truth SCM JSON (default: built-in phantom truth)");
    p.add<double>("diagnosis_effect", -60.0, "diagnosis effect on ROI volumes (mm3) of the built-in truth");
    p.add<int>("jobs", 1, "worker threads for rendering");
  }
  CLI::App* scm = app.add_subcommand("scm", "fit and query structural causal models");
  scm->require_subcommand(1);
  {
    Params& p = command(scm, "fit", "scm-fit", "fit SCM mechanisms to a cohort manifest", cmd_scm_fit);
    p.add<std::string>("cohort", "", "cohort manifest CSV");
    p.add<std::string>("skeleton", "", "SCM JSON whose structure is fitted");
    p.add<long>("max_iters", 50000, "iteration cap per mechanism");
    p.add<double>("learning_rate", 1e-5, "initial step size");
    p.add<double>("grad_tolerance", 1e-9, "stop when the gradient norm falls below this");
    p.add<double>("loss_tolerance", 1e-14, "stop when the relative loss improvement stays below this");
  }
  {
    Params& p = command(scm, "cf", "scm-cf", "counterfactual of one observation", cmd_scm_cf);
    p.add<std::string>("model", "", "SCM JSON");
    p.add<std::string>("obs", "", "observation JSON {name: value}");
    p.add<std::vector<std::string>>("do", {}, "intervention name=value (repeatable)");
  }
  {
    Params& p = command(&app, "mask", "mask", "edit one ROI of a label map toward a target volume", cmd_mask);
    p.add<std::string>("labels", "", "label volume (NIfTI)");
    p.add<std::string>("probs", "", "probability volume JSON");
    p.add<int>("roi", 1, "ROI index (1-based)");
    p.add<double>("target_mm3", -1.0, "target ROI volume; overrides --delta when >= 0");
    p.add<long>("delta", 0, "signed voxel change when no target is given");
    p.add<std::string>("rank_mode", "difference", "difference | ratio");
  }
  CLI::App* diffuse = app.add_subcommand("diffuse", "toy diffusion on Gaussian vector data");
  diffuse->require_subcommand(1);
  {
    Params& p = command(diffuse, "train", "diffuse-train", "train an MLP denoiser on toy Gaussian data", cmd_diffuse_train);
    add_toy_params(p);
    p.add<int>("samples", 2000, "training set size");
    p.add<long>("steps", 2000, "optimizer steps");
    p.add<int>("batch_size", 32, "minibatch size");
    p.add<double>("learning_rate", 1e-3, "Adam step size");
    p.add<double>("p_uncond", 0.1, "probability of dropping the conditioning");
    p.add<int>("hidden", 64, "hidden width");
  }
  for (const std::string sub : {"sample", "invert"}) {
    Params& p = command(diffuse, sub, "diffuse-" + sub,
                        sub == "sample" ? "DDIM sampling from noise" : "DDIM inversion and regeneration round trip",
                        sub == "sample" ? cmd_diffuse_sample : cmd_diffuse_invert);
    add_toy_params(p);
    p.add<std::string>("model", "", "trained MLP model JSON; supplies the schedule and dimension (default: Gaussian oracle)");
    p.add<int>("draws", 1000, "number of states");
    p.add<int>("substeps", 50, "DDIM substeps");
    p.add<double>("guidance", 1.0, "guidance weight");
    if (sub == "sample")
      p.add<double>("eta", 0.0, "DDIM stochasticity");
    else
      p.add<std::string>("input", "", "CSV of clean states (default: draws from the target)");
  }
  {
    Params& p = command(&app, "pipeline", "pipeline", "generate counterfactual volumes for phantom subjects", cmd_pipeline);
    add_cohort_params(p, 4);
    p.add<std::string>("model", "", "SCM JSON used for counterfactual volumes (default: the ground truth)");
    p.add<std::vector<std::string>>("do", {}, "intervention name=value (default: flip diagnosis)");
    p.add<int>("subjects", -1, "process the first N subjects (-1: all)");
    p.add<bool>("save_volumes", true, "write original and counterfactual volumes");
  }
  {
    Params& p = command(&app, "eval", "eval", "group study over real and counterfactual volumes; MS-SSIM", cmd_eval);
    add_cohort_params(p, 200);
    p.add<std::string>("table", "", "existing study table CSV (skips the cohort run)");
    p.add<double>("alpha", 0.05, "family-wise significance level");
    p.add<std::string>("covariate", "supratentorial", "covariate regressed out of every ROI (empty: none)");
    p.add<std::string>("image_a", "", "first volume for MS-SSIM");
    p.add<std::string>("image_b", "", "second volume for MS-SSIM");
    p.add<double>("data_range", 1.0, "intensity range for MS-SSIM");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  for (const auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    const auto start = std::chrono::steady_clock::now();
    try {
      run_command(cmd);
    } catch (const NumericalError& e) {
      std::cerr << "morphcf " << cmd.name << ": numerical failure: " << e.what() << "\n";
      return kExitNumerical;
    } catch (const std::exception& e) {
      std::cerr << "morphcf " << cmd.name << ": " << e.what() << "\n";
      return kExitData;
    }
    std::cout << "(" << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s)\n";
    return 0;
  }
  return kExitUsage;
}
