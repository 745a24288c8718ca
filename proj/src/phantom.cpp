#include "morphcf/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "morphcf/csv.hpp"
#include "morphcf/distance.hpp"

namespace morphcf {

void validate(const PhantomSpec& spec) {
  check_dims(spec.dims);
  check_spacing(spec.spacing);
  if (spec.num_rois < 1) throw InvalidArgument("phantom needs at least one ROI");
  if (!(spec.noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
  if (!(spec.temperature_voxels > 0.0)) throw InvalidArgument("temperature_voxels must be > 0");
  double reach = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) reach = std::min(reach, 0.5 * (spec.dims[a] - 1) * spec.spacing[a]);
  if (!(0.0 < spec.wm_radius_mm && spec.wm_radius_mm < spec.gm_radius_mm &&
        spec.gm_radius_mm < spec.skull_radius_mm && spec.skull_radius_mm < reach))
    throw InvalidArgument("phantom radii must satisfy 0 < wm < gm < skull < " + std::to_string(reach) + " mm");
}

nlohmann::json to_json(const PhantomSpec& s) {
  return {{"dims", s.dims},
          {"spacing", {s.spacing[0], s.spacing[1], s.spacing[2]}},
          {"num_rois", s.num_rois},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"wm_radius_mm", s.wm_radius_mm},
          {"gm_radius_mm", s.gm_radius_mm},
          {"skull_radius_mm", s.skull_radius_mm},
          {"temperature_voxels", s.temperature_voxels},
          {"sector_offset_rad", s.sector_offset_rad}};
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    if (j.contains("dims")) s.dims = j.at("dims").get<Dims>();
    if (j.contains("spacing")) {
      const auto v = j.at("spacing").get<std::array<double, 3>>();
      s.spacing = Spacing(v[0], v[1], v[2]);
    }
    s.num_rois = j.value("num_rois", s.num_rois);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    s.wm_radius_mm = j.value("wm_radius_mm", s.wm_radius_mm);
    s.gm_radius_mm = j.value("gm_radius_mm", s.gm_radius_mm);
    s.skull_radius_mm = j.value("skull_radius_mm", s.skull_radius_mm);
    s.temperature_voxels = j.value("temperature_voxels", s.temperature_voxels);
    s.sector_offset_rad = j.value("sector_offset_rad", s.sector_offset_rad);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed phantom spec: ") + e.what());
  }
  validate(s);
  return s;
}

double tissue_intensity(Label l) {
  if (l == kBackground) return TissueIntensity::background;
  if (l == kWhiteMatter) return TissueIntensity::white;
  if (l == kCsf) return TissueIntensity::csf;
  return TissueIntensity::gray;
}

std::string roi_node(int k) { return "roi_" + std::to_string(k); }

Observation to_observation(const SubjectRecord& r) {
  Observation obs(r.metadata.begin(), r.metadata.end());
  obs[kWhiteMatterNode] = r.wm_volume_mm3;
  for (std::size_t k = 0; k < r.roi_volumes_mm3.size(); ++k) obs[roi_node(int(k) + 1)] = r.roi_volumes_mm3[k];
  return obs;
}

namespace {

struct VoxelGeometry {
  std::vector<double> radius2;  // squared distance to center (mm^2)
  std::vector<int> sector;      // 0-based sector index
};

VoxelGeometry geometry(const PhantomSpec& spec) {
  const Dims& d = spec.dims;
  VoxelGeometry g;
  g.radius2.resize(voxel_count(d));
  g.sector.resize(voxel_count(d));
  const double two_pi = 2.0 * M_PI;
  const double width = two_pi / spec.num_rois;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const double x = (i - 0.5 * (d[0] - 1)) * spec.spacing[0];
        const double y = (j - 0.5 * (d[1] - 1)) * spec.spacing[1];
        const double z = (k - 0.5 * (d[2] - 1)) * spec.spacing[2];
        const auto n = linear_index(d, i, j, k);
        g.radius2[n] = x * x + y * y + z * z;
        double phi = std::fmod(std::atan2(y, x) + M_PI + spec.sector_offset_rad, two_pi);
        if (phi < 0) phi += two_pi;
        g.sector[n] = std::min(static_cast<int>(phi / width), spec.num_rois - 1);
      }
  return g;
}

/// Voxels ordered by (radius, linear index).
std::vector<std::int64_t> radial_order(const VoxelGeometry& g, const std::vector<std::int64_t>& subset) {
  std::vector<std::int64_t> out = subset;
  std::sort(out.begin(), out.end(), [&](std::int64_t a, std::int64_t b) {
    return g.radius2[a] != g.radius2[b] ? g.radius2[a] < g.radius2[b] : a < b;
  });
  return out;
}

std::int64_t to_voxels(double mm3, double voxel_mm3) {
  return static_cast<std::int64_t>(std::llround(mm3 / voxel_mm3));
}

}  // namespace

double nominal_wm_volume_mm3(const PhantomSpec& spec) {
  validate(spec);
  const auto g = geometry(spec);
  const double r2 = spec.wm_radius_mm * spec.wm_radius_mm;
  const auto n = std::count_if(g.radius2.begin(), g.radius2.end(), [&](double v) { return v <= r2; });
  return n * spec.spacing.prod();
}

double nominal_roi_volume_mm3(const PhantomSpec& spec, int roi) {
  validate(spec);
  if (roi < 1 || roi > spec.num_rois) throw InvalidArgument("ROI " + std::to_string(roi) + " out of range");
  const auto g = geometry(spec);
  const double lo = spec.wm_radius_mm * spec.wm_radius_mm, hi = spec.gm_radius_mm * spec.gm_radius_mm;
  std::int64_t n = 0;
  for (std::size_t v = 0; v < g.radius2.size(); ++v)
    n += g.sector[v] == roi - 1 && g.radius2[v] > lo && g.radius2[v] <= hi;
  return n * spec.spacing.prod();
}

CausalGraph default_ground_truth(const PhantomSpec& spec, double diagnosis_effect_mm3) {
  CausalGraph g;
  g.add_root("age", NodeRole::metadata, {RootPrior::Kind::normal, 50.0, 10.0});
  g.add_root("sex", NodeRole::metadata, {RootPrior::Kind::bernoulli, 0.5, 0.0});
  g.add_root("diagnosis", NodeRole::metadata, {RootPrior::Kind::bernoulli, 0.5, 0.0});

  auto constant_scale = [](Mechanism& m, double sigma) {
    m.scale_weights.setZero();
    m.scale_bias = inverse_softplus(sigma - kScaleFloor);
  };

  // White matter carries most of the supratentorial variance, so regressing the
  // supratentorial volume out of an ROI leaks little of the diagnosis effect.
  // Its coefficients are fractions of the nominal volume so small grids stay positive.
  const double nominal_wm = nominal_wm_volume_mm3(spec);
  Mechanism wm({"age", "sex"});
  wm.loc_weights << -0.003 * nominal_wm, 0.08 * nominal_wm;
  wm.loc_bias = 1.15 * nominal_wm;
  constant_scale(wm, 0.2 * nominal_wm);
  g.add_node(kWhiteMatterNode, NodeRole::roi_volume, wm);

  for (int k = 1; k <= spec.num_rois; ++k) {
    Mechanism m({"age", "sex", "diagnosis"});
    const bool affected = spec.num_rois == 1 || k < spec.num_rois;
    m.loc_weights << -3.0, 60.0, affected ? diagnosis_effect_mm3 : 0.0;
    m.loc_bias = std::round(nominal_roi_volume_mm3(spec, k)) + 150.0;
    constant_scale(m, 20.0);
    g.add_node(roi_node(k), NodeRole::roi_volume, m);
  }
  return g;
}

std::vector<SubjectRecord> sample_cohort(const PhantomSpec& spec, const CausalGraph& gt, int n,
                                         std::uint64_t seed) {
  if (n < 0) throw InvalidArgument("cohort size must be >= 0");
  const auto order = gt.topo_order();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<SubjectRecord> cohort;
  cohort.reserve(n);
  for (int s = 0; s < n; ++s) {
    Observation values;
    for (const auto& name : order) {
      const Node& node = gt.node(name);
      if (node.fixed_value) {
        values[name] = *node.fixed_value;
      } else if (node.is_root()) {
        switch (node.prior.kind) {
          case RootPrior::Kind::normal: values[name] = node.prior.a + node.prior.b * normal(rng); break;
          case RootPrior::Kind::bernoulli: values[name] = uniform(rng) < node.prior.a ? 1.0 : 0.0; break;
          case RootPrior::Kind::none: throw InvalidArgument("root " + name + " has no sampling prior");
        }
      } else {
        values[name] = node.mechanism->forward(gather_parents(*node.mechanism, values), normal(rng));
      }
    }

    SubjectRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "sub-%04d", s + 1);
    r.id = id;
    for (const auto& node : gt.nodes())
      if (node.role == NodeRole::metadata) r.metadata[node.name] = values.at(node.name);
    r.group = r.metadata.count("diagnosis") && r.metadata.at("diagnosis") > 0.5 ? "case" : "control";
    r.wm_volume_mm3 = gt.contains(kWhiteMatterNode) ? values.at(kWhiteMatterNode) : nominal_wm_volume_mm3(spec);
    for (int k = 1; k <= spec.num_rois; ++k) {
      const std::string key = roi_node(k);
      const double v = gt.contains(key) ? values.at(key) : nominal_roi_volume_mm3(spec, k);
      if (!(v > 0.0)) throw NumericalError("sampled non-positive volume for " + key + " of " + r.id);
      r.roi_volumes_mm3.push_back(v);
    }
    if (!(r.wm_volume_mm3 > 0.0)) throw NumericalError("sampled non-positive white matter volume for " + r.id);
    cohort.push_back(std::move(r));
  }
  return cohort;
}

LabelVolume render_labels(const PhantomSpec& spec, const SubjectRecord& record) {
  validate(spec);
  if (static_cast<int>(record.roi_volumes_mm3.size()) != spec.num_rois)
    throw InvalidArgument("record " + record.id + " has " + std::to_string(record.roi_volumes_mm3.size()) +
                          " ROI volumes, spec declares " + std::to_string(spec.num_rois));
  const auto g = geometry(spec);
  const double voxel_mm3 = spec.spacing.prod();
  const double skull2 = spec.skull_radius_mm * spec.skull_radius_mm;

  std::vector<std::int64_t> skull;
  for (std::size_t v = 0; v < g.radius2.size(); ++v)
    if (g.radius2[v] <= skull2) skull.push_back(static_cast<std::int64_t>(v));
  skull = radial_order(g, skull);

  LabelVolume::Labels labels = LabelVolume::Labels::Constant(voxel_count(spec.dims), kBackground);
  const std::int64_t n_wm = to_voxels(record.wm_volume_mm3, voxel_mm3);
  if (n_wm < 0 || n_wm > static_cast<std::int64_t>(skull.size()))
    throw CapacityError("white matter volume " + std::to_string(record.wm_volume_mm3) + " mm3 exceeds the skull");

  std::vector<std::vector<std::int64_t>> sectors(spec.num_rois);
  for (std::size_t r = 0; r < skull.size(); ++r) {
    const auto v = skull[r];
    if (static_cast<std::int64_t>(r) < n_wm) {
      labels[v] = kWhiteMatter;
    } else {
      labels[v] = kCsf;
      sectors[g.sector[v]].push_back(v);  // stays radially ordered
    }
  }
  for (int k = 1; k <= spec.num_rois; ++k) {
    const double mm3 = record.roi_volumes_mm3[k - 1];
    if (!(mm3 >= 0.0) || !std::isfinite(mm3)) throw InvalidArgument("ROI " + std::to_string(k) + " volume invalid");
    const std::int64_t want = to_voxels(mm3, voxel_mm3);
    const auto& sector = sectors[k - 1];
    if (want > static_cast<std::int64_t>(sector.size()))
      throw CapacityError("ROI " + std::to_string(k) + " requests " + std::to_string(want) + " voxels but its sector holds " +
                          std::to_string(sector.size()));
    for (std::int64_t r = 0; r < want; ++r) labels[sector[r]] = roi_label(k);
  }
  return LabelVolume(spec.dims, spec.spacing, spec.num_rois, std::move(labels));
}

ProbabilityVolume label_probabilities(const LabelVolume& labels, double temperature_voxels) {
  if (!(temperature_voxels > 0)) throw InvalidArgument("temperature must be > 0");
  const double tau = temperature_voxels * labels.spacing().minCoeff();
  const int L = labels.num_labels();
  ProbabilityVolume::Table logits(L, labels.size());
  for (Label l = 0; l < L; ++l) {
    const Mask region = labels.labels() == l;
    logits.row(l) = (-signed_distance(labels.dims(), labels.spacing(), region) / tau).matrix().transpose();
  }
  // Column-wise softmax.
  const Eigen::RowVectorXd peak = logits.colwise().maxCoeff();
  logits = (logits.rowwise() - peak).array().exp().matrix();
  const Eigen::RowVectorXd total = logits.colwise().sum();
  logits = logits.array().rowwise() / total.array();
  return ProbabilityVolume(labels.dims(), L, std::move(logits));
}

Grid render_image(const LabelVolume& labels, double noise_sigma, std::mt19937_64& rng) {
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
  Grid::Values values(labels.size());
  for (std::int64_t n = 0; n < labels.size(); ++n) values[n] = tissue_intensity(labels[n]);
  if (noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& v : values) v += noise(rng);
  }
  return Grid(labels.dims(), labels.spacing(), std::move(values));
}

PhantomVolumes render_phantom(const PhantomSpec& spec, const SubjectRecord& record) {
  LabelVolume labels = render_labels(spec, record);
  std::seed_seq seq(record.id.begin(), record.id.end());
  std::vector<std::uint64_t> words(2);
  seq.generate(words.begin(), words.end());
  std::mt19937_64 rng(spec.seed ^ words[0] ^ (words[1] << 1));
  Grid image = render_image(labels, spec.noise_sigma, rng);
  ProbabilityVolume probs = label_probabilities(labels, spec.temperature_voxels);
  return {std::move(image), std::move(labels), std::move(probs)};
}

void write_manifest(const std::vector<SubjectRecord>& cohort, int num_rois, const std::filesystem::path& path) {
  CsvTable t;
  t.header = {"id", "group"};
  std::vector<std::string> meta{"age", "diagnosis", "sex"};
  if (!cohort.empty()) {
    meta.clear();
    for (const auto& [k, v] : cohort.front().metadata) meta.push_back(k);
  }
  const auto rois = static_cast<std::size_t>(num_rois);
  t.header.insert(t.header.end(), meta.begin(), meta.end());
  t.header.push_back("wm_mm3");
  for (std::size_t k = 1; k <= rois; ++k) t.header.push_back(roi_node(int(k)));
  for (const auto& r : cohort) {
    if (r.roi_volumes_mm3.size() != rois) throw InvalidArgument("records disagree on ROI count");
    std::vector<std::string> row{r.id, r.group};
    for (const auto& m : meta) {
      auto it = r.metadata.find(m);
      if (it == r.metadata.end()) throw InvalidArgument("record " + r.id + " lacks metadata " + m);
      row.push_back(format_double(it->second));
    }
    row.push_back(format_double(r.wm_volume_mm3));
    for (double v : r.roi_volumes_mm3) row.push_back(format_double(v));
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

std::vector<SubjectRecord> read_manifest(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const int id = t.column("id"), group = t.column("group"), wm = t.column("wm_mm3");
  std::vector<std::pair<int, int>> rois;  // (roi number, column)
  std::vector<int> meta;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const auto& h = t.header[c];
    if (int(c) == id || int(c) == group || int(c) == wm) continue;
    if (h.rfind("roi_", 0) == 0)
      rois.emplace_back(std::stoi(h.substr(4)), int(c));
    else
      meta.push_back(int(c));
  }
  std::sort(rois.begin(), rois.end());
  for (std::size_t k = 0; k < rois.size(); ++k)
    if (rois[k].first != int(k) + 1) throw InvalidArgument(path.string() + ": ROI columns must be roi_1..roi_M");

  std::vector<SubjectRecord> out;
  for (const auto& row : t.rows) {
    SubjectRecord r;
    r.id = row[id];
    r.group = row[group];
    const std::string ctx = path.string() + " row " + r.id;
    for (int c : meta) r.metadata[t.header[c]] = parse_double(row[c], ctx);
    r.wm_volume_mm3 = parse_double(row[wm], ctx);
    for (const auto& [k, c] : rois) r.roi_volumes_mm3.push_back(parse_double(row[c], ctx));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace morphcf
