#include <doctest.h>

#include <cmath>

#include "morphcf/phantom.hpp"

using namespace morphcf;

namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.dims = {24, 24, 24};
  s.wm_radius_mm = 6.0;
  s.gm_radius_mm = 8.5;
  s.skull_radius_mm = 11.0;
  s.num_rois = 4;
  return s;
}

SubjectRecord nominal_record(const PhantomSpec& spec) {
  SubjectRecord r;
  r.id = "sub-x";
  r.group = "control";
  r.metadata = {{"age", 50.0}, {"sex", 0.0}, {"diagnosis", 0.0}};
  r.wm_volume_mm3 = nominal_wm_volume_mm3(spec);
  for (int k = 1; k <= spec.num_rois; ++k) r.roi_volumes_mm3.push_back(nominal_roi_volume_mm3(spec, k));
  return r;
}

}  // namespace

TEST_CASE("cohort sampling") {
  const PhantomSpec spec = small_spec();
  const CausalGraph gt = default_ground_truth(spec);
  CHECK(sample_cohort(spec, gt, 0, 1).empty());

  const auto a = sample_cohort(spec, gt, 30, 9), b = sample_cohort(spec, gt, 30, 9);
  REQUIRE(a.size() == 30);
  for (std::size_t n = 0; n < a.size(); ++n) {
    CHECK(a[n].id == b[n].id);
    CHECK(a[n].metadata == b[n].metadata);
    CHECK(a[n].roi_volumes_mm3 == b[n].roi_volumes_mm3);
    CHECK(a[n].group == (a[n].metadata.at("diagnosis") > 0.5 ? "case" : "control"));
  }
  CHECK_THROWS_AS(sample_cohort(spec, gt, -1, 0), InvalidArgument);
}

TEST_CASE("noise-free mechanism evaluates to its mean") {
  CausalGraph g;
  g.add_root("diagnosis", NodeRole::metadata, {RootPrior::Kind::bernoulli, 1.0, 0.0});
  Mechanism m({"diagnosis"});
  m.loc_weights << -5.0;
  m.loc_bias = 100.0;
  m.scale_weights.setZero();
  m.scale_bias = -40.0;  // softplus ~ 0, only the floor remains
  g.add_node("roi_1", NodeRole::roi_volume, m);
  PhantomSpec spec = small_spec();
  spec.num_rois = 1;
  const auto cohort = sample_cohort(spec, g, 5, 3);
  for (const auto& r : cohort) CHECK(r.roi_volumes_mm3[0] == doctest::Approx(95.0).epsilon(1e-6));
}

TEST_CASE("rendering matches requested volumes") {
  const PhantomSpec spec = small_spec();
  const SubjectRecord rec = nominal_record(spec);
  const LabelVolume labels = render_labels(spec, rec);
  CHECK(roi_voxel_count(labels, kWhiteMatter) == std::llround(rec.wm_volume_mm3));
  for (int k = 1; k <= spec.num_rois; ++k)
    CHECK(roi_voxel_count(labels, roi_label(k)) == std::llround(rec.roi_volumes_mm3[k - 1]));

  // Monotone in the request.
  SubjectRecord bigger = rec;
  std::int64_t last = -1;
  for (double extra : {-40.0, 0.0, 10.0, 35.0}) {
    bigger.roi_volumes_mm3[1] = rec.roi_volumes_mm3[1] + extra;
    const auto c = roi_voxel_count(render_labels(spec, bigger), roi_label(2));
    CHECK(c >= last);
    last = c;
  }

  SubjectRecord huge = rec;
  huge.roi_volumes_mm3[2] = 1e6;
  try {
    render_labels(spec, huge);
    FAIL("expected capacity error");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("noiseless image and probability maps") {
  const PhantomSpec spec = small_spec();
  const PhantomVolumes v = render_phantom(spec, nominal_record(spec));
  for (std::int64_t n = 0; n < v.labels.size(); ++n) {
    CHECK(v.image.values()[n] == tissue_intensity(v.labels[n]));
  }
  const auto sums = v.probabilities.table().colwise().sum();
  CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(v.probabilities.argmax_mismatches(v.labels) == 0);

  PhantomSpec noisy = spec;
  noisy.noise_sigma = 0.05;
  const PhantomVolumes w = render_phantom(noisy, nominal_record(spec));
  CHECK(w.labels == v.labels);
  CHECK_FALSE(w.image == v.image);
  CHECK(render_phantom(noisy, nominal_record(spec)).image == w.image);
}

TEST_CASE("spec validation and JSON") {
  PhantomSpec bad = small_spec();
  bad.gm_radius_mm = 5.0;
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
  const PhantomSpec spec = small_spec();
  const PhantomSpec back = phantom_spec_from_json(to_json(spec));
  CHECK(back.dims == spec.dims);
  CHECK(back.num_rois == spec.num_rois);
  CHECK(back.skull_radius_mm == spec.skull_radius_mm);
}
