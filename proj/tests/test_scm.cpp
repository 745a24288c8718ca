#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <random>

#include "morphcf/scm.hpp"

using namespace morphcf;

namespace {

Mechanism affine(std::vector<std::string> parents, std::vector<double> w, double b, double sigma) {
  Mechanism m(std::move(parents));
  for (int n = 0; n < m.arity(); ++n) m.loc_weights[n] = w[n];
  m.loc_bias = b;
  m.scale_weights.setZero();
  m.scale_bias = inverse_softplus(sigma - kScaleFloor);
  m.heteroscedastic = false;
  return m;
}

/// a -> v with mu = 2a + 1, sigma = 0.5.
CausalGraph chain() {
  CausalGraph g;
  g.add_root("a");
  g.add_node("v", NodeRole::roi_volume, affine({"a"}, {2.0}, 1.0, 0.5));
  return g;
}

CausalGraph diamond() {
  CausalGraph g;
  g.add_root("a");
  g.add_node("b", NodeRole::metadata, affine({"a"}, {2.0}, 1.0, 0.5));
  g.add_node("c", NodeRole::metadata, affine({"a"}, {-1.0}, 0.0, 2.0));
  g.add_node("d", NodeRole::roi_volume, affine({"b", "c"}, {1.0, 3.0}, -2.0, 1.0));
  return g;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(v.size());
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

}  // namespace

TEST_CASE("topological order") {
  CHECK(topo_order(chain()) == std::vector<std::string>{"a", "v"});

  const auto order = topo_order(diamond());
  auto pos = [&](const std::string& n) { return std::find(order.begin(), order.end(), n) - order.begin(); };
  CHECK(pos("a") < pos("b"));
  CHECK(pos("a") < pos("c"));
  CHECK(pos("b") < pos("d"));
  CHECK(pos("c") < pos("d"));

  CausalGraph cyclic;
  cyclic.add_node("a", NodeRole::metadata, Mechanism({"b"}));
  cyclic.add_node("b", NodeRole::metadata, Mechanism({"a"}));
  CHECK_THROWS_AS(cyclic.topo_order(), CyclicGraphError);
}

TEST_CASE("mechanism forward and inverse") {
  const Mechanism m = affine({"a"}, {2.0}, 1.0, 0.5);
  CHECK(m.forward(vec({3.0}), 2.0) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(m.forward(vec({3.0}), 0.0) == doctest::Approx(m.location(vec({3.0}))));
  CHECK(m.inverse(vec({3.0}), 8.0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(m.inverse(vec({3.0}), 7.0) == doctest::Approx(0.0));

  Mechanism id(std::vector<std::string>{"a"});
  id.loc_weights.setZero();
  id.loc_bias = 0.0;
  id.scale_weights.setZero();
  id.scale_bias = inverse_softplus(1.0 - kScaleFloor);
  CHECK(id.forward(vec({7.0}), 0.37) == doctest::Approx(0.37).epsilon(1e-12));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    Mechanism r(std::vector<std::string>{"p", "q"});
    r.loc_weights = vec({3 * n01(rng), 3 * n01(rng)});
    r.loc_bias = 10 * n01(rng);
    r.scale_weights = vec({n01(rng), n01(rng)});
    r.scale_bias = n01(rng);
    const Eigen::VectorXd pa = vec({n01(rng), n01(rng)});
    const double v = 20 * n01(rng);
    worst = std::max(worst, std::abs(r.forward(pa, r.inverse(pa, v)) - v));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("abduction") {
  const ExogenousVector u = abduct(chain(), {{"a", 3.0}, {"v", 8.0}});
  REQUIRE(u.size() == 1);
  CHECK(u.at("v") == doctest::Approx(2.0));

  CausalGraph roots;
  roots.add_root("x");
  roots.add_root("y");
  CHECK(abduct(roots, {{"x", 1.0}, {"y", 2.0}}).empty());

  const CausalGraph g = diamond();
  const ExogenousVector known{{"b", 0.3}, {"c", -1.2}, {"d", 0.8}};
  const Observation obs = predict(g, known, {{"a", 1.5}});
  const ExogenousVector back = abduct(g, obs);
  for (const auto& [k, v] : known) CHECK(back.at(k) == doctest::Approx(v).epsilon(1e-12));
  CHECK_THROWS_AS(abduct(g, {{"a", 1.0}}), IncompleteObservation);
}

TEST_CASE("intervention and prediction") {
  const CausalGraph g = diamond();
  const CausalGraph same = intervene(g, {});
  CHECK(to_json(same) == to_json(g));

  CausalGraph withdiag;
  withdiag.add_root("age");
  withdiag.add_node("diagnosis", NodeRole::metadata, affine({"age"}, {0.1}, 0.0, 1.0));
  const CausalGraph done = intervene(withdiag, {{"diagnosis", 1.0}});
  CHECK(done.node("diagnosis").is_root());
  CHECK(done.node("diagnosis").fixed_value == 1.0);

  // Hand evaluation in topological order: a=1, u=(0.5, 1, -1).
  const Observation hand = predict(g, {{"b", 0.5}, {"c", 1.0}, {"d", -1.0}}, {{"a", 1.0}});
  CHECK(hand.at("b") == doctest::Approx(2 + 1 + 0.25));
  CHECK(hand.at("c") == doctest::Approx(-1 + 2.0));
  CHECK(hand.at("d") == doctest::Approx(3.25 + 3 * 1.0 - 2 - 1.0));

  // A leaf under do() ignores its mechanism.
  const Observation leaf = predict(intervene(g, {{"d", 42.0}}), {{"b", 0.5}, {"c", 1.0}, {"d", -1.0}}, {{"a", 1.0}});
  CHECK(leaf.at("d") == 42.0);
  CHECK(leaf.at("b") == hand.at("b"));

  // Degenerate scale: output does not depend on u.
  CausalGraph flat;
  flat.add_root("a");
  Mechanism m = affine({"a"}, {1.0}, 0.0, 1.0);
  m.scale_bias = -50.0;
  flat.add_node("v", NodeRole::metadata, m);
  CHECK(predict(flat, {{"v", 5.0}}, {{"a", 2.0}}).at("v") == doctest::Approx(predict(flat, {{"v", -5.0}}, {{"a", 2.0}}).at("v")).epsilon(1e-4));
}

TEST_CASE("counterfactuals") {
  const CausalGraph g = chain();
  CHECK(counterfactual(g, {{"a", 3.0}, {"v", 8.0}}, {{"a", 5.0}}).at("v") == doctest::Approx(12.0).epsilon(1e-12));

  const Observation obs = predict(diamond(), {{"b", 0.1}, {"c", 0.7}, {"d", -0.4}}, {{"a", 0.9}});
  CHECK(counterfactual(diamond(), obs, {}) == obs);
  CHECK(counterfactual(diamond(), obs, {{"a", obs.at("a")}}) == obs);

  // do(c) leaves the sibling b bit-exact.
  const Observation cf = counterfactual(diamond(), obs, {{"c", 4.0}});
  CHECK(cf.at("b") == obs.at("b"));
  CHECK(cf.at("a") == obs.at("a"));
  // Affine child shifts by exactly w * delta.
  CHECK(cf.at("d") - obs.at("d") == doctest::Approx(3.0 * (4.0 - obs.at("c"))).epsilon(1e-12));
}

TEST_CASE("objective gradient") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01;
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 30, p = 1 + rep % 3;
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd v(n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < p; ++c) x(r, c) = n01(rng);
      v[r] = x.row(r).sum() + n01(rng);
    }
    const MechanismObjective obj(x, v, true);
    Eigen::VectorXd theta(obj.dim());
    for (auto& t : theta) t = 0.5 * n01(rng);
    Eigen::VectorXd grad;
    obj.loss(theta, &grad);
    for (int k = 0; k < obj.dim(); ++k) {
      const double h = 1e-6;
      Eigen::VectorXd tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      const double fd = (obj.loss(tp) - obj.loss(tm)) / (2 * h);
      CHECK(std::abs(fd - grad[k]) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("fitting recovers generating parameters") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  std::bernoulli_distribution coin(0.5);
  std::vector<Observation> data;
  for (int s = 0; s < 2000; ++s) {
    const double diag = coin(rng) ? 1.0 : 0.0;
    data.push_back({{"diagnosis", diag}, {"v", 100.0 - 5.0 * diag + 2.0 * n01(rng)}});
  }
  CausalGraph skeleton;
  skeleton.add_root("diagnosis");
  skeleton.add_node("v", NodeRole::roi_volume, Mechanism({"diagnosis"}));

  FitConfig fc;
  fc.record_history = true;
  const FitResult fitted = fit(skeleton, data, fc);
  const Mechanism& m = *fitted.graph.node("v").mechanism;
  CHECK(m.loc_weights[0] == doctest::Approx(-5.0).epsilon(0.05));
  CHECK(m.scale(vec({0.5})) == doctest::Approx(2.0).epsilon(0.05));

  const auto& hist = fitted.nodes.front().loss_history;
  REQUIRE(hist.size() > 1);
  for (std::size_t n = 1; n < hist.size(); ++n) CHECK(hist[n] <= hist[n - 1]);
  // A stalled loss ends the fit long before the iteration cap.
  CHECK(fitted.nodes.front().iterations < fc.max_iters / 10);
}

TEST_CASE("constant-scale fit agrees with least squares") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  const int n = 500;
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd y(n);
  std::vector<Observation> data;
  for (int s = 0; s < n; ++s) {
    const double p = 40 + 10 * n01(rng), q = n01(rng);
    y[s] = 3.0 - 0.7 * p + 4.0 * q + 1.5 * n01(rng);
    design.row(s) << 1.0, p, q;
    data.push_back({{"p", p}, {"q", q}, {"y", y[s]}});
  }
  const Eigen::VectorXd ols = design.colPivHouseholderQr().solve(y);

  CausalGraph skeleton;
  skeleton.add_root("p");
  skeleton.add_root("q");
  Mechanism m({"p", "q"});
  m.heteroscedastic = false;
  skeleton.add_node("y", NodeRole::roi_volume, m);
  const FitResult fitted = fit(skeleton, data);
  const Mechanism& f = *fitted.graph.node("y").mechanism;
  CHECK(f.loc_bias == doctest::Approx(ols[0]).epsilon(1e-3));
  CHECK(std::abs(f.loc_weights[0] - ols[1]) < 1e-3);
  CHECK(std::abs(f.loc_weights[1] - ols[2]) < 1e-3);
}

TEST_CASE("degenerate fits") {
  CausalGraph skeleton = chain();
  const FitResult one = fit(skeleton, {{{"a", 1.0}, {"v", 2.0}}});
  CHECK(std::isfinite(one.nll));
  CHECK(std::isfinite(one.graph.node("v").mechanism->scale(vec({1.0}))));
  CHECK_THROWS_AS(fit(skeleton, {}), FitError);
}

TEST_CASE("graph JSON round trip") {
  const CausalGraph g = diamond();
  const CausalGraph back = graph_from_json(to_json(g));
  const Observation obs = predict(g, {{"b", 0.1}, {"c", 0.2}, {"d", 0.3}}, {{"a", 1.0}});
  CHECK(predict(back, {{"b", 0.1}, {"c", 0.2}, {"d", 0.3}}, {{"a", 1.0}}) == obs);
  CHECK_THROWS_AS(graph_from_json(nlohmann::json{{"nodes", {{{"name", "x"}, {"parents", {"missing"}}}}}}), Error);
}
