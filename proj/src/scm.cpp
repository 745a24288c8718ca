#include "morphcf/scm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace morphcf {

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double inverse_softplus(double y) {
  if (!(y > 0)) throw InvalidArgument("inverse_softplus needs y > 0");
  // log(exp(y) - 1) = y + log(1 - exp(-y))
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Mechanism

Mechanism::Mechanism(std::vector<std::string> parent_names) : parents(std::move(parent_names)) {
  loc_weights = Eigen::VectorXd::Zero(arity());
  scale_weights = Eigen::VectorXd::Zero(arity());
}

namespace {

void check_arity(const Mechanism& m, const Eigen::Ref<const Eigen::VectorXd>& pa) {
  if (pa.size() != m.arity())
    throw InvalidArgument("mechanism expects " + std::to_string(m.arity()) + " parents, got " +
                          std::to_string(pa.size()));
}

}  // namespace

double Mechanism::location(const Eigen::Ref<const Eigen::VectorXd>& pa) const {
  check_arity(*this, pa);
  return loc_weights.dot(pa) + loc_bias;
}

double Mechanism::scale(const Eigen::Ref<const Eigen::VectorXd>& pa) const {
  check_arity(*this, pa);
  return softplus(scale_weights.dot(pa) + scale_bias) + kScaleFloor;
}

double Mechanism::forward(const Eigen::Ref<const Eigen::VectorXd>& pa, double u) const {
  return location(pa) + scale(pa) * u;
}

double Mechanism::inverse(const Eigen::Ref<const Eigen::VectorXd>& pa, double v) const {
  if (!pa.allFinite() || !std::isfinite(v)) throw InvalidArgument("mechanism inverse needs finite inputs");
  return (v - location(pa)) / scale(pa);
}

Eigen::VectorXd Mechanism::parameters() const {
  const int p = arity();
  Eigen::VectorXd theta(2 * p + 2);
  theta << loc_weights, loc_bias, scale_weights, scale_bias;
  return theta;
}

void Mechanism::set_parameters(const Eigen::Ref<const Eigen::VectorXd>& theta) {
  const int p = arity();
  if (theta.size() != 2 * p + 2) throw InvalidArgument("parameter vector has wrong length");
  loc_weights = theta.head(p);
  loc_bias = theta[p];
  scale_weights = theta.segment(p + 1, p);
  scale_bias = theta[2 * p + 1];
}

// ---------------------------------------------------------------------------
// Graph

void CausalGraph::add_root(const std::string& name, NodeRole role, RootPrior prior) {
  if (contains(name)) throw InvalidArgument("duplicate node " + name);
  Node n;
  n.name = name;
  n.role = role;
  n.prior = prior;
  index_[name] = size();
  nodes_.push_back(std::move(n));
}

void CausalGraph::add_node(const std::string& name, NodeRole role, Mechanism mechanism) {
  if (contains(name)) throw InvalidArgument("duplicate node " + name);
  if (mechanism.loc_weights.size() != mechanism.arity() || mechanism.scale_weights.size() != mechanism.arity())
    throw InvalidArgument("mechanism of " + name + " has inconsistent coefficient counts");
  std::set<std::string> unique(mechanism.parents.begin(), mechanism.parents.end());
  if (unique.size() != mechanism.parents.size()) throw InvalidArgument("duplicate parent of " + name);
  Node n;
  n.name = name;
  n.role = role;
  n.mechanism = std::move(mechanism);
  index_[name] = size();
  nodes_.push_back(std::move(n));
}

const Node& CausalGraph::node(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown node " + name);
  return nodes_[it->second];
}

Node& CausalGraph::node(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown node " + name);
  return nodes_[it->second];
}

std::vector<std::string> CausalGraph::names() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) out.push_back(n.name);
  return out;
}

std::vector<std::pair<std::string, std::string>> CausalGraph::edges() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& n : nodes_)
    if (n.mechanism)
      for (const auto& p : n.mechanism->parents) out.emplace_back(p, n.name);
  return out;
}

std::vector<std::string> CausalGraph::topo_order() const {
  for (const auto& [parent, child] : edges())
    if (!contains(parent)) throw InvalidArgument("node " + child + " has unknown parent " + parent);

  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> children;
  for (const auto& n : nodes_) indegree[n.name] = 0;
  for (const auto& [parent, child] : edges()) {
    ++indegree[child];
    children[parent].push_back(child);
  }
  std::set<std::string> ready;
  for (const auto& [name, deg] : indegree)
    if (deg == 0) ready.insert(name);

  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::string next = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(next);
    for (const auto& c : children[next])
      if (--indegree[c] == 0) ready.insert(c);
  }
  if (static_cast<int>(order.size()) == size()) return order;

  // Walk parent links among the unresolved nodes until a node repeats.
  std::string cur;
  for (const auto& [name, deg] : indegree)
    if (deg > 0) {
      cur = name;
      break;
    }
  std::vector<std::string> path;
  std::map<std::string, std::size_t> seen;
  while (!seen.count(cur)) {
    seen[cur] = path.size();
    path.push_back(cur);
    for (const auto& p : node(cur).mechanism->parents)
      if (indegree[p] > 0) {
        cur = p;
        break;
      }
  }
  std::string cycle;
  for (std::size_t i = path.size(); i-- > seen[cur];) cycle += path[i] + " -> ";
  cycle += cur;
  throw CyclicGraphError("causal graph has a cycle: " + cycle);
}

void CausalGraph::validate() const { (void)topo_order(); }

std::vector<std::string> topo_order(const CausalGraph& graph) { return graph.topo_order(); }

Eigen::VectorXd gather_parents(const Mechanism& mech, const Assignment& values) {
  Eigen::VectorXd pa(mech.arity());
  for (int i = 0; i < mech.arity(); ++i) {
    auto it = values.find(mech.parents[i]);
    if (it == values.end()) throw IncompleteObservation("missing value for parent " + mech.parents[i]);
    pa[i] = it->second;
  }
  return pa;
}

// ---------------------------------------------------------------------------
// Counterfactual machinery

ExogenousVector abduct(const CausalGraph& graph, const Observation& obs) {
  for (const auto& n : graph.nodes())
    if (!obs.count(n.name)) throw IncompleteObservation("observation lacks node " + n.name);
  ExogenousVector u;
  for (const auto& n : graph.nodes())
    if (n.mechanism) u[n.name] = n.mechanism->inverse(gather_parents(*n.mechanism, obs), obs.at(n.name));
  return u;
}

CausalGraph intervene(const CausalGraph& graph, const Intervention& iv) {
  CausalGraph out = graph;
  for (const auto& [name, value] : iv) {
    if (!graph.contains(name)) throw InvalidArgument("intervention on unknown node " + name);
    if (!std::isfinite(value)) throw InvalidArgument("intervention value for " + name + " is not finite");
    Node& n = out.node(name);
    n.mechanism.reset();
    n.fixed_value = value;
  }
  return out;
}

Observation predict(const CausalGraph& graph, const ExogenousVector& u, const Assignment& root_values) {
  Observation out;
  for (const auto& name : graph.topo_order()) {
    const Node& n = graph.node(name);
    if (n.fixed_value) {
      out[name] = *n.fixed_value;
    } else if (n.is_root()) {
      auto it = root_values.find(name);
      if (it == root_values.end()) throw InvalidArgument("no value supplied for root " + name);
      out[name] = it->second;
    } else {
      auto it = u.find(name);
      if (it == u.end()) throw InvalidArgument("no exogenous noise supplied for " + name);
      out[name] = n.mechanism->forward(gather_parents(*n.mechanism, out), it->second);
    }
  }
  return out;
}

Observation counterfactual(const CausalGraph& graph, const Observation& obs, const Intervention& iv) {
  const ExogenousVector u = abduct(graph, obs);
  const CausalGraph acted = intervene(graph, iv);

  // Nodes downstream of an intervention (including the intervened ones).
  std::set<std::string> affected;
  for (const auto& name : graph.topo_order()) {
    const Node& n = graph.node(name);
    bool hit = iv.count(name) > 0;
    if (!hit && n.mechanism)
      for (const auto& p : n.mechanism->parents) hit = hit || affected.count(p);
    if (hit) affected.insert(name);
  }

  Observation out = predict(acted, u, obs);
  for (auto& [name, value] : out)
    if (!affected.count(name)) value = obs.at(name);
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

MechanismObjective::MechanismObjective(Eigen::MatrixXd parents, Eigen::VectorXd values, bool heteroscedastic)
    : x_(std::move(parents)), v_(std::move(values)), p_(static_cast<int>(x_.cols())),
      heteroscedastic_(heteroscedastic) {
  if (x_.rows() != v_.size()) throw InvalidArgument("parent/value row mismatch");
  if (v_.size() == 0) throw FitError("cannot fit a mechanism on an empty cohort");
}

double MechanismObjective::loss(const Eigen::Ref<const Eigen::VectorXd>& theta, Eigen::VectorXd* grad) const {
  const auto w = theta.head(p_);
  const double b = theta[p_];
  const auto c = theta.segment(p_ + 1, p_);
  const double c0 = theta[2 * p_ + 1];
  const Eigen::Index n = v_.size();

  const Eigen::ArrayXd mu = (x_ * w).array() + b;
  const Eigen::ArrayXd a = heteroscedastic_ ? ((x_ * c).array() + c0).eval() : Eigen::ArrayXd::Constant(n, c0);
  const Eigen::ArrayXd sigma = a.unaryExpr([](double t) { return softplus(t); }) + kScaleFloor;
  const Eigen::ArrayXd u = (v_.array() - mu) / sigma;
  const double value = (0.5 * u.square() + sigma.log()).mean() + 0.5 * std::log(2.0 * M_PI);

  if (grad) {
    grad->resize(dim());
    const Eigen::ArrayXd d_mu = -u / sigma / double(n);
    const Eigen::ArrayXd d_a =
        (1.0 - u.square()) / sigma * a.unaryExpr([](double t) { return sigmoid(t); }) / double(n);
    grad->head(p_) = x_.transpose() * d_mu.matrix();
    (*grad)[p_] = d_mu.sum();
    if (heteroscedastic_)
      grad->segment(p_ + 1, p_) = x_.transpose() * d_a.matrix();
    else
      grad->segment(p_ + 1, p_).setZero();
    (*grad)[2 * p_ + 1] = d_a.sum();
  }
  return value;
}

namespace {

// theta_raw = A * theta_std + offset, with parents standardized and the target scale
// factored out so the standardized problem is O(1)-conditioned.
struct Reparam {
  Eigen::MatrixXd A;
  Eigen::VectorXd offset;
};

Reparam standardizing_map(const Eigen::MatrixXd& x, const Eigen::VectorXd& v) {
  const int p = static_cast<int>(x.cols());
  const double n = static_cast<double>(v.size());
  const double mv = v.mean();
  double sv = std::sqrt((v.array() - mv).square().sum() / n);
  if (!(sv > 0)) sv = std::max(1.0, std::abs(mv));
  Eigen::VectorXd mx = x.colwise().mean();
  Eigen::VectorXd sx(p);
  for (int j = 0; j < p; ++j) {
    sx[j] = std::sqrt((x.col(j).array() - mx[j]).square().sum() / n);
    if (!(sx[j] > 0)) sx[j] = 1.0;
  }
  const int d = 2 * p + 2;
  Reparam r{Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)};
  for (int j = 0; j < p; ++j) {
    r.A(j, j) = sv / sx[j];                 // w_j
    r.A(p, j) = -sv * mx[j] / sx[j];        // b picks up -w_j m_j
    r.A(p + 1 + j, p + 1 + j) = sv / sx[j];  // c_j
    r.A(2 * p + 1, p + 1 + j) = -sv * mx[j] / sx[j];
  }
  r.A(p, p) = sv;
  r.A(2 * p + 1, 2 * p + 1) = sv;
  r.offset[p] = mv;
  return r;
}

NodeFitReport fit_mechanism(Mechanism& mech, const std::string& name, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& v, const FitConfig& cfg) {
  const MechanismObjective objective(x, v, mech.heteroscedastic);
  const Reparam r = standardizing_map(x, v);
  const int d = objective.dim();
  const int p = mech.arity();

  // Start from the marginal: mu = mean(v), sigma = sd(v).
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  const double sv = r.A(p, p);
  z[2 * p + 1] = inverse_softplus(sv) / sv;

  auto eval = [&](const Eigen::VectorXd& zz, Eigen::VectorXd* g) {
    Eigen::VectorXd graw;
    const double l = objective.loss(r.A * zz + r.offset, g ? &graw : nullptr);
    if (g) *g = r.A.transpose() * graw;
    return l;
  };

  NodeFitReport report;
  report.node = name;
  Eigen::VectorXd g;
  double loss = eval(z, &g);
  if (!std::isfinite(loss)) throw FitError("non-finite initial loss for node " + name);
  if (cfg.record_history) report.loss_history.push_back(loss);

  double step = cfg.learning_rate > 0 ? cfg.learning_rate : 1e-3;
  long it = 0;
  int stalled = 0;
  for (; it < cfg.max_iters; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < cfg.grad_tolerance) break;
    const double g2 = g.squaredNorm();
    bool accepted = false;
    Eigen::VectorXd cand, gc;
    double lc = 0.0;
    while (step > 1e-300) {
      cand = z - step * g;
      lc = eval(cand, &gc);
      if (std::isnan(lc)) throw FitError("NaN loss while fitting node " + name);
      if (lc <= loss - 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no descent possible at machine precision
    stalled = loss - lc <= cfg.loss_tolerance * std::max(1.0, std::abs(loss)) ? stalled + 1 : 0;
    z = cand;
    g = gc;
    loss = lc;
    if (cfg.record_history) report.loss_history.push_back(loss);
    step *= 2.0;
    if (stalled >= cfg.stall_window) {
      ++it;
      break;
    }
  }
  mech.set_parameters(r.A * z + r.offset);
  if (!mech.heteroscedastic) mech.scale_weights.setZero();
  report.iterations = it;
  report.nll = loss;
  return report;
}

}  // namespace

FitResult fit(const CausalGraph& skeleton, const std::vector<Observation>& data, const FitConfig& config) {
  if (data.empty()) throw FitError("cannot fit on an empty cohort");
  skeleton.validate();
  FitResult result;
  result.graph = skeleton;
  for (const auto& name : skeleton.topo_order()) {
    Node& node = result.graph.node(name);
    if (!node.mechanism) continue;
    const int p = node.mechanism->arity();
    Eigen::MatrixXd x(data.size(), p);
    Eigen::VectorXd v(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      x.row(i) = gather_parents(*node.mechanism, data[i]).transpose();
      auto it = data[i].find(name);
      if (it == data[i].end()) throw IncompleteObservation("cohort row " + std::to_string(i) + " lacks " + name);
      v[i] = it->second;
    }
    auto report = fit_mechanism(*node.mechanism, name, x, v, config);
    result.nll += report.nll;
    result.nodes.push_back(std::move(report));
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

const char* role_name(NodeRole r) { return r == NodeRole::metadata ? "metadata" : "roi"; }

NodeRole parse_role(const std::string& s) {
  if (s == "metadata") return NodeRole::metadata;
  if (s == "roi") return NodeRole::roi_volume;
  throw InvalidArgument("unknown node role " + s);
}

}  // namespace

nlohmann::json to_json(const CausalGraph& graph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes()) {
    nlohmann::json j;
    j["name"] = n.name;
    j["role"] = role_name(n.role);
    if (n.fixed_value) j["fixed_value"] = *n.fixed_value;
    if (n.prior.kind == RootPrior::Kind::normal)
      j["prior"] = {{"kind", "normal"}, {"mean", n.prior.a}, {"sd", n.prior.b}};
    else if (n.prior.kind == RootPrior::Kind::bernoulli)
      j["prior"] = {{"kind", "bernoulli"}, {"p", n.prior.a}};
    if (n.mechanism) {
      const auto& m = *n.mechanism;
      j["parents"] = m.parents;
      j["loc"] = {{"weights", std::vector<double>(m.loc_weights.data(), m.loc_weights.data() + m.arity())},
                  {"bias", m.loc_bias}};
      j["scale"] = {{"weights", std::vector<double>(m.scale_weights.data(), m.scale_weights.data() + m.arity())},
                    {"bias", m.scale_bias}};
      j["heteroscedastic"] = m.heteroscedastic;
    }
    nodes.push_back(j);
  }
  return {{"nodes", nodes}};
}

CausalGraph graph_from_json(const nlohmann::json& j) {
  CausalGraph g;
  try {
    for (const auto& n : j.at("nodes")) {
      const std::string name = n.at("name");
      const NodeRole role = parse_role(n.value("role", std::string("metadata")));
      if (n.contains("parents")) {
        Mechanism m(n.at("parents").get<std::vector<std::string>>());
        auto read_coeffs = [&](const char* key, Eigen::VectorXd& w, double& bias) {
          if (!n.contains(key)) return;
          const auto& block = n.at(key);
          if (block.contains("weights")) {
            const auto ws = block.at("weights").get<std::vector<double>>();
            if (static_cast<int>(ws.size()) != m.arity())
              throw InvalidArgument(name + "." + key + ".weights has wrong length");
            w = Eigen::Map<const Eigen::VectorXd>(ws.data(), ws.size());
          }
          bias = block.value("bias", 0.0);
        };
        read_coeffs("loc", m.loc_weights, m.loc_bias);
        read_coeffs("scale", m.scale_weights, m.scale_bias);
        if (n.contains("sigma")) {
          // Convenience: constant scale given directly.
          m.scale_weights.setZero();
          m.scale_bias = inverse_softplus(n.at("sigma").get<double>() - kScaleFloor);
        }
        m.heteroscedastic = n.value("heteroscedastic", true);
        g.add_node(name, role, std::move(m));
      } else {
        RootPrior prior;
        if (n.contains("prior")) {
          const auto& p = n.at("prior");
          const std::string kind = p.at("kind");
          if (kind == "normal") {
            prior.kind = RootPrior::Kind::normal;
            prior.a = p.at("mean");
            prior.b = p.at("sd");
          } else if (kind == "bernoulli") {
            prior.kind = RootPrior::Kind::bernoulli;
            prior.a = p.at("p");
          } else {
            throw InvalidArgument("unknown prior kind " + kind);
          }
        }
        g.add_root(name, role, prior);
      }
      if (n.contains("fixed_value")) g.node(name).fixed_value = n.at("fixed_value").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed causal graph JSON: ") + e.what());
  }
  g.validate();
  return g;
}

CausalGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_header, path + ": " + e.what());
  }
  return graph_from_json(j);
}

void save_graph(const CausalGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write " + path);
  out << to_json(graph).dump(2) << "\n";
}

}  // namespace morphcf
