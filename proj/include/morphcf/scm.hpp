#pragma once

// Structural causal model over scalar variables with invertible conditional
// location-scale mechanisms:
//
//   v = mu(pa) + sigma(pa) * u,   mu(pa) = w.pa + b,   sigma(pa) = softplus(c.pa + c0) + floor
//
// Abduction is exact (u = (v - mu) / sigma), which makes counterfactuals
// deterministic: abduct on the observed graph, cut the intervened nodes loose,
// and re-propagate in topological order.

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphcf/error.hpp"

namespace morphcf {

inline constexpr double kScaleFloor = 1e-6;

double softplus(double x);
double inverse_softplus(double y);
double sigmoid(double x);

/// Location-scale conditional flow for a single endogenous variable.
struct Mechanism {
  std::vector<std::string> parents;
  Eigen::VectorXd loc_weights;    // w, one per parent
  double loc_bias = 0.0;          // b
  Eigen::VectorXd scale_weights;  // c, one per parent
  double scale_bias = 0.0;        // c0
  /// When false, scale_weights stay at zero during fitting (sigma independent of parents).
  bool heteroscedastic = true;

  Mechanism() = default;
  explicit Mechanism(std::vector<std::string> parent_names);

  int arity() const { return static_cast<int>(parents.size()); }
  double location(const Eigen::Ref<const Eigen::VectorXd>& pa) const;
  double scale(const Eigen::Ref<const Eigen::VectorXd>& pa) const;

  /// v = mu(pa) + sigma(pa) * u. Strictly increasing in u.
  double forward(const Eigen::Ref<const Eigen::VectorXd>& pa, double u) const;
  /// u = (v - mu(pa)) / sigma(pa).
  double inverse(const Eigen::Ref<const Eigen::VectorXd>& pa, double v) const;

  /// Parameter vector layout [w, b, c, c0] used by the fitter.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::Ref<const Eigen::VectorXd>& theta);
};

enum class NodeRole { metadata, roi_volume };

/// Sampling distribution of a root variable (used only for synthetic cohorts).
struct RootPrior {
  enum class Kind { none, normal, bernoulli } kind = Kind::none;
  double a = 0.0;  // normal: mean, bernoulli: p
  double b = 1.0;  // normal: sd
};

struct Node {
  std::string name;
  NodeRole role = NodeRole::metadata;
  std::optional<Mechanism> mechanism;  // absent for roots
  std::optional<double> fixed_value;   // set by intervene()
  RootPrior prior;

  bool is_root() const { return !mechanism.has_value(); }
};

using Assignment = std::map<std::string, double>;
using Observation = Assignment;
using ExogenousVector = Assignment;
using Intervention = Assignment;

/// DAG of named variables; edges are implied by mechanism parent lists.
class CausalGraph {
 public:
  CausalGraph() = default;

  void add_root(const std::string& name, NodeRole role = NodeRole::metadata, RootPrior prior = {});
  void add_node(const std::string& name, NodeRole role, Mechanism mechanism);

  int size() const { return static_cast<int>(nodes_.size()); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Node& node(const std::string& name) const;
  Node& node(const std::string& name);
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<std::string> names() const;
  std::vector<std::pair<std::string, std::string>> edges() const;

  /// Parents precede children; ties broken by node name. Throws CyclicGraphError.
  std::vector<std::string> topo_order() const;

  /// Every parent exists, graph is acyclic. Throws on violation.
  void validate() const;

 private:
  std::vector<Node> nodes_;
  std::map<std::string, int> index_;
};

std::vector<std::string> topo_order(const CausalGraph& graph);

Eigen::VectorXd gather_parents(const Mechanism& mech, const Assignment& values);

/// u_k = f_k^{-1}(v_k; pa_k) for every non-root node.
ExogenousVector abduct(const CausalGraph& graph, const Observation& obs);

/// do(): intervened nodes become constant roots; the input graph is untouched.
CausalGraph intervene(const CausalGraph& graph, const Intervention& iv);

/// Forward evaluation in topological order. Roots take `root_values` unless fixed.
Observation predict(const CausalGraph& graph, const ExogenousVector& u, const Assignment& root_values);

/// Abduction, action, prediction. Nodes without an intervened ancestor keep their
/// observed values bit-exactly.
Observation counterfactual(const CausalGraph& graph, const Observation& obs, const Intervention& iv);

// ---------------------------------------------------------------------------
// Fitting

struct FitConfig {
  long max_iters = 50000;
  double learning_rate = 1e-5;  // initial step; adapted by backtracking
  double grad_tolerance = 1e-9;
  // Stop once the loss has improved by less than this fraction for `stall_window` steps.
  double loss_tolerance = 1e-14;
  int stall_window = 20;
  bool record_history = false;
};

struct NodeFitReport {
  std::string node;
  long iterations = 0;
  double nll = 0.0;  // mean per-sample negative log-likelihood
  std::vector<double> loss_history;
};

struct FitResult {
  CausalGraph graph;
  double nll = 0.0;  // sum over non-root nodes of mean NLL
  std::vector<NodeFitReport> nodes;
};

/// Mean negative log-likelihood of one mechanism over a data set, with analytic gradient.
class MechanismObjective {
 public:
  /// parents: n x p matrix of parent values; values: n targets.
  MechanismObjective(Eigen::MatrixXd parents, Eigen::VectorXd values, bool heteroscedastic);

  int dim() const { return 2 * p_ + 2; }
  /// theta in the [w, b, c, c0] layout of Mechanism::parameters().
  double loss(const Eigen::Ref<const Eigen::VectorXd>& theta, Eigen::VectorXd* grad = nullptr) const;

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd v_;
  int p_;
  bool heteroscedastic_;
};

/// Maximum-likelihood fit of every mechanism in `skeleton` on the cohort.
/// Full-batch gradient descent with Armijo backtracking in standardized coordinates.
FitResult fit(const CausalGraph& skeleton, const std::vector<Observation>& data, const FitConfig& config = {});

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const CausalGraph& graph);
CausalGraph graph_from_json(const nlohmann::json& j);
CausalGraph load_graph(const std::string& path);
void save_graph(const CausalGraph& graph, const std::string& path);

}  // namespace morphcf
