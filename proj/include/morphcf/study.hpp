#pragma once

// Group study over per-subject ROI volumes: covariate residualization, visit
// averaging, Welch tests with a Bonferroni threshold, and Cohen's d.

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphcf/stats.hpp"

namespace morphcf {

inline const std::vector<std::string> kStudyGroups = {"control", "case", "cf-control", "cf-case"};

/// One row per (subject, group, visit); numeric columns hold covariates and ROI volumes.
class StudyTable {
 public:
  void add_row(const std::string& subject, const std::string& group, const std::map<std::string, double>& values);

  int rows() const { return static_cast<int>(subject_.size()); }
  const std::vector<std::string>& subjects() const { return subject_; }
  const std::vector<std::string>& groups() const { return group_; }
  bool has_column(const std::string& name) const { return columns_.count(name) > 0; }
  const Eigen::VectorXd& column(const std::string& name) const;
  void set_column(const std::string& name, Eigen::VectorXd values);
  std::vector<std::string> column_names() const;

  /// CSV with columns subject, group, then numeric columns.
  void save_csv(const std::filesystem::path& path) const;
  static StudyTable load_csv(const std::filesystem::path& path);

 private:
  std::vector<std::string> subject_, group_;
  std::map<std::string, Eigen::VectorXd> columns_;
};

/// Replace `target` by residuals of OLS target ~ 1 + covariate over all rows.
StudyTable residualize(const StudyTable& table, const std::string& target, const std::string& covariate);

struct Comparison {
  std::string label;
  std::string group_a, group_b;
};

/// The comparison grid of the counterfactual replication: control vs case,
/// cf-control vs cf-case, control vs cf-case, case vs cf-control,
/// control vs cf-control, case vs cf-case.
std::vector<Comparison> replication_comparisons();

struct StudyOptions {
  double alpha = 0.05;
  /// Covariate regressed out of every ROI column first; empty disables.
  std::string covariate = "supratentorial";
};

struct EffectEntry {
  std::string comparison, group_a, group_b, roi;
  int n_a = 0, n_b = 0;
  WelchResult welch;
  CohenD effect;
  bool significant = false;
};

struct EffectReport {
  double threshold = 0.0;
  std::vector<std::string> rois;
  std::vector<Comparison> comparisons;
  std::vector<EffectEntry> entries;  // comparison-major

  const EffectEntry& at(const std::string& comparison, const std::string& roi) const;
};

EffectReport group_study(const StudyTable& table, const std::vector<std::string>& rois,
                         const std::vector<Comparison>& comparisons, const StudyOptions& options = {});

nlohmann::json to_json(const EffectReport& report);
/// Grid: one row per ROI, one p-value column per comparison.
void write_report_csv(const EffectReport& report, const std::filesystem::path& path);

}  // namespace morphcf
