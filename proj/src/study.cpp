#include "morphcf/study.hpp"

#include <algorithm>
#include <set>

#include "morphcf/csv.hpp"

namespace morphcf {

void StudyTable::add_row(const std::string& subject, const std::string& group,
                         const std::map<std::string, double>& values) {
  if (std::find(kStudyGroups.begin(), kStudyGroups.end(), group) == kStudyGroups.end())
    throw InvalidArgument("unknown study group '" + group + "'");
  if (rows() > 0) {
    if (values.size() != columns_.size()) throw InvalidArgument("row for " + subject + " has a different column set");
    for (const auto& [name, v] : values)
      if (!columns_.count(name)) throw InvalidArgument("row for " + subject + " has unknown column " + name);
  }
  for (const auto& [name, v] : values) {
    if (!std::isfinite(v)) throw InvalidArgument("row for " + subject + ": column " + name + " is not finite");
    auto& col = columns_[name];
    col.conservativeResize(rows() + 1);
    col[rows()] = v;
  }
  subject_.push_back(subject);
  group_.push_back(group);
}

const Eigen::VectorXd& StudyTable::column(const std::string& name) const {
  auto it = columns_.find(name);
  if (it == columns_.end()) throw InvalidArgument("study table has no column '" + name + "'");
  return it->second;
}

void StudyTable::set_column(const std::string& name, Eigen::VectorXd values) {
  if (values.size() != rows()) throw InvalidArgument("column " + name + " has the wrong length");
  columns_[name] = std::move(values);
}

std::vector<std::string> StudyTable::column_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : columns_) out.push_back(k);
  return out;
}

void StudyTable::save_csv(const std::filesystem::path& path) const {
  CsvTable t;
  t.header = {"subject", "group"};
  const auto names = column_names();
  t.header.insert(t.header.end(), names.begin(), names.end());
  for (int r = 0; r < rows(); ++r) {
    std::vector<std::string> row{subject_[r], group_[r]};
    for (const auto& n : names) row.push_back(format_double(columns_.at(n)[r]));
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

StudyTable StudyTable::load_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const int subject = t.column("subject"), group = t.column("group");
  StudyTable out;
  for (const auto& row : t.rows) {
    std::map<std::string, double> values;
    for (std::size_t c = 0; c < t.header.size(); ++c)
      if (int(c) != subject && int(c) != group)
        values[t.header[c]] = parse_double(row[c], path.string() + " column " + t.header[c]);
    out.add_row(row[subject], row[group], values);
  }
  return out;
}

StudyTable residualize(const StudyTable& table, const std::string& target, const std::string& covariate) {
  const Eigen::VectorXd& y = table.column(target);
  const Eigen::VectorXd& x = table.column(covariate);
  if (x.size() < 2) throw InvalidArgument("residualize needs at least two rows");
  const Eigen::ArrayXd dx = x.array() - x.mean();
  const double sxx = dx.square().sum();
  if (!(sxx > 0.0)) throw InvalidArgument("covariate '" + covariate + "' is constant");
  const Eigen::ArrayXd dy = y.array() - y.mean();
  const double slope = (dx * dy).sum() / sxx;
  Eigen::ArrayXd resid = dy - slope * dx;
  resid -= resid.mean();  // exact-zero mean up to rounding
  StudyTable out = table;
  out.set_column(target, resid.matrix());
  return out;
}

std::vector<Comparison> replication_comparisons() {
  return {{"control vs case", "control", "case"},
          {"cf-control vs cf-case", "cf-control", "cf-case"},
          {"control vs cf-case", "control", "cf-case"},
          {"case vs cf-control", "case", "cf-control"},
          {"control vs cf-control", "control", "cf-control"},
          {"case vs cf-case", "case", "cf-case"}};
}

const EffectEntry& EffectReport::at(const std::string& comparison, const std::string& roi) const {
  for (const auto& e : entries)
    if (e.comparison == comparison && e.roi == roi) return e;
  throw InvalidArgument("report has no entry for " + comparison + " / " + roi);
}

namespace {

/// Per-subject mean of `values` over the rows of one group (visit averaging).
Eigen::VectorXd subject_means(const StudyTable& t, const Eigen::VectorXd& values, const std::string& group) {
  std::map<std::string, std::pair<double, int>> acc;
  for (int r = 0; r < t.rows(); ++r)
    if (t.groups()[r] == group) {
      auto& [sum, n] = acc[t.subjects()[r]];
      sum += values[r];
      ++n;
    }
  Eigen::VectorXd out(acc.size());
  Eigen::Index i = 0;
  for (const auto& [subject, sn] : acc) out[i++] = sn.first / sn.second;
  return out;
}

}  // namespace

EffectReport group_study(const StudyTable& table, const std::vector<std::string>& rois,
                         const std::vector<Comparison>& comparisons, const StudyOptions& options) {
  EffectReport report;
  report.rois = rois;
  report.comparisons = comparisons;
  report.threshold = bonferroni_threshold(options.alpha, std::max<int>(1, rois.size()));
  if (comparisons.empty() || rois.empty()) return report;

  const std::set<std::string> present(table.groups().begin(), table.groups().end());
  for (const auto& c : comparisons)
    for (const auto& g : {c.group_a, c.group_b})
      if (!present.count(g)) throw InvalidArgument("comparison '" + c.label + "' needs group '" + g + "', absent");

  StudyTable work = table;
  if (!options.covariate.empty())
    for (const auto& roi : rois) work = residualize(work, roi, options.covariate);

  for (const auto& c : comparisons)
    for (const auto& roi : rois) {
      const Eigen::VectorXd& col = work.column(roi);
      const Eigen::VectorXd a = subject_means(work, col, c.group_a), b = subject_means(work, col, c.group_b);
      EffectEntry e;
      e.comparison = c.label;
      e.group_a = c.group_a;
      e.group_b = c.group_b;
      e.roi = roi;
      e.n_a = static_cast<int>(a.size());
      e.n_b = static_cast<int>(b.size());
      e.welch = welch_t(a, b);
      e.effect = cohen_d(a, b);
      e.significant = e.welch.p < report.threshold;
      report.entries.push_back(e);
    }
  return report;
}

nlohmann::json to_json(const EffectReport& report) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries)
    entries.push_back({{"comparison", e.comparison},
                       {"group_a", e.group_a},
                       {"group_b", e.group_b},
                       {"roi", e.roi},
                       {"n_a", e.n_a},
                       {"n_b", e.n_b},
                       {"t", e.welch.t},
                       {"df", e.welch.df},
                       {"p", e.welch.p},
                       {"cohen_d", e.effect.d},
                       {"bucket", to_string(e.effect.bucket)},
                       {"significant", e.significant}});
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : report.comparisons) comps.push_back({{"label", c.label}, {"a", c.group_a}, {"b", c.group_b}});
  return {{"threshold", report.threshold}, {"rois", report.rois}, {"comparisons", comps}, {"entries", entries}};
}

void write_report_csv(const EffectReport& report, const std::filesystem::path& path) {
  CsvTable t;
  t.header = {"roi"};
  for (const auto& c : report.comparisons) t.header.push_back(c.label);
  for (const auto& roi : report.rois) {
    std::vector<std::string> row{roi};
    for (const auto& c : report.comparisons) row.push_back(format_double(report.at(c.label, roi).welch.p));
    t.rows.push_back(std::move(row));
  }
  write_csv(t, path);
}

}  // namespace morphcf
