#pragma once

#include <array>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "torml/csv.hpp"
#include "torml/dataset.hpp"
#include "torml/labels.hpp"
#include "torml/predictor.hpp"

namespace torml {

/// Ordered feature overwrites defining one evasion experiment.
struct PerturbationSpec {
  struct Edit {
    int feature_index = 0;  // original index
    double value = 0.0;
  };
  std::vector<Edit> edits;
  std::string provenance;

  void validate(const FeatureSchema& schema) const {
    std::set<int> seen;
    for (const auto& e : edits) {
      if (!seen.insert(e.feature_index).second)
        throw std::invalid_argument("duplicate edit for feature " +
                                    std::to_string(e.feature_index));
      if (schema.position_of(e.feature_index) < 0)
        throw std::invalid_argument("edit targets unknown feature " +
                                    std::to_string(e.feature_index));
    }
  }
};

/// Samples carrying `label`; with `exclusive` only those whose label set is
/// exactly {label}.
inline Dataset select_cohort(const Dataset& test, Label label,
                             bool exclusive = true) {
  Dataset out{test.schema, {}, test.name + ":cohort"};
  for (const auto& s : test.samples) {
    if (!s.labels.test(label)) continue;
    if (exclusive && s.labels.count() != 1) continue;
    out.samples.push_back(s);
  }
  return out;
}

/// Pure copy-and-overwrite; labels and untouched features are preserved.
inline Dataset apply(const PerturbationSpec& spec, const Dataset& samples) {
  spec.validate(samples.schema);
  Dataset out = samples;
  for (const auto& e : spec.edits) {
    const int pos = samples.schema.position_of(e.feature_index);
    for (auto& s : out.samples) s.features[pos] = e.value;
  }
  return out;
}

namespace evasion_detail {

inline double cohort_percentile(const Dataset& cohort, int feature_index,
                                double p) {
  const int pos = cohort.schema.position_of(feature_index);
  if (pos < 0)
    throw std::invalid_argument("cohort lacks feature " +
                                std::to_string(feature_index));
  return percentile(cohort.column(pos), p);
}

}  // namespace evasion_detail

/// Mimicry edits: connection-duration features 183 and 185 replaced with the
/// Downloader-only test cohort's 25th percentiles.
inline PerturbationSpec build_e2_spec(const Dataset& test) {
  Dataset cohort = select_cohort(test, Label::Downloader, true);
  if (cohort.samples.empty())
    throw std::invalid_argument("Downloader-only cohort is empty");
  PerturbationSpec spec;
  for (int f : {183, 185})
    spec.edits.push_back({f, evasion_detail::cohort_percentile(cohort, f, 25)});
  std::ostringstream os;
  os << "p25 of Downloader-only test cohort (" << cohort.size()
     << " samples), features 183,185";
  spec.provenance = os.str();
  return spec;
}

/// Suppression edits: the five features driving Ransomware predictions
/// replaced with the Ransomware-only cohort's own 10th percentiles.
inline PerturbationSpec build_e3_spec(const Dataset& test) {
  Dataset cohort = select_cohort(test, Label::Ransomware, true);
  if (cohort.samples.empty())
    throw std::invalid_argument("Ransomware-only cohort is empty");
  PerturbationSpec spec;
  for (int f : {183, 185, 199, 17, 16})
    spec.edits.push_back({f, evasion_detail::cohort_percentile(cohort, f, 10)});
  std::ostringstream os;
  os << "p10 of Ransomware-only test cohort (" << cohort.size()
     << " samples), features 183,185,199,17,16";
  spec.provenance = os.str();
  return spec;
}

inline constexpr std::array<Label, 4> kReportClasses = {
    Label::Downloader, Label::Grayware, Label::Miner, Label::Ransomware};

/// Positive-prediction counts for the four reported classes, per model and
/// experiment, over the Ransomware-only cohort.
struct ExperimentReport {
  std::vector<std::string> model_names;
  // counts[model][experiment 0..2][class 0..3]
  std::vector<std::array<std::array<int, 4>, 3>> counts;
  int cohort_size = 0;
  std::vector<double> e2_values, e3_values;
  std::string e2_provenance, e3_provenance;
};

inline ExperimentReport run_experiments(
    const std::vector<const MultiLabelModel*>& models,
    const std::vector<std::string>& names, const Dataset& test,
    bool exclusive_cohort = true) {
  if (models.empty() || models.size() != names.size())
    throw std::invalid_argument("model list and name list must align");
  const std::uint64_t expected = test.schema.hash();
  for (const auto* m : models)
    if (m->schema_hash() != expected)
      throw std::invalid_argument(
          "model/test schema mismatch; refusing to run the attack");

  Dataset cohort = select_cohort(test, Label::Ransomware, exclusive_cohort);
  if (cohort.samples.empty())
    throw std::invalid_argument("Ransomware cohort is empty");

  PerturbationSpec e2 = build_e2_spec(test);
  PerturbationSpec e3 = build_e3_spec(test);
  const Dataset experiments[3] = {cohort, apply(e2, cohort), apply(e3, cohort)};

  ExperimentReport report;
  report.model_names = names;
  report.cohort_size = cohort.size();
  for (const auto& e : e2.edits) report.e2_values.push_back(e.value);
  for (const auto& e : e3.edits) report.e3_values.push_back(e.value);
  report.e2_provenance = e2.provenance;
  report.e3_provenance = e3.provenance;

  for (const auto* model : models) {
    std::array<std::array<int, 4>, 3> table{};
    for (int e = 0; e < 3; ++e)
      for (const auto& s : experiments[e].samples) {
        LabelSet pred = model->predict(s.features);
        for (std::size_t c = 0; c < kReportClasses.size(); ++c)
          table[e][c] += pred.test(kReportClasses[c]) ? 1 : 0;
      }
    report.counts.push_back(table);
  }
  return report;
}

/// Per-model robustness: relative Ransomware drops and absolute
/// Downloader/Grayware rises across the experiments.
struct RobustnessDelta {
  std::string model;
  double ransomware_drop_e2 = 0.0;  // relative, 0 when E1 count is 0
  double ransomware_drop_e3 = 0.0;
  int downloader_rise_e2 = 0;
  int downloader_rise_e3 = 0;
  int grayware_rise_e2 = 0;
  int grayware_rise_e3 = 0;
};

inline std::vector<RobustnessDelta> robustness_delta(
    const ExperimentReport& report) {
  std::vector<RobustnessDelta> out;
  for (std::size_t m = 0; m < report.model_names.size(); ++m) {
    const auto& t = report.counts[m];
    RobustnessDelta d;
    d.model = report.model_names[m];
    const int r1 = t[0][3];
    d.ransomware_drop_e2 = r1 > 0 ? double(r1 - t[1][3]) / double(r1) : 0.0;
    d.ransomware_drop_e3 = r1 > 0 ? double(r1 - t[2][3]) / double(r1) : 0.0;
    d.downloader_rise_e2 = t[1][0] - t[0][0];
    d.downloader_rise_e3 = t[2][0] - t[0][0];
    d.grayware_rise_e2 = t[1][1] - t[0][1];
    d.grayware_rise_e3 = t[2][1] - t[0][1];
    out.push_back(d);
  }
  return out;
}

/// Rows = classes, column groups = model x experiment.
inline std::string report_csv(const ExperimentReport& report) {
  std::string out = "class";
  for (const auto& name : report.model_names)
    for (const char* e : {"E1", "E2", "E3"}) out += ',' + name + '_' + e;
  out += '\n';
  for (std::size_t c = 0; c < kReportClasses.size(); ++c) {
    out += kLabelNames[int(kReportClasses[c])];
    for (std::size_t m = 0; m < report.model_names.size(); ++m)
      for (int e = 0; e < 3; ++e)
        out += ',' + std::to_string(report.counts[m][e][c]);
    out += '\n';
  }
  return out;
}

/// Cohort size and replacement values backing the report.
inline std::string report_sidecar(const ExperimentReport& report) {
  std::string out;
  out += "cohort_size = " + std::to_string(report.cohort_size) + "\n";
  out += "e2_provenance = " + report.e2_provenance + "\n";
  const int e2_features[2] = {183, 185};
  for (std::size_t i = 0; i < report.e2_values.size(); ++i)
    out += "e2_replacement_" + std::to_string(e2_features[i]) + " = " +
           csv::format_number(report.e2_values[i]) + "\n";
  out += "e3_provenance = " + report.e3_provenance + "\n";
  const int e3_features[5] = {183, 185, 199, 17, 16};
  for (std::size_t i = 0; i < report.e3_values.size(); ++i)
    out += "e3_replacement_" + std::to_string(e3_features[i]) + " = " +
           csv::format_number(report.e3_values[i]) + "\n";
  return out;
}

}  // namespace torml
