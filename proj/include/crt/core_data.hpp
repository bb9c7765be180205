#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/errors.hpp"

namespace crt {

// A possibly-missing covariate. `value` is meaningful only when `observed`.
struct CovariateValue {
  bool observed = false;
  double value = 0.0;

  static CovariateValue missing() { return {}; }
  static CovariateValue of(double v) { return {true, v}; }

  friend bool operator==(const CovariateValue& a, const CovariateValue& b) {
    return a.observed == b.observed && (!a.observed || a.value == b.value);
  }
};

struct IndividualRecord {
  bool outcome_observed = false;
  double outcome = 0.0;
  std::vector<CovariateValue> covariates;

  friend bool operator==(const IndividualRecord& a, const IndividualRecord& b) {
    return a.outcome_observed == b.outcome_observed &&
           (!a.outcome_observed || a.outcome == b.outcome) && a.covariates == b.covariates;
  }
};

struct ClusterRecord {
  std::string cluster_id;
  int treatment = 0;
  std::vector<IndividualRecord> individuals;  // the M_i enrolled individuals
  std::vector<CovariateValue> cluster_covariates;
  CovariateValue population_size;  // N_i, possibly missing
  int sampled_size = 0;            // M_i

  bool operator==(const ClusterRecord&) const = default;
};

struct TrialDataset {
  std::vector<ClusterRecord> clusters;
  std::vector<std::string> individual_covariate_names;
  std::vector<std::string> cluster_covariate_names;
  double randomization_probability = 0.5;
  bool full_enrollment = true;

  std::size_t m() const { return clusters.size(); }
  std::size_t p() const { return individual_covariate_names.size(); }
  std::size_t q() const { return cluster_covariate_names.size(); }
  std::size_t total_individuals() const;

  bool operator==(const TrialDataset&) const = default;
};

// Column mapping for the long-format CSV (one row per enrolled individual).
struct CsvSchema {
  std::string cluster_id = "cluster_id";
  std::string treatment = "treatment";
  std::string outcome = "outcome";
  std::string sampled_size = "M";
  std::string population_size = "N";  // optional column
  // When empty, every x_* (individual) and c_* (cluster) header is used.
  std::vector<std::string> individual_covariates;
  std::vector<std::string> cluster_covariates;
};

TrialDataset load_csv(const std::string& path, const CsvSchema& schema,
                      double randomization_probability, bool full_enrollment);
TrialDataset parse_csv(const std::string& text, const CsvSchema& schema,
                       double randomization_probability, bool full_enrollment);

// Inverse of load_csv with the default schema column names.
std::string to_csv(const TrialDataset& ds);
void write_csv(const TrialDataset& ds, const std::string& path);

struct ExpansionOptions {
  double imputation_constant = 0.0;
  bool include_cluster_means = false;
};

// Missingness-indicator expansion: one row B_ij per enrolled individual,
// clusters stored contiguously in dataset order.
struct ExpandedDesign {
  Eigen::MatrixXd rows;
  std::vector<std::string> columns;
  std::vector<std::size_t> cluster_offsets;  // m + 1 entries

  std::size_t dimension() const { return columns.size(); }
  std::size_t clusters() const { return cluster_offsets.size() - 1; }
  std::size_t cluster_size(std::size_t i) const {
    return cluster_offsets[i + 1] - cluster_offsets[i];
  }
  std::optional<std::size_t> column_index(const std::string& name) const;
};

ExpandedDesign expand_missing_indicators(const TrialDataset& ds,
                                         const ExpansionOptions& options = {});

struct ArmSummary {
  std::size_t clusters = 0;
  std::size_t individuals = 0;
  double outcome_missing_rate = 0.0;
};

struct RangeSummary {
  std::size_t count = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

struct DatasetSummary {
  ArmSummary treated;
  ArmSummary control;
  double outcome_missing_rate = 0.0;
  std::vector<double> individual_covariate_missing_rate;
  std::vector<double> cluster_covariate_missing_rate;
  RangeSummary sampled_size;
  RangeSummary observed_population_size;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  DatasetSummary summary;

  bool ok() const { return issues.empty(); }
};

ValidationReport validate_dataset(const TrialDataset& ds);

}  // namespace crt
