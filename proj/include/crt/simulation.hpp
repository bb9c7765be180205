#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/analysis.hpp"
#include "crt/core_data.hpp"
#include "crt/learners.hpp"
#include "crt/rng.hpp"

namespace crt {

struct ScenarioConfig {
  std::size_t m = 100;
  double p_m = 0.1;
  bool sampling = false;
  std::uint64_t seed = 1;
  std::size_t replicates = 1000;
  std::vector<std::string> estimators{"unadjusted", "ipw", "dr-pm", "dr-ml"};
  std::optional<std::size_t> folds;  // dr-ml; default by cluster count
  std::optional<bool> cluster_summaries;  // dr-ml learner features
  LearnerSpec kappa_learner = default_ml_learner(LearnerTarget::kappa);
  LearnerSpec eta_learner = default_ml_learner(LearnerTarget::eta);
  std::size_t n_covariate_columns = 7;
  double level = 0.95;
  std::vector<double> delta_grid{0, 1, 2, 3, 4};
  double max_failure_rate = 0.02;

  double truth() const { return 5.0 * (1.0 - p_m); }
};

// Every latent quantity of one generated cluster (all N individuals).
struct GeneratedCluster {
  int n = 0;
  double c = 0.0;
  bool r_c = true;
  int a = 0;
  double c_shift = 0.0;  // c_i
  double gamma = 0.0;
  std::vector<double> x1, x2, b, eps, y;
  std::vector<bool> r_x1, r_x2, r_y;
  std::vector<int> enrolled;  // indices into 0..n-1, ascending
  bool population_observed = true;
};

struct GeneratedTrial {
  std::vector<GeneratedCluster> latent;
  TrialDataset observed;
  Eigen::VectorXd oracle_eta1;  // true E[Y | A = 1, B_ij] per enrolled individual
  Eigen::VectorXd oracle_eta0;
};

// Draws one cluster of the data-generating process from its own stream.
GeneratedCluster generate_cluster(double p_m, Philox4x32& rng);

// Draws M uniformly on {floor(N/2) - 3, ..., floor(N/2) + 2}, then a uniform
// M-subset of the N individuals. N stays latent in the observed projection.
void apply_uniform_sampling(GeneratedCluster& cluster, Philox4x32& rng);

// A uniformly random size-k subset of {0, ..., n - 1}, ascending.
std::vector<int> uniform_subset(int n, int k, Philox4x32& rng);

// eta(a) evaluated from the observed (masked) covariates of individual j.
double dgp_oracle_eta(const GeneratedCluster& cluster, int j, int a);

// Deterministic in (cfg.seed, replicate). Cluster i uses its own stream, so
// the first m clusters do not depend on cfg.m.
GeneratedTrial generate_trial(const ScenarioConfig& cfg, std::size_t replicate);

// Observed projection with N revealed (for bias components in simulations).
TrialDataset reveal_population_sizes(const GeneratedTrial& trial);

// Estimator variants available to the simulation:
//   unadjusted, ipw, dr-pm, dr-ml: the standard comparison set;
//   ipw-cluster / ipw-cluster-tm: cluster-average IPW without / with a treatment model;
//   dr-oracle-eta / dr-oracle-eta-tm: true outcome regression, correct kappa, without / with a treatment model;
//   dr-oracle-eta-misspec-kappa: true outcome regression, kappa on intercept and treatment only;
//   dr-main-eta: correct kappa, main-terms outcome regression, no treatment model.
const std::vector<std::string>& simulation_estimators();
AnalysisOptions preset_options(const std::string& estimator, const ScenarioConfig& cfg, const GeneratedTrial& trial,
                               std::size_t replicate);

struct ReplicateRecord {
  std::size_t replicate = 0;
  std::string estimator;
  bool ok = false;
  double delta_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string error;
};

// Runs every configured estimator on every replicate. Records are ordered by
// (replicate, estimator position) regardless of `threads`.
std::vector<ReplicateRecord> run_replications(const ScenarioConfig& cfg, unsigned threads = 1);

struct MetricsSummary {
  std::string estimator;
  std::size_t replicates = 0;  // successful
  std::size_t failures = 0;
  double bias = 0.0;
  double ese = 0.0;
  double ase = 0.0;
  double cp = 0.0;
  double bias_mcse = 0.0;
  double ese_mcse = 0.0;
  double ase_mcse = 0.0;
  double cp_mcse = 0.0;
  double failure_rate() const {
    const auto total = replicates + failures;
    return total ? static_cast<double>(failures) / static_cast<double>(total) : 0.0;
  }
};

// One summary per estimator in `estimators` order.
std::vector<MetricsSummary> summarize_metrics(const std::vector<ReplicateRecord>& records, double truth,
                                              const std::vector<std::string>& estimators);

std::string metrics_csv(const ScenarioConfig& cfg, const std::vector<MetricsSummary>& metrics);
std::string raw_replicates_csv(const ScenarioConfig& cfg, const std::vector<ReplicateRecord>& records);

struct TippingRecord {
  std::size_t replicate = 0;
  std::string estimator;
  double delta_diff = 0.0;
  double gamma_contrast = 0.0;
  bool finite = true;
};

struct TippingSummary {
  std::string estimator;
  double delta_diff = 0.0;
  double mean = 0.0;
  double se = 0.0;
  std::size_t replicates = 0;
  std::size_t infinite = 0;
};

struct SensitivityStudy {
  std::vector<TippingRecord> records;
  std::vector<TippingSummary> summary;
  std::vector<ReplicateRecord> estimates;
};

SensitivityStudy sensitivity_replication(const ScenarioConfig& cfg, unsigned threads = 1);
std::string tipping_summary_csv(const ScenarioConfig& cfg, const std::vector<TippingSummary>& summary);

}  // namespace crt
