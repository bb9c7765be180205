#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/core_data.hpp"
#include "crt/crossfit.hpp"
#include "crt/estimator.hpp"
#include "crt/gee.hpp"
#include "crt/learners.hpp"

namespace crt {

struct AnalysisOptions {
  EstimatorTag estimator = EstimatorTag::dr_pm;
  ScaleKind scale = ScaleKind::difference;
  SamplingMode mode = SamplingMode::full_enrollment;
  WeightScheme weights;
  double level = 0.95;
  double propensity_floor = 0.01;
  double imputation_constant = 0.0;

  // Expanded-design column names entering kappa / eta. nullopt = every
  // informative column; an empty list = intercept and treatment only.
  std::optional<std::vector<std::string>> kappa_columns;
  std::optional<std::vector<std::string>> eta_columns;
  bool kappa_treatment_interactions = false;
  bool eta_treatment_interactions = false;
  Family outcome_family = Family::gaussian_identity;
  CorrelationKind outcome_correlation = CorrelationKind::exchangeable;
  std::optional<bool> treatment_model;  // default: on for dr-pm, off otherwise
  IpwTarget ipw_target = IpwTarget::enrolled_individual_average;

  // Replaces the fitted outcome regression (e.g. the true conditional mean in a simulation).
  std::optional<Eigen::VectorXd> fixed_eta1;
  std::optional<Eigen::VectorXd> fixed_eta0;

  // dr-ml
  LearnerSpec kappa_learner;
  LearnerSpec eta_learner;
  std::optional<std::size_t> folds;
  std::optional<bool> cluster_summaries;  // default: off
  std::uint64_t seed = 0;

  bool small_sample_correction = true;
  std::optional<std::size_t> n_covariate_columns;  // default: retained adjustment columns
};

// Default dr-ml learners: a convex ensemble of a GLM and a regression forest.
LearnerSpec default_ml_learner(LearnerTarget target);

struct AnalysisDiagnostics {
  std::vector<std::string> design_columns;
  std::vector<std::string> dropped_columns;  // constant or collinear expanded columns
  std::vector<std::string> kappa_terms;
  std::vector<std::string> eta_terms;
  std::vector<std::string> treatment_terms;
  std::string kappa_source;  // logistic, constant, crossfit, none
  bool kappa_converged = true;
  int kappa_iterations = 0;
  double kappa_min = 1.0;
  double kappa_max = 1.0;
  std::size_t kappa_clipped = 0;
  std::string eta_source;  // gee, fixed, crossfit, none
  bool eta_converged = true;
  int eta_iterations = 0;
  double rho = 0.0;
  bool rho_truncated = false;
  bool treatment_modeled = false;
  bool treatment_fallback = false;
  double pi_min = 0.0;
  double pi_max = 0.0;
  std::size_t folds = 0;
  double max_abs_mean_psi = 0.0;
  double bread_condition = 0.0;
  std::size_t n_covariate_columns = 0;
  std::vector<std::string> flagged_clusters;
  std::vector<std::string> warnings;
};

struct AnalysisResult {
  EstimateResult estimate;
  AnalysisDiagnostics diagnostics;
  Eigen::VectorXd cluster_c1;
  Eigen::VectorXd cluster_c0;
};

// Expands, fits nuisances, estimates, and computes the variance and interval.
// Throws ValidationError for unusable input and NumericalError for failed fits.
AnalysisResult analyze(const TrialDataset& ds, const AnalysisOptions& options);

}  // namespace crt
