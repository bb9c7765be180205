#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/core_data.hpp"
#include "crt/crossfit.hpp"

namespace crt {

enum class ScaleKind { difference, odds_ratio, risk_ratio };

std::string to_string(ScaleKind s);
ScaleKind scale_from_string(const std::string& s);

struct ScaleValue {
  double value = 0.0;
  double d1 = 0.0;  // df/dmu1
  double d0 = 0.0;  // df/dmu0
};

// f(mu1, mu0) and its gradient. Ratio scales require both means in (0, 1)
// and throw DomainError otherwise.
ScaleValue effect_scale_apply(ScaleKind scale, double mu1, double mu0);

enum class WeightKind { constant, exchangeable };

struct WeightScheme {
  WeightKind kind = WeightKind::constant;
  double rho = 0.0;

  Eigen::VectorXd raw(std::size_t n) const;
  // raw / sum(raw). Equal raw weights give exactly 1/n.
  Eigen::VectorXd scaled(std::size_t n) const;
};

enum class SamplingMode { full_enrollment, uniform_sampling };

std::string to_string(SamplingMode s);
SamplingMode sampling_mode_from_string(const std::string& s);

// Exchangeable covariance sigma2 [(1 - rho) I + rho J]; returns H^{-1} 1
// normalised to sum to one.
Eigen::VectorXd optimal_weights_exchangeable(std::size_t n, double rho, double sigma2);

// Per-cluster quantities behind a point estimate.
struct PointEstimate {
  double mu1 = 0.0;
  double mu0 = 0.0;
  ScaleValue effect;
  Eigen::VectorXd c1;      // per-cluster sum_j w*_j U_ij(1)
  Eigen::VectorXd c0;      // per-cluster sum_j w*_j U_ij(0)
  Eigen::VectorXd weight;  // cluster weight in its arm means (1 for cluster averages)
};

// Augmented term for individual (i, j) and arm a:
//   I{A_i = a} / pi_a * R (Y - eta_a) / kappa + eta_a
double dr_term(int a, int treatment, double pi_i, bool observed, double y, double kappa, double eta_a);

// Cluster contributions for the doubly-robust estimator. Full enrollment uses
// the scaled weights of `weights`; uniform sampling uses 1/M_i over enrolled
// individuals. `pi_i` comes from preds.pi_hat when present, otherwise the
// known randomization probability.
void dr_contributions(const TrialDataset& ds, const NuisancePredictions& preds, const WeightScheme& weights,
                      SamplingMode mode, Eigen::VectorXd& c1, Eigen::VectorXd& c0);

PointEstimate dr_cluster_average(const TrialDataset& ds, const NuisancePredictions& preds,
                                 const WeightScheme& weights, ScaleKind scale, SamplingMode mode);

enum class IpwTarget {
  cluster_average,             // the doubly-robust estimator with eta = 0
  // Ratio of inverse-kappa weighted outcome sums within each arm:
  //   sum_{i: A_i = a} sum_j R_ij Y_ij / kappa_ij / sum_{i: A_i = a} sum_j R_ij / kappa_ij
  enrolled_individual_average
};

PointEstimate ipw_estimate(const TrialDataset& ds, const NuisancePredictions& preds, ScaleKind scale,
                           SamplingMode mode, IpwTarget target = IpwTarget::enrolled_individual_average);

// Weighted arm means sum_i s_i c_ia / sum_i s_i.
PointEstimate size_weighted_means(const Eigen::VectorXd& c1, const Eigen::VectorXd& c0,
                                  const Eigen::VectorXd& sizes, ScaleKind scale);

// Reweights cluster contributions by N_i / mean(N). Throws ValidationError if
// any N is missing (and enrollment is not full).
PointEstimate individual_average_reweight(const TrialDataset& ds, const PointEstimate& cluster_average,
                                          ScaleKind scale);

struct UnadjustedEstimate {
  PointEstimate point;
  std::vector<std::string> flagged_clusters;  // no observed outcome
  Eigen::VectorXd cluster_mean;               // NaN for flagged clusters
};

UnadjustedEstimate unadjusted_estimate(const TrialDataset& ds, ScaleKind scale);

enum class EstimatorTag { unadjusted, ipw, dr_pm, dr_ml };

std::string to_string(EstimatorTag t);
EstimatorTag estimator_from_string(const std::string& s);

struct EstimateResult {
  EstimatorTag estimator = EstimatorTag::dr_pm;
  ScaleKind scale = ScaleKind::difference;
  double delta_hat = 0.0;
  double mu1_hat = 0.0;
  double mu0_hat = 0.0;
  double se = 0.0;
  double variance_uncorrected = 0.0;
  double correction_factor = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double ci_df = 0.0;
  double level = 0.95;
  std::size_t m = 0;
};

}  // namespace crt
