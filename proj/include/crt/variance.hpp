#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crt {

struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Stacked per-cluster estimating functions psi(O_i; theta).
class EstimatingSystem {
 public:
  virtual ~EstimatingSystem() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::size_t clusters() const = 0;
  virtual void evaluate(std::size_t cluster, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const = 0;
  virtual std::vector<ParameterBlock> blocks() const;
};

// m^{-1} sum_i psi(O_i; theta).
Eigen::VectorXd mean_estimating_function(const EstimatingSystem& system, const Eigen::VectorXd& theta);

// m x d matrix of per-cluster psi values.
Eigen::MatrixXd estimating_function_values(const EstimatingSystem& system, const Eigen::VectorXd& theta);

// Central differences of the averaged psi, step h_j = max(1e-6, 1e-6 |theta_j|) scaled by `step_scale`.
Eigen::MatrixXd numeric_jacobian(const EstimatingSystem& system, const Eigen::VectorXd& theta, double step_scale = 1.0);

struct SandwichResult {
  Eigen::MatrixXd bread;
  Eigen::MatrixXd meat;
  Eigen::MatrixXd covariance;  // bread^{-1} meat bread^{-T} / m
  double condition_number = 0.0;
  double max_abs_mean_psi = 0.0;
  double target_variance = 0.0;  // g' covariance g
};

// `gradient` selects the linear combination whose variance is reported
// (delta method). Throws NumericalError on a singular bread.
SandwichResult sandwich_variance(const EstimatingSystem& system, const Eigen::VectorXd& theta_hat,
                                 const Eigen::VectorXd& gradient);

// var * m / (m - k). Throws ValidationError when m <= k.
double small_sample_correction(double variance, std::size_t m, std::size_t n_covariate_columns);
double small_sample_factor(std::size_t m, std::size_t n_covariate_columns);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
// Quantile of Student's t; df = +infinity gives the standard normal quantile.
double student_t_quantile(double p, double df);
double normal_quantile(double p);

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
  double df = 0.0;
  double quantile = 0.0;
};

ConfidenceInterval ci_tdist(double estimate, double se, std::size_t m, std::size_t n_covariate_columns, double level);
ConfidenceInterval ci_tdist_df(double estimate, double se, double df, double level);

struct CrossFitVariance {
  Eigen::Matrix2d v_hat = Eigen::Matrix2d::Zero();  // K^{-1} sum_k Sigma_k
  double variance = 0.0;                            // g' V g / m
  bool degenerate = false;                          // V == 0
};

// `u` is m x 2 with columns (U(1), U(0)) per cluster; `fold_of` gives each
// cluster's fold in [0, folds).
CrossFitVariance crossfit_variance(const Eigen::MatrixXd& u, const std::vector<std::size_t>& fold_of,
                                   std::size_t folds, const Eigen::Vector2d& gradient);

}  // namespace crt
