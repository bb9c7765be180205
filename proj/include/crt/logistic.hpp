#pragma once

#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace crt {

inline double expit(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct IrlsOptions {
  int max_iterations = 50;
  double tolerance = 1e-8;        // on the max absolute coefficient step
  double divergence_norm = 1e3;   // coefficient norm treated as separation
  double ridge = 0.0;             // L2 penalty, never applied to column 0
};

struct LogisticFit {
  Eigen::VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  double max_abs_score = 0.0;
};

// Bernoulli maximum likelihood by iteratively reweighted least squares.
// Throws NumericalError on rank deficiency (naming the dependent column when
// `names` is supplied) and on separation.
LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd* weights = nullptr, const IrlsOptions& options = {},
                              std::span<const std::string> names = {});

// sum_i w_i x_i (y_i - expit(x_i' beta)), minus the ridge gradient if any.
Eigen::VectorXd logistic_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& beta, const Eigen::VectorXd* weights = nullptr,
                               double ridge = 0.0);

// Fisher information X' W X with W = w p (1 - p).
Eigen::MatrixXd logistic_information(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta,
                                     const Eigen::VectorXd* weights = nullptr);

}  // namespace crt
