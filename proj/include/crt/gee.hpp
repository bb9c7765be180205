#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crt {

enum class Family { gaussian_identity, binomial_logit };
enum class CorrelationKind { independence, exchangeable };

struct GeeOptions {
  int max_iterations = 50;
  double tolerance = 1e-8;
  double rho_cap = 0.95;  // moment estimates outside [0, 1) are truncated to [0, rho_cap]
};

struct GeeFit {
  Eigen::VectorXd coefficients;
  Family family = Family::gaussian_identity;
  CorrelationKind correlation = CorrelationKind::independence;
  double rho = 0.0;
  bool rho_truncated = false;
  double dispersion = 1.0;
  bool converged = false;
  int iterations = 0;
};

// Generalized estimating equations on grouped rows. `group_offsets` has one
// entry per group plus a terminal entry; rows of group g are
// [offsets[g], offsets[g+1]). Groups may be empty.
GeeFit fit_gee(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const std::size_t> group_offsets,
               Family family, CorrelationKind correlation, const GeeOptions& options = {},
               std::span<const std::string> names = {});

// Per-group estimating function D' V^{-1} (y - mu) at fixed rho (scale-free).
Eigen::VectorXd gee_group_score(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::VectorXd& beta,
                                Family family, CorrelationKind correlation, double rho);

// Method-of-moments exchangeable correlation from Pearson residuals.
// Returns the raw (untruncated) estimate and the dispersion.
struct MomentEstimate {
  double rho = 0.0;
  double dispersion = 1.0;
  bool identified = false;  // false when no group has two or more rows
};
MomentEstimate exchangeable_moment(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   std::span<const std::size_t> group_offsets, const Eigen::VectorXd& beta,
                                   Family family);

}  // namespace crt
