#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "crt/core_data.hpp"
#include "crt/estimator.hpp"
#include "crt/gee.hpp"
#include "crt/variance.hpp"

namespace crt {

// Inputs of the doubly-robust estimating system. Each nuisance block is
// either parametric (a design matrix whose coefficients are stacked into
// theta) or fixed (plain values that do not move with theta).
struct DrSystemSpec {
  const TrialDataset* ds = nullptr;
  std::vector<std::size_t> offsets;  // m + 1 row offsets, individuals in dataset order

  // kappa: logistic on kappa_design (rows at the observed treatment), or fixed.
  std::optional<Eigen::MatrixXd> kappa_design;
  Eigen::VectorXd kappa_fixed;
  double floor = 0.01;

  // eta: GEE on eta_design_1 / eta_design_0 (rows with A set to 1 / 0), or fixed.
  std::optional<Eigen::MatrixXd> eta_design_1;
  std::optional<Eigen::MatrixXd> eta_design_0;
  Family family = Family::gaussian_identity;
  CorrelationKind correlation = CorrelationKind::independence;
  double rho = 0.0;
  Eigen::VectorXd eta1_fixed;
  Eigen::VectorXd eta0_fixed;

  // pi: logistic on the m x d treatment design, or the known probability.
  std::optional<Eigen::MatrixXd> treatment_design;

  WeightScheme weights;
  SamplingMode mode = SamplingMode::full_enrollment;
  // Mean rows sum_j I{A_i = a} R_ij / kappa_ij (Y_ij - mu_a) instead of the
  // doubly-robust cluster contribution (eta and pi are then unused).
  bool ratio_ipw = false;
};

class DrEstimatingSystem final : public EstimatingSystem {
 public:
  explicit DrEstimatingSystem(DrSystemSpec spec);

  std::size_t dimension() const override { return dim_; }
  std::size_t clusters() const override { return spec_.ds->m(); }
  void evaluate(std::size_t cluster, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const override;
  std::vector<ParameterBlock> blocks() const override { return blocks_; }

  // theta = (mu1, mu0, theta_R, theta_Y, theta_A) with absent blocks skipped.
  Eigen::VectorXd pack(double mu1, double mu0, const Eigen::VectorXd& theta_r, const Eigen::VectorXd& theta_y,
                       const Eigen::VectorXd& theta_a) const;
  // Nuisance values implied by theta.
  NuisancePredictions predictions(const Eigen::VectorXd& theta) const;

 private:
  DrSystemSpec spec_;
  std::size_t dim_ = 2;
  std::size_t r_off_ = 0, r_dim_ = 0;
  std::size_t y_off_ = 0, y_dim_ = 0;
  std::size_t a_off_ = 0, a_dim_ = 0;
  std::vector<ParameterBlock> blocks_;
  Eigen::MatrixXd y_obs_design_;  // outcome-observed rows at the observed treatment, grouped by cluster
  Eigen::VectorXd y_obs_;
  std::vector<std::size_t> y_obs_offsets_;
  Eigen::VectorXd r_;  // R^Y per row
};

// Cluster means of observed outcomes compared across arms.
class UnadjustedSystem final : public EstimatingSystem {
 public:
  explicit UnadjustedSystem(const TrialDataset& ds);
  std::size_t dimension() const override { return 2; }
  std::size_t clusters() const override { return treatment_.size(); }
  void evaluate(std::size_t cluster, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const override;
  std::vector<ParameterBlock> blocks() const override { return {{"mu1", 0, 1}, {"mu0", 1, 1}}; }

 private:
  std::vector<int> treatment_;
  std::vector<double> mean_;
  std::vector<bool> has_outcome_;
};

}  // namespace crt
