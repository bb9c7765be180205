#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/core_data.hpp"

namespace crt {

// Logistic model for P(A_i = 1 | cluster summaries), intercept always
// included so the family contains the constant randomization probability.
struct TreatmentModelFit {
  Eigen::MatrixXd design;  // m x d, first column is the intercept
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd pi_hat;  // per cluster
  bool fallback = false;   // true when the known probability is used instead
  std::string warning;
};

// `summaries` is m x s without an intercept column.
TreatmentModelFit fit_treatment_model(const TrialDataset& ds, const Eigen::MatrixXd& summaries,
                                      const std::vector<std::string>& summary_names);

}  // namespace crt
