#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/core_data.hpp"
#include "crt/learners.hpp"

namespace crt {

// Nuisance values for every enrolled individual, clusters in dataset order
// (same row order as ExpandedDesign).
struct NuisancePredictions {
  Eigen::VectorXd kappa;  // P(R^Y = 1 | A observed, B), clipped to [floor, 1]
  Eigen::VectorXd eta1;   // outcome regression at A = 1
  Eigen::VectorXd eta0;   // outcome regression at A = 0
  std::optional<Eigen::VectorXd> pi_hat;  // per cluster, when treatment is modeled
  std::vector<int> fold;  // per cluster; -1 for parametric fits
  double floor = 0.01;
};

struct CrossFitPlan {
  std::size_t folds = 0;
  std::vector<std::size_t> fold_of;  // per cluster, dataset order
  std::uint64_t seed = 0;

  std::vector<std::size_t> fold_sizes() const;
};

// Largest K <= 5 with m / K >= 10, else 2.
std::size_t default_fold_count(std::size_t m);

CrossFitPlan crossfit_partition(std::size_t m, std::size_t folds, std::uint64_t seed);

struct CrossFitOptions {
  std::vector<std::size_t> feature_columns;  // ExpandedDesign columns; empty = all
  bool cluster_summaries = true;             // append cluster means h(B_i)
  double propensity_floor = 0.01;
  std::uint64_t seed = 0;
};

// Trains kappa on all enrolled rows of the training folds and eta on their
// outcome-observed rows, then predicts on the held-out fold.
NuisancePredictions crossfit_nuisance(const TrialDataset& ds, const ExpandedDesign& design,
                                      const CrossFitPlan& plan, const LearnerSpec& kappa_spec,
                                      const LearnerSpec& eta_spec, const CrossFitOptions& options);

// Learner feature matrix: A (or `treatment_override`), the selected columns,
// then optionally the per-cluster means of those columns.
Eigen::MatrixXd learner_features(const TrialDataset& ds, const ExpandedDesign& design,
                                 const std::vector<std::size_t>& columns, bool cluster_summaries,
                                 std::optional<int> treatment_override = std::nullopt);

}  // namespace crt
