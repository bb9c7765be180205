#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crt {

enum class LearnerKind { intercept_only, generalized_linear, ridge, regression_forest, knn, ensemble };
enum class LearnerTarget { kappa, eta };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& s);

struct ForestParams {
  int trees = 100;
  int max_depth = 12;
  int min_leaf = 5;
  double mtry_fraction = 1.0 / 3.0;
  int bins = 32;
};

// A nuisance learner. Feature matrices handed to learners always carry the
// treatment indicator in column 0.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::generalized_linear;
  LearnerTarget target = LearnerTarget::eta;
  double ridge_lambda = 1.0;
  ForestParams forest;
  int k = 10;
  bool treatment_interactions = false;  // linear learners: add A x feature terms
  bool stratify_by_treatment = false;   // separate fits for A = 0 and A = 1
  std::vector<LearnerSpec> members;     // ensemble only
  double validation_fraction = 0.2;     // ensemble only, split by cluster
};

class FittedLearner {
 public:
  virtual ~FittedLearner() = default;
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& X) const = 0;
  // Convex member weights for ensembles; empty otherwise.
  virtual std::vector<double> member_weights() const { return {}; }
};

// `groups[r]` is the cluster index of training row r; only ensembles use it.
std::unique_ptr<FittedLearner> train_learner(const LearnerSpec& spec, const Eigen::MatrixXd& X,
                                             const Eigen::VectorXd& y, std::span<const std::size_t> groups,
                                             std::uint64_t seed);

// Non-negative least squares for a handful of columns, solved exactly by
// enumerating supports. Used for ensemble weights.
Eigen::VectorXd nnls_small(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

}  // namespace crt
