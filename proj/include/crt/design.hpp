#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crt/core_data.hpp"

namespace crt {

// Which columns enter a working model built on top of an ExpandedDesign.
struct DesignSpec {
  bool intercept = true;
  bool treatment = true;
  bool treatment_interactions = false;  // adds A * column for every column
  std::vector<std::size_t> columns;     // indices into ExpandedDesign::columns
};

struct ModelDesign {
  Eigen::MatrixXd rows;
  std::vector<std::string> names;
};

// Individual-level design, one row per enrolled individual. When
// `treatment_override` is set the treatment column is replaced by that arm,
// which is how counterfactual predictions eta(a, .) are formed.
ModelDesign build_design(const TrialDataset& ds, const ExpandedDesign& design, const DesignSpec& spec,
                         std::optional<int> treatment_override = std::nullopt);

// Per-cluster means of the selected ExpandedDesign columns (m x k).
Eigen::MatrixXd cluster_means(const ExpandedDesign& design, std::span<const std::size_t> columns);

// Index of the first column that is (numerically) a linear combination of
// the columns before it, or nullopt when X has full column rank.
std::optional<std::size_t> first_dependent_column(const Eigen::MatrixXd& X, double tol = 1e-9);

// Keeps the candidate columns that are neither constant nor linearly
// dependent on an intercept plus the previously retained candidates.
std::vector<std::size_t> informative_columns(const Eigen::MatrixXd& rows,
                                             std::span<const std::size_t> candidates,
                                             double tol = 1e-9);

inline std::vector<std::size_t> all_columns(const ExpandedDesign& d) {
  std::vector<std::size_t> out(d.dimension());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = j;
  return out;
}

}  // namespace crt
