#include "crt/design.hpp"

#include <cmath>

namespace crt {

ModelDesign build_design(const TrialDataset& ds, const ExpandedDesign& design, const DesignSpec& spec,
                         std::optional<int> treatment_override) {
  ModelDesign out;
  if (spec.intercept) out.names.push_back("(intercept)");
  if (spec.treatment) out.names.push_back("A");
  for (auto j : spec.columns) out.names.push_back(design.columns.at(j));
  if (spec.treatment && spec.treatment_interactions) {
    for (auto j : spec.columns) out.names.push_back("A:" + design.columns.at(j));
  }

  const auto n = static_cast<Eigen::Index>(design.rows.rows());
  out.rows.resize(n, static_cast<Eigen::Index>(out.names.size()));
  for (std::size_t i = 0; i < ds.m(); ++i) {
    const double a = treatment_override ? *treatment_override : ds.clusters[i].treatment;
    for (auto r = design.cluster_offsets[i]; r < design.cluster_offsets[i + 1]; ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      Eigen::Index col = 0;
      if (spec.intercept) out.rows(row, col++) = 1.0;
      if (spec.treatment) out.rows(row, col++) = a;
      for (auto j : spec.columns) out.rows(row, col++) = design.rows(row, static_cast<Eigen::Index>(j));
      if (spec.treatment && spec.treatment_interactions) {
        for (auto j : spec.columns) out.rows(row, col++) = a * design.rows(row, static_cast<Eigen::Index>(j));
      }
    }
  }
  return out;
}

Eigen::MatrixXd cluster_means(const ExpandedDesign& design, std::span<const std::size_t> columns) {
  const auto m = static_cast<Eigen::Index>(design.clusters());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(columns.size()));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto begin = static_cast<Eigen::Index>(design.cluster_offsets[i]);
    const auto size = static_cast<Eigen::Index>(design.cluster_size(static_cast<std::size_t>(i)));
    if (size == 0) continue;
    for (std::size_t k = 0; k < columns.size(); ++k) {
      out(i, static_cast<Eigen::Index>(k)) =
          design.rows.col(static_cast<Eigen::Index>(columns[k])).segment(begin, size).mean();
    }
  }
  return out;
}

namespace {

// Sequential Gram-Schmidt; returns false when `v` lies in span(basis).
bool try_extend_basis(std::vector<Eigen::VectorXd>& basis, Eigen::VectorXd v, double tol) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) return false;
  v /= norm;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) v -= b.dot(v) * b;
  }
  const double resid = v.norm();
  if (resid < tol) return false;
  basis.push_back(v / resid);
  return true;
}

}  // namespace

std::optional<std::size_t> first_dependent_column(const Eigen::MatrixXd& X, double tol) {
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (!try_extend_basis(basis, X.col(j), tol)) return static_cast<std::size_t>(j);
  }
  return std::nullopt;
}

std::vector<std::size_t> informative_columns(const Eigen::MatrixXd& rows,
                                             std::span<const std::size_t> candidates, double tol) {
  std::vector<Eigen::VectorXd> basis;
  try_extend_basis(basis, Eigen::VectorXd::Ones(rows.rows()), tol);
  std::vector<std::size_t> kept;
  for (auto j : candidates) {
    if (try_extend_basis(basis, rows.col(static_cast<Eigen::Index>(j)), tol)) kept.push_back(j);
  }
  return kept;
}

}  // namespace crt
