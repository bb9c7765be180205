#include "crt/crossfit.hpp"

#include <algorithm>
#include <numeric>

#include "crt/design.hpp"
#include "crt/errors.hpp"
#include "crt/rng.hpp"

namespace crt {

std::vector<std::size_t> CrossFitPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(folds, 0);
  for (auto f : fold_of) sizes[f]++;
  return sizes;
}

std::size_t default_fold_count(std::size_t m) {
  for (std::size_t k = 5; k >= 2; --k) {
    if (m >= 10 * k) return k;
  }
  return 2;
}

CrossFitPlan crossfit_partition(std::size_t m, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-fitting needs K >= 2 folds");
  if (folds > m) {
    throw ValidationError("cross-fitting: K = " + std::to_string(folds) + " exceeds the number of clusters (" +
                          std::to_string(m) + ")");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  Philox4x32 rng(seed, stream_id(0, 0, 0xf01d));
  for (std::size_t k = m; k > 1; --k) {
    std::swap(order[k - 1], order[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(k))]);
  }
  CrossFitPlan plan;
  plan.folds = folds;
  plan.seed = seed;
  plan.fold_of.assign(m, 0);
  for (std::size_t pos = 0; pos < m; ++pos) plan.fold_of[order[pos]] = pos % folds;
  return plan;
}

Eigen::MatrixXd learner_features(const TrialDataset& ds, const ExpandedDesign& design,
                                 const std::vector<std::size_t>& columns, bool cluster_summaries,
                                 std::optional<int> treatment_override) {
  const auto n = design.rows.rows();
  const auto k = static_cast<Eigen::Index>(columns.size());
  Eigen::MatrixXd F(n, 1 + k + (cluster_summaries ? k : 0));
  Eigen::MatrixXd means;
  if (cluster_summaries) means = cluster_means(design, columns);
  for (std::size_t i = 0; i < design.clusters(); ++i) {
    const double a = treatment_override ? *treatment_override : ds.clusters[i].treatment;
    for (std::size_t r = design.cluster_offsets[i]; r < design.cluster_offsets[i + 1]; ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      F(row, 0) = a;
      for (Eigen::Index c = 0; c < k; ++c) F(row, 1 + c) = design.rows(row, static_cast<Eigen::Index>(columns[c]));
      if (cluster_summaries) F.row(row).segment(1 + k, k) = means.row(static_cast<Eigen::Index>(i));
    }
  }
  return F;
}

NuisancePredictions crossfit_nuisance(const TrialDataset& ds, const ExpandedDesign& design,
                                      const CrossFitPlan& plan, const LearnerSpec& kappa_spec,
                                      const LearnerSpec& eta_spec, const CrossFitOptions& options) {
  const std::size_t m = ds.m();
  if (plan.fold_of.size() != m) throw ValidationError("cross-fit plan does not match the dataset");
  const auto columns = options.feature_columns.empty() ? all_columns(design) : options.feature_columns;
  const Eigen::MatrixXd F = learner_features(ds, design, columns, options.cluster_summaries);
  const auto n = F.rows();

  // Row-level response and cluster index.
  Eigen::VectorXd r_y(n), y(n);
  std::vector<std::size_t> cluster_of(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < m; ++i) {
    const auto& c = ds.clusters[i];
    for (std::size_t j = 0; j < c.individuals.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(design.cluster_offsets[i] + j);
      r_y[r] = c.individuals[j].outcome_observed ? 1.0 : 0.0;
      y[r] = c.individuals[j].outcome_observed ? c.individuals[j].outcome : 0.0;
      cluster_of[static_cast<std::size_t>(r)] = i;
    }
  }

  NuisancePredictions out;
  out.kappa.resize(n);
  out.eta1.resize(n);
  out.eta0.resize(n);
  out.floor = options.propensity_floor;
  out.fold.assign(m, 0);
  for (std::size_t i = 0; i < m; ++i) out.fold[i] = static_cast<int>(plan.fold_of[i]);

  for (std::size_t k = 0; k < plan.folds; ++k) {
    std::vector<Eigen::Index> kappa_rows, eta_rows, test_rows;
    std::vector<std::size_t> kappa_groups, eta_groups;
    bool arm[2] = {false, false};
    bool eta_arm[2] = {false, false};
    for (Eigen::Index r = 0; r < n; ++r) {
      const std::size_t i = cluster_of[static_cast<std::size_t>(r)];
      if (plan.fold_of[i] == k) {
        test_rows.push_back(r);
        continue;
      }
      kappa_rows.push_back(r);
      kappa_groups.push_back(i);
      arm[ds.clusters[i].treatment] = true;
      if (r_y[r] > 0.5) {
        eta_rows.push_back(r);
        eta_groups.push_back(i);
        eta_arm[ds.clusters[i].treatment] = true;
      }
    }
    if (test_rows.empty()) continue;
    if (!arm[0] || !arm[1] || !eta_arm[0] || !eta_arm[1]) {
      throw ValidationError("cross-fitting: training data for fold " + std::to_string(k + 1) +
                            " lacks observed outcomes in a treatment arm; use fewer folds (m/K >= 10)");
    }
    const std::uint64_t fold_seed = stream_id(options.seed, k, 0xc0f);

    const Eigen::MatrixXd Ftest = F(test_rows, Eigen::all);
    // kappa at the observed treatment
    const Eigen::VectorXd rk = r_y(kappa_rows);
    Eigen::VectorXd kappa_pred;
    if (rk.minCoeff() == rk.maxCoeff()) {
      kappa_pred = Eigen::VectorXd::Constant(Ftest.rows(), rk[0]);
    } else {
      auto kappa_model = train_learner(kappa_spec, F(kappa_rows, Eigen::all), rk, kappa_groups, fold_seed);
      kappa_pred = kappa_model->predict(Ftest);
    }
    auto eta_model = train_learner(eta_spec, F(eta_rows, Eigen::all), y(eta_rows), eta_groups,
                                   stream_id(fold_seed, 1, 0xe7a));
    Eigen::MatrixXd F1 = Ftest, F0 = Ftest;
    F1.col(0).setOnes();
    F0.col(0).setZero();
    const Eigen::VectorXd e1 = eta_model->predict(F1);
    const Eigen::VectorXd e0 = eta_model->predict(F0);
    for (std::size_t t = 0; t < test_rows.size(); ++t) {
      const auto r = test_rows[t];
      const auto ti = static_cast<Eigen::Index>(t);
      out.kappa[r] = std::clamp(kappa_pred[ti], options.propensity_floor, 1.0);
      out.eta1[r] = e1[ti];
      out.eta0[r] = e0[ti];
    }
  }
  return out;
}

}  // namespace crt
