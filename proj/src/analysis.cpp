#include "crt/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "crt/design.hpp"
#include "crt/dr_system.hpp"
#include "crt/errors.hpp"
#include "crt/logistic.hpp"
#include "crt/treatment_model.hpp"
#include "crt/variance.hpp"

namespace crt {

LearnerSpec default_ml_learner(LearnerTarget target) {
  LearnerSpec glm;
  glm.kind = LearnerKind::generalized_linear;
  glm.target = target;
  glm.treatment_interactions = true;
  LearnerSpec forest;
  forest.kind = LearnerKind::regression_forest;
  forest.target = target;
  forest.forest.mtry_fraction = 0.6;
  forest.forest.min_leaf = 5;
  LearnerSpec ens;
  ens.kind = LearnerKind::ensemble;
  ens.target = target;
  ens.members = {glm, forest};
  return ens;
}

namespace {

std::vector<std::size_t> resolve_columns(const ExpandedDesign& design, const std::vector<std::size_t>& retained,
                                         const std::optional<std::vector<std::string>>& names, const char* what,
                                         std::vector<std::string>& warnings) {
  if (!names) return retained;
  std::vector<std::size_t> out;
  for (const auto& name : *names) {
    const auto idx = design.column_index(name);
    if (!idx) throw ValidationError(std::string(what) + " column '" + name + "' is not in the expanded design");
    if (std::find(retained.begin(), retained.end(), *idx) == retained.end()) {
      warnings.push_back(std::string(what) + " column '" + name + "' is constant or collinear and was dropped");
      continue;
    }
    out.push_back(*idx);
  }
  return out;
}

void kappa_summary(const Eigen::VectorXd& kappa, double floor, AnalysisDiagnostics& diag) {
  if (kappa.size() == 0) return;
  diag.kappa_min = kappa.minCoeff();
  diag.kappa_max = kappa.maxCoeff();
  diag.kappa_clipped = static_cast<std::size_t>((kappa.array() <= floor).count());
}

}  // namespace

AnalysisResult analyze(const TrialDataset& ds, const AnalysisOptions& opt) {
  const auto report = validate_dataset(ds);
  if (!report.ok()) {
    throw ValidationError("dataset failed validation: " + report.issues.front().message, report.issues);
  }
  if (!(opt.propensity_floor > 0 && opt.propensity_floor < 1)) {
    throw ValidationError("propensity floor must lie in (0, 1)");
  }
  if (opt.mode == SamplingMode::full_enrollment) {
    for (const auto& c : ds.clusters) {
      if (c.population_size.observed && c.population_size.value != c.sampled_size) {
        throw ValidationError("cluster '" + c.cluster_id +
                              "': full-enrollment mode requires M = N; use uniform-sampling mode");
      }
    }
  }

  AnalysisResult result;
  auto& diag = result.diagnostics;
  auto& est = result.estimate;
  est.estimator = opt.estimator;
  est.scale = opt.scale;
  est.level = opt.level;
  est.m = ds.m();

  const ExpandedDesign design = expand_missing_indicators(ds, {opt.imputation_constant, false});
  const auto retained = informative_columns(design.rows, all_columns(design));
  for (std::size_t j = 0; j < design.dimension(); ++j) {
    if (std::find(retained.begin(), retained.end(), j) == retained.end()) diag.dropped_columns.push_back(design.columns[j]);
    else diag.design_columns.push_back(design.columns[j]);
  }
  const auto kappa_cols = resolve_columns(design, retained, opt.kappa_columns, "kappa", diag.warnings);
  const auto eta_cols = resolve_columns(design, retained, opt.eta_columns, "eta", diag.warnings);

  const std::size_t m = ds.m();
  const std::size_t k = opt.n_covariate_columns.value_or(eta_cols.size());
  diag.n_covariate_columns = k;
  if (m <= k) {
    throw ValidationError("need more clusters (" + std::to_string(m) + ") than adjustment columns (" +
                          std::to_string(k) + ") for the t interval");
  }
  est.ci_df = static_cast<double>(m - k);
  est.correction_factor = opt.small_sample_correction ? small_sample_factor(m, k) : 1.0;

  double variance = 0.0;
  PointEstimate point;

  if (opt.estimator == EstimatorTag::unadjusted) {
    auto un = unadjusted_estimate(ds, opt.scale);
    point = un.point;
    diag.flagged_clusters = un.flagged_clusters;
    diag.kappa_source = "none";
    diag.eta_source = "none";
    UnadjustedSystem system(ds);
    Eigen::VectorXd theta(2);
    theta << point.mu1, point.mu0;
    const auto sw = sandwich_variance(system, theta, Eigen::Vector2d(point.effect.d1, point.effect.d0));
    variance = sw.target_variance;
    diag.max_abs_mean_psi = sw.max_abs_mean_psi;
    diag.bread_condition = sw.condition_number;
  } else if (opt.estimator == EstimatorTag::dr_ml) {
    if (opt.treatment_model.value_or(false)) diag.warnings.push_back("treatment model is not used with dr-ml");
    const std::size_t folds = opt.folds.value_or(default_fold_count(m));
    const auto plan = crossfit_partition(m, folds, opt.seed);
    LearnerSpec kl = opt.kappa_learner, el = opt.eta_learner;
    kl.target = LearnerTarget::kappa;
    el.target = LearnerTarget::eta;
    CrossFitOptions cf;
    cf.feature_columns = eta_cols;
    cf.cluster_summaries = opt.cluster_summaries.value_or(false);
    cf.propensity_floor = opt.propensity_floor;
    cf.seed = opt.seed;
    if (cf.feature_columns.empty()) cf.feature_columns = retained;
    const auto preds = crossfit_nuisance(ds, design, plan, kl, el, cf);
    point = dr_cluster_average(ds, preds, opt.weights, opt.scale, opt.mode);
    Eigen::MatrixXd u(static_cast<Eigen::Index>(m), 2);
    u.col(0) = point.c1;
    u.col(1) = point.c0;
    const auto cv = crossfit_variance(u, plan.fold_of, folds, Eigen::Vector2d(point.effect.d1, point.effect.d0));
    variance = cv.variance;
    if (cv.degenerate) diag.warnings.push_back("cross-fit variance is zero: all cluster contributions are identical");
    diag.folds = folds;
    diag.kappa_source = "crossfit:" + to_string(kl.kind);
    diag.eta_source = "crossfit:" + to_string(el.kind);
    kappa_summary(preds.kappa, opt.propensity_floor, diag);
  } else {
    DrSystemSpec spec;
    spec.ds = &ds;
    spec.offsets = design.cluster_offsets;
    spec.floor = opt.propensity_floor;
    spec.weights = opt.weights;
    spec.mode = opt.mode;
    const auto n = design.rows.rows();

    Eigen::VectorXd r_y(n);
    for (std::size_t i = 0, row = 0; i < m; ++i) {
      for (const auto& ind : ds.clusters[i].individuals) r_y[static_cast<Eigen::Index>(row++)] = ind.outcome_observed;
    }

    Eigen::VectorXd theta_r, theta_y, theta_a;
    if (r_y.minCoeff() == 1.0) {
      spec.kappa_fixed = Eigen::VectorXd::Ones(n);
      diag.kappa_source = "constant";
    } else {
      auto zr = build_design(ds, design, DesignSpec{true, true, opt.kappa_treatment_interactions, kappa_cols});
      const auto fit = fit_logistic_irls(zr.rows, r_y, nullptr, {}, zr.names);
      diag.kappa_converged = fit.converged;
      diag.kappa_iterations = fit.iterations;
      if (!fit.converged) diag.warnings.push_back("kappa model did not converge");
      diag.kappa_terms = zr.names;
      diag.kappa_source = "logistic";
      theta_r = fit.coefficients;
      spec.kappa_design = std::move(zr.rows);
    }

    if (opt.estimator == EstimatorTag::ipw) {
      spec.eta1_fixed = Eigen::VectorXd::Zero(n);
      spec.eta0_fixed = Eigen::VectorXd::Zero(n);
      diag.eta_source = "none";
    } else if (opt.fixed_eta1 || opt.fixed_eta0) {
      if (!opt.fixed_eta1 || !opt.fixed_eta0 || opt.fixed_eta1->size() != n || opt.fixed_eta0->size() != n) {
        throw ValidationError("fixed outcome regression must supply both arms for every enrolled individual");
      }
      spec.eta1_fixed = *opt.fixed_eta1;
      spec.eta0_fixed = *opt.fixed_eta0;
      diag.eta_source = "fixed";
    } else {
      const DesignSpec ys{true, true, opt.eta_treatment_interactions, eta_cols};
      auto z1 = build_design(ds, design, ys, 1);
      auto z0 = build_design(ds, design, ys, 0);
      std::vector<Eigen::Index> obs;
      std::vector<std::size_t> offs{0};
      std::vector<double> yv;
      bool arm[2] = {false, false};
      for (std::size_t i = 0, row = 0; i < m; ++i) {
        const auto& c = ds.clusters[i];
        for (const auto& ind : c.individuals) {
          if (ind.outcome_observed) {
            obs.push_back(static_cast<Eigen::Index>(row));
            yv.push_back(ind.outcome);
            arm[c.treatment] = true;
          }
          ++row;
        }
        offs.push_back(obs.size());
      }
      if (!arm[0] || !arm[1]) throw ValidationError("outcome model: an arm has no observed outcomes");
      Eigen::MatrixXd xobs(static_cast<Eigen::Index>(obs.size()), z1.rows.cols());
      for (std::size_t i = 0, t = 0; i < m; ++i) {
        const auto& src = ds.clusters[i].treatment ? z1.rows : z0.rows;
        for (; t < offs[i + 1]; ++t) xobs.row(static_cast<Eigen::Index>(t)) = src.row(obs[t]);
      }
      const Eigen::VectorXd yobs = Eigen::Map<Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
      const auto fit = fit_gee(xobs, yobs, offs, opt.outcome_family, opt.outcome_correlation, {}, z1.names);
      diag.eta_converged = fit.converged;
      diag.eta_iterations = fit.iterations;
      diag.rho = fit.rho;
      diag.rho_truncated = fit.rho_truncated;
      if (fit.rho_truncated) diag.warnings.push_back("exchangeable correlation estimate truncated to " + std::to_string(fit.rho));
      if (!fit.converged) diag.warnings.push_back("outcome model did not converge");
      diag.eta_terms = z1.names;
      diag.eta_source = "gee";
      theta_y = fit.coefficients;
      spec.family = opt.outcome_family;
      spec.correlation = opt.outcome_correlation;
      spec.rho = fit.rho;
      spec.eta_design_1 = std::move(z1.rows);
      spec.eta_design_0 = std::move(z0.rows);
    }

    if (opt.treatment_model.value_or(opt.estimator == EstimatorTag::dr_pm)) {
      const Eigen::MatrixXd summaries = cluster_means(design, eta_cols);
      std::vector<std::string> names;
      for (auto c : eta_cols) names.push_back("mean(" + design.columns[c] + ")");
      auto tm = fit_treatment_model(ds, summaries, names);
      diag.treatment_modeled = !tm.fallback;
      diag.treatment_fallback = tm.fallback;
      if (tm.fallback) {
        diag.warnings.push_back(tm.warning);
      } else {
        diag.treatment_terms = tm.names;
        theta_a = tm.coefficients;
        spec.treatment_design = std::move(tm.design);
      }
    }

    spec.ratio_ipw = opt.estimator == EstimatorTag::ipw && opt.ipw_target == IpwTarget::enrolled_individual_average;

    DrEstimatingSystem system(spec);
    const auto preds = system.predictions(system.pack(0, 0, theta_r, theta_y, theta_a));
    if (opt.estimator == EstimatorTag::ipw) {
      point = ipw_estimate(ds, preds, opt.scale, opt.mode, opt.ipw_target);
    } else {
      point = dr_cluster_average(ds, preds, opt.weights, opt.scale, opt.mode);
    }
    const Eigen::VectorXd theta = system.pack(point.mu1, point.mu0, theta_r, theta_y, theta_a);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    g[0] = point.effect.d1;
    g[1] = point.effect.d0;
    const auto sw = sandwich_variance(system, theta, g);
    variance = sw.target_variance;
    diag.max_abs_mean_psi = sw.max_abs_mean_psi;
    diag.bread_condition = sw.condition_number;
    kappa_summary(preds.kappa, opt.propensity_floor, diag);
    if (preds.pi_hat) {
      diag.pi_min = preds.pi_hat->minCoeff();
      diag.pi_max = preds.pi_hat->maxCoeff();
    } else {
      diag.pi_min = diag.pi_max = ds.randomization_probability;
    }
  }

  est.mu1_hat = point.mu1;
  est.mu0_hat = point.mu0;
  est.delta_hat = point.effect.value;
  est.variance_uncorrected = variance;
  const double v = variance * est.correction_factor;
  if (!(v > 0) || !std::isfinite(v)) throw NumericalError("variance estimate is not positive");
  est.se = std::sqrt(v);
  const auto ci = ci_tdist_df(est.delta_hat, est.se, est.ci_df, opt.level);
  est.ci_low = ci.low;
  est.ci_high = ci.high;
  result.cluster_c1 = point.c1;
  result.cluster_c0 = point.c0;
  return result;
}

}  // namespace crt
