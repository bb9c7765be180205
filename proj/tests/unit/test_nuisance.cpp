#include <doctest.h>

#include <cmath>
#include <random>

#include "crt/crossfit.hpp"
#include "crt/design.hpp"
#include "crt/errors.hpp"
#include "crt/gee.hpp"
#include "crt/learners.hpp"
#include "crt/logistic.hpp"
#include "crt/rng.hpp"
#include "crt/simulation.hpp"
#include "crt/treatment_model.hpp"

using namespace crt;

namespace {

std::vector<std::size_t> offsets_of(const std::vector<int>& sizes) {
  std::vector<std::size_t> off{0};
  for (int s : sizes) off.push_back(off.back() + static_cast<std::size_t>(s));
  return off;
}

TrialDataset toy_dataset(std::size_t m, std::uint64_t seed) {
  Philox4x32 rng(seed, 1);
  std::normal_distribution<double> normal;
  TrialDataset ds;
  ds.individual_covariate_names = {"x_1"};
  for (std::size_t i = 0; i < m; ++i) {
    ClusterRecord c;
    c.cluster_id = "c" + std::to_string(i);
    c.treatment = static_cast<int>(i % 2);
    c.sampled_size = 3 + static_cast<int>(i % 4);
    c.population_size = CovariateValue::of(c.sampled_size);
    for (int j = 0; j < c.sampled_size; ++j) {
      IndividualRecord ind;
      ind.covariates = {CovariateValue::of(normal(rng))};
      ind.outcome_observed = uniform01(rng) < 0.8;
      ind.outcome = ind.outcome_observed ? 1.0 + c.treatment + normal(rng) : 0.0;
      c.individuals.push_back(ind);
    }
    ds.clusters.push_back(c);
  }
  return ds;
}

}  // namespace

TEST_CASE("IRLS intercept-only on a balanced response") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 1);
  Eigen::VectorXd y(4);
  y << 0, 1, 0, 1;
  const auto fit = fit_logistic_irls(X, y);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0]) < 1e-10);
}

TEST_CASE("IRLS slope is zero for a response balanced against a symmetric covariate") {
  Eigen::MatrixXd X(8, 2);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = 1;
    X(i, 1) = i < 4 ? -1 : 1;
    y[i] = i % 2;
  }
  const auto fit = fit_logistic_irls(X, y);
  CHECK(std::abs(fit.coefficients[1]) < 1e-10);
}

TEST_CASE("IRLS recovers planted coefficients within three standard errors") {
  Philox4x32 rng(2024, 7);
  std::normal_distribution<double> normal;
  const int n = 200;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1;
    X(i, 1) = normal(rng);
    y[i] = uniform01(rng) < expit(-0.5 + X(i, 1)) ? 1 : 0;
  }
  const auto fit = fit_logistic_irls(X, y);
  Eigen::Vector2d truth(-0.5, 1.0);
  const Eigen::MatrixXd cov = logistic_information(X, truth).inverse();
  for (int k = 0; k < 2; ++k) CHECK(std::abs(fit.coefficients[k] - truth[k]) < 3 * std::sqrt(cov(k, k)));
}

TEST_CASE("IRLS errors: rank deficiency names the column, separation is reported") {
  Eigen::MatrixXd X(6, 3);
  X << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8, 1, 5, 10, 1, 6, 12;
  Eigen::VectorXd y(6);
  y << 0, 1, 0, 1, 1, 0;
  const std::vector<std::string> names{"(intercept)", "u", "twice_u"};
  try {
    fit_logistic_irls(X, y, nullptr, {}, names);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("twice_u") != std::string::npos);
  }
  Eigen::MatrixXd Xs(6, 2);
  Xs << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd ys(6);
  ys << 0, 0, 0, 1, 1, 1;
  try {
    fit_logistic_irls(Xs, ys);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("ridge") != std::string::npos);
  }
}

TEST_CASE("GEE with independence equals OLS") {
  Philox4x32 rng(5, 5);
  std::normal_distribution<double> normal;
  const std::vector<int> sizes{3, 1, 4, 2, 5, 3};
  const auto off = offsets_of(sizes);
  const auto n = static_cast<Eigen::Index>(off.back());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    X(r, 0) = 1;
    X(r, 1) = normal(rng);
    y[r] = 0.3 - 1.2 * X(r, 1) + normal(rng);
  }
  const auto fit = fit_gee(X, y, off, Family::gaussian_identity, CorrelationKind::independence);
  const Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  CHECK((fit.coefficients - ols).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("GEE clusters of size one: exchangeable equals independence") {
  Philox4x32 rng(6, 6);
  std::normal_distribution<double> normal;
  const std::vector<int> sizes(30, 1);
  const auto off = offsets_of(sizes);
  Eigen::MatrixXd X(30, 2);
  Eigen::VectorXd y(30);
  for (int r = 0; r < 30; ++r) {
    X(r, 0) = 1;
    X(r, 1) = normal(rng);
    y[r] = 1 + X(r, 1) + normal(rng);
  }
  const auto a = fit_gee(X, y, off, Family::gaussian_identity, CorrelationKind::independence);
  const auto b = fit_gee(X, y, off, Family::gaussian_identity, CorrelationKind::exchangeable);
  CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("GEE exchangeable recovers the slope of a clustered linear outcome") {
  Philox4x32 rng(8, 8);
  std::normal_distribution<double> normal;
  std::vector<int> sizes(50, 6);
  const auto off = offsets_of(sizes);
  const auto n = static_cast<Eigen::Index>(off.back());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int g = 0; g < 50; ++g) {
    const double u = normal(rng);
    for (std::size_t r = off[g]; r < off[g + 1]; ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      X(i, 0) = 1;
      X(i, 1) = normal(rng);
      y[i] = 1 + 2 * X(i, 1) + u + normal(rng);
    }
  }
  const auto fit = fit_gee(X, y, off, Family::gaussian_identity, CorrelationKind::exchangeable);
  // Within-cluster noise has variance 1 and the slope covariate is independent
  // of the cluster effect, so the OLS slope SE is about 1/sqrt(n).
  CHECK(std::abs(fit.coefficients[1] - 2.0) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(fit.rho > 0.2);
  CHECK(fit.rho < 0.8);
}

TEST_CASE("treatment model: intercept only with a balanced allocation") {
  auto ds = toy_dataset(20, 1);
  const auto tm = fit_treatment_model(ds, Eigen::MatrixXd(20, 0), {});
  CHECK_FALSE(tm.fallback);
  for (Eigen::Index i = 0; i < 20; ++i) CHECK(tm.pi_hat[i] == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("treatment model: summaries unrelated to treatment give pi near the treated fraction") {
  Philox4x32 rng(77, 1);
  std::normal_distribution<double> normal;
  const std::size_t m = 2000;
  TrialDataset ds;
  Eigen::MatrixXd s(static_cast<Eigen::Index>(m), 1);
  double treated = 0;
  for (std::size_t i = 0; i < m; ++i) {
    ClusterRecord c;
    c.cluster_id = std::to_string(i);
    c.treatment = uniform01(rng) < 0.5;
    treated += c.treatment;
    s(static_cast<Eigen::Index>(i), 0) = normal(rng);
    ds.clusters.push_back(c);
  }
  const auto tm = fit_treatment_model(ds, s, {"s"});
  REQUIRE_FALSE(tm.fallback);
  CHECK(std::abs(tm.coefficients[1]) < 0.15);
  CHECK(std::abs(tm.pi_hat.mean() - treated / m) < 0.01);
}

TEST_CASE("treatment model falls back to the known probability under separation") {
  TrialDataset ds;
  Eigen::MatrixXd s(6, 1);
  for (int i = 0; i < 6; ++i) {
    ClusterRecord c;
    c.cluster_id = std::to_string(i);
    c.treatment = i >= 3;
    s(i, 0) = i;
    ds.clusters.push_back(c);
  }
  const auto tm = fit_treatment_model(ds, s, {"s"});
  CHECK(tm.fallback);
  CHECK_FALSE(tm.warning.empty());
}

TEST_CASE("fold partition sizes and determinism") {
  const auto p10 = crossfit_partition(10, 5, 3);
  CHECK(p10.fold_sizes() == std::vector<std::size_t>(5, 2));
  auto s11 = crossfit_partition(11, 5, 3).fold_sizes();
  std::sort(s11.begin(), s11.end());
  CHECK(s11 == std::vector<std::size_t>{2, 2, 2, 2, 3});
  CHECK(crossfit_partition(37, 4, 99).fold_of == crossfit_partition(37, 4, 99).fold_of);
  CHECK(crossfit_partition(37, 4, 99).fold_of != crossfit_partition(37, 4, 100).fold_of);
  CHECK_THROWS_AS(crossfit_partition(4, 5, 1), ValidationError);
  CHECK(default_fold_count(100) == 5);
  CHECK(default_fold_count(30) == 3);
  CHECK(default_fold_count(12) == 2);
}

TEST_CASE("intercept learners predict training-fold means") {
  const auto ds = toy_dataset(24, 3);
  const auto design = expand_missing_indicators(ds);
  const auto plan = crossfit_partition(ds.m(), 4, 11);
  LearnerSpec spec;
  spec.kind = LearnerKind::intercept_only;
  CrossFitOptions opt;
  opt.propensity_floor = 1e-6;
  const auto pred = crossfit_nuisance(ds, design, plan, spec, spec, opt);
  for (std::size_t k = 0; k < plan.folds; ++k) {
    double r_sum = 0, r_n = 0, y_sum = 0, y_n = 0;
    for (std::size_t i = 0; i < ds.m(); ++i) {
      if (plan.fold_of[i] == k) continue;
      for (const auto& ind : ds.clusters[i].individuals) {
        r_sum += ind.outcome_observed;
        r_n += 1;
        if (ind.outcome_observed) {
          y_sum += ind.outcome;
          y_n += 1;
        }
      }
    }
    for (std::size_t i = 0; i < ds.m(); ++i) {
      if (plan.fold_of[i] != k) continue;
      for (std::size_t r = design.cluster_offsets[i]; r < design.cluster_offsets[i + 1]; ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        CHECK(pred.kappa[row] == doctest::Approx(r_sum / r_n).epsilon(1e-12));
        CHECK(pred.eta1[row] == doctest::Approx(y_sum / y_n).epsilon(1e-12));
        CHECK(pred.eta0[row] == doctest::Approx(y_sum / y_n).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("leave-one-cluster-out predictions exclude only the cluster itself") {
  const auto ds = toy_dataset(12, 4);
  const auto design = expand_missing_indicators(ds);
  CrossFitPlan plan;
  plan.folds = ds.m();
  for (std::size_t i = 0; i < ds.m(); ++i) plan.fold_of.push_back(i);
  LearnerSpec spec;
  spec.kind = LearnerKind::intercept_only;
  CrossFitOptions opt;
  opt.propensity_floor = 1e-6;
  const auto pred = crossfit_nuisance(ds, design, plan, spec, spec, opt);
  double y_all = 0, n_all = 0;
  for (const auto& c : ds.clusters) {
    for (const auto& ind : c.individuals) {
      if (ind.outcome_observed) {
        y_all += ind.outcome;
        n_all += 1;
      }
    }
  }
  for (std::size_t i = 0; i < ds.m(); ++i) {
    double y_own = 0, n_own = 0;
    for (const auto& ind : ds.clusters[i].individuals) {
      if (ind.outcome_observed) {
        y_own += ind.outcome;
        n_own += 1;
      }
    }
    const auto row = static_cast<Eigen::Index>(design.cluster_offsets[i]);
    CHECK(pred.eta1[row] == doctest::Approx((y_all - y_own) / (n_all - n_own)).epsilon(1e-12));
    CHECK(pred.fold[i] == static_cast<int>(i));
  }
}

TEST_CASE("a forest fits the nonlinear outcome better than main-terms regression") {
  ScenarioConfig cfg;
  cfg.m = 100;
  cfg.p_m = 0.1;
  double mse_forest = 0, mse_linear = 0;
  for (std::size_t rep = 0; rep < 3; ++rep) {
    const auto trial = generate_trial(cfg, rep);
    const auto& ds = trial.observed;
    const auto design = expand_missing_indicators(ds);
    const auto plan = crossfit_partition(ds.m(), 5, rep);
    LearnerSpec kappa;
    kappa.kind = LearnerKind::intercept_only;
    LearnerSpec forest;
    forest.kind = LearnerKind::regression_forest;
    forest.forest.trees = 60;
    LearnerSpec linear;
    linear.kind = LearnerKind::generalized_linear;
    CrossFitOptions opt;
    opt.seed = rep;
    const auto pf = crossfit_nuisance(ds, design, plan, kappa, forest, opt);
    const auto pl = crossfit_nuisance(ds, design, plan, kappa, linear, opt);
    for (Eigen::Index r = 0; r < pf.eta1.size(); ++r) {
      for (int a = 0; a < 2; ++a) {
        const double truth = a ? trial.oracle_eta1[r] : trial.oracle_eta0[r];
        const double f = a ? pf.eta1[r] : pf.eta0[r];
        const double l = a ? pl.eta1[r] : pl.eta0[r];
        mse_forest += (f - truth) * (f - truth);
        mse_linear += (l - truth) * (l - truth);
      }
    }
  }
  CHECK(mse_forest < mse_linear);
}

TEST_CASE("nnls_small keeps weights non-negative") {
  Eigen::MatrixXd A(4, 2);
  A << 1, 0, 0, 1, 1, 0, 0, 1;
  Eigen::VectorXd b(4);
  b << 1, -1, 1, -1;
  const auto w = nnls_small(A, b);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(0.0));
}

TEST_CASE("ensemble member weights are convex") {
  Philox4x32 rng(3, 3);
  std::normal_distribution<double> normal;
  const int n = 300;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  std::vector<std::size_t> groups(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = i % 2;
    X(i, 1) = normal(rng);
    y[i] = X(i, 1) * X(i, 1) + 0.1 * normal(rng);
    groups[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i / 5);
  }
  LearnerSpec spec;
  spec.kind = LearnerKind::ensemble;
  LearnerSpec glm;
  glm.kind = LearnerKind::generalized_linear;
  LearnerSpec forest;
  forest.kind = LearnerKind::regression_forest;
  forest.forest.trees = 30;
  spec.members = {glm, forest};
  const auto fitted = train_learner(spec, X, y, groups, 9);
  const auto w = fitted->member_weights();
  REQUIRE(w.size() == 2);
  CHECK(w[0] >= 0);
  CHECK(w[1] >= 0);
  CHECK(w[0] + w[1] == doctest::Approx(1.0));
  CHECK(w[1] > w[0]);
}
