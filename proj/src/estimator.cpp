#include "crt/estimator.hpp"

#include <cmath>

#include "crt/errors.hpp"

namespace crt {

std::string to_string(ScaleKind s) {
  switch (s) {
    case ScaleKind::difference: return "difference";
    case ScaleKind::odds_ratio: return "odds-ratio";
    case ScaleKind::risk_ratio: return "risk-ratio";
  }
  return "unknown";
}

ScaleKind scale_from_string(const std::string& s) {
  for (auto k : {ScaleKind::difference, ScaleKind::odds_ratio, ScaleKind::risk_ratio}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown effect scale '" + s + "'");
}

std::string to_string(SamplingMode s) {
  return s == SamplingMode::full_enrollment ? "full-enrollment" : "uniform-sampling";
}

SamplingMode sampling_mode_from_string(const std::string& s) {
  if (s == "full-enrollment") return SamplingMode::full_enrollment;
  if (s == "uniform-sampling") return SamplingMode::uniform_sampling;
  throw ValidationError("unknown sampling mode '" + s + "'");
}

std::string to_string(EstimatorTag t) {
  switch (t) {
    case EstimatorTag::unadjusted: return "unadjusted";
    case EstimatorTag::ipw: return "ipw";
    case EstimatorTag::dr_pm: return "dr-pm";
    case EstimatorTag::dr_ml: return "dr-ml";
  }
  return "unknown";
}

EstimatorTag estimator_from_string(const std::string& s) {
  for (auto k : {EstimatorTag::unadjusted, EstimatorTag::ipw, EstimatorTag::dr_pm, EstimatorTag::dr_ml}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown estimator '" + s + "'");
}

ScaleValue effect_scale_apply(ScaleKind scale, double mu1, double mu0) {
  if (!std::isfinite(mu1) || !std::isfinite(mu0)) throw NumericalError("non-finite arm means");
  switch (scale) {
    case ScaleKind::difference: return {mu1 - mu0, 1.0, -1.0};
    case ScaleKind::risk_ratio:
    case ScaleKind::odds_ratio:
      if (!(mu1 > 0 && mu1 < 1 && mu0 > 0 && mu0 < 1)) {
        throw DomainError(to_string(scale) + " scale requires both arm means in (0, 1); got mu1 = " +
                          std::to_string(mu1) + ", mu0 = " + std::to_string(mu0));
      }
      if (scale == ScaleKind::risk_ratio) return {mu1 / mu0, 1.0 / mu0, -mu1 / (mu0 * mu0)};
      {
        const double o1 = mu1 / (1 - mu1), o0 = mu0 / (1 - mu0);
        const double v = o1 / o0;
        return {v, v / (mu1 * (1 - mu1)), -v / (mu0 * (1 - mu0))};
      }
  }
  throw std::logic_error("unreachable scale");
}

Eigen::VectorXd WeightScheme::raw(std::size_t n) const {
  if (kind == WeightKind::constant) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  if (!(rho >= 0 && rho < 1)) throw ValidationError("exchangeable weights need rho in [0, 1)");
  // Corr(rho)^{-1} 1 = 1 / (1 + (n - 1) rho) for every entry.
  return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / (1.0 + (static_cast<double>(n) - 1.0) * rho));
}

Eigen::VectorXd WeightScheme::scaled(std::size_t n) const {
  const Eigen::VectorXd w = raw(n);
  if ((w.array() == w[0]).all()) return Eigen::VectorXd::Constant(w.size(), 1.0 / static_cast<double>(n));
  return w / w.sum();
}

Eigen::VectorXd optimal_weights_exchangeable(std::size_t n, double rho, double sigma2) {
  if (n == 0) throw ValidationError("cluster size must be positive");
  if (!(rho >= 0 && rho < 1)) throw ValidationError("rho must lie in [0, 1)");
  if (!(sigma2 > 0)) throw ValidationError("sigma2 must be positive");
  // H^{-1} = [I - c J] / (sigma2 (1 - rho)), c = rho / (1 + (n - 1) rho); every row sums to the same value.
  const double nn = static_cast<double>(n);
  const double c = rho / (1.0 + (nn - 1.0) * rho);
  const double entry = (1.0 - c * nn) / (sigma2 * (1.0 - rho));
  Eigen::VectorXd h = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), entry);
  return h / h.sum();
}

double dr_term(int a, int treatment, double pi_i, bool observed, double y, double kappa, double eta_a) {
  double v = eta_a;
  if (treatment == a && observed) {
    const double pa = a == 1 ? pi_i : 1.0 - pi_i;
    v += (y - eta_a) / (pa * kappa);
  }
  return v;
}

void dr_contributions(const TrialDataset& ds, const NuisancePredictions& preds, const WeightScheme& weights,
                      SamplingMode mode, Eigen::VectorXd& c1, Eigen::VectorXd& c0) {
  const std::size_t m = ds.m();
  c1.resize(static_cast<Eigen::Index>(m));
  c0.resize(static_cast<Eigen::Index>(m));
  const WeightScheme constant{};
  std::size_t row = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& c = ds.clusters[i];
    const std::size_t n = c.individuals.size();
    if (n == 0) throw ValidationError("cluster '" + c.cluster_id + "' has no enrolled individuals");
    const Eigen::VectorXd w = (mode == SamplingMode::uniform_sampling ? constant : weights).scaled(n);
    const double pi_i = preds.pi_hat ? (*preds.pi_hat)[static_cast<Eigen::Index>(i)] : ds.randomization_probability;
    if (!(pi_i > 0 && pi_i < 1)) throw NumericalError("treatment probability outside (0, 1) for cluster '" + c.cluster_id + "'");
    double s1 = 0.0, s0 = 0.0;
    for (std::size_t j = 0; j < n; ++j, ++row) {
      const auto r = static_cast<Eigen::Index>(row);
      const auto& ind = c.individuals[j];
      const double kappa = preds.kappa[r];
      if (ind.outcome_observed && !(kappa >= preds.floor * (1 - 1e-12))) {
        throw NumericalError("kappa below the propensity floor");
      }
      const double wj = w[static_cast<Eigen::Index>(j)];
      s1 += wj * dr_term(1, c.treatment, pi_i, ind.outcome_observed, ind.outcome, kappa, preds.eta1[r]);
      s0 += wj * dr_term(0, c.treatment, pi_i, ind.outcome_observed, ind.outcome, kappa, preds.eta0[r]);
    }
    c1[static_cast<Eigen::Index>(i)] = s1;
    c0[static_cast<Eigen::Index>(i)] = s0;
  }
  if (static_cast<Eigen::Index>(row) != preds.kappa.size()) {
    throw ValidationError("nuisance predictions do not cover every enrolled individual");
  }
}

PointEstimate size_weighted_means(const Eigen::VectorXd& c1, const Eigen::VectorXd& c0, const Eigen::VectorXd& sizes,
                                  ScaleKind scale) {
  PointEstimate out;
  out.c1 = c1;
  out.c0 = c0;
  out.weight = sizes / sizes.mean();
  const double total = sizes.sum();
  out.mu1 = sizes.dot(c1) / total;
  out.mu0 = sizes.dot(c0) / total;
  out.effect = effect_scale_apply(scale, out.mu1, out.mu0);
  return out;
}

PointEstimate dr_cluster_average(const TrialDataset& ds, const NuisancePredictions& preds, const WeightScheme& weights,
                                 ScaleKind scale, SamplingMode mode) {
  PointEstimate out;
  dr_contributions(ds, preds, weights, mode, out.c1, out.c0);
  out.weight = Eigen::VectorXd::Ones(out.c1.size());
  out.mu1 = out.c1.mean();
  out.mu0 = out.c0.mean();
  out.effect = effect_scale_apply(scale, out.mu1, out.mu0);
  return out;
}

PointEstimate ipw_estimate(const TrialDataset& ds, const NuisancePredictions& preds, ScaleKind scale, SamplingMode mode,
                           IpwTarget target) {
  NuisancePredictions zero = preds;
  zero.eta1.setZero();
  zero.eta0.setZero();
  if (target == IpwTarget::cluster_average) return dr_cluster_average(ds, zero, WeightScheme{}, scale, mode);
  const auto m = static_cast<Eigen::Index>(ds.m());
  PointEstimate out;
  out.c1 = Eigen::VectorXd::Zero(m);
  out.c0 = Eigen::VectorXd::Zero(m);
  out.weight = Eigen::VectorXd::Zero(m);
  double num[2] = {0, 0}, den[2] = {0, 0};
  std::size_t row = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = ds.clusters[static_cast<std::size_t>(i)];
    double s = 0, w = 0;
    for (const auto& ind : c.individuals) {
      const double kappa = preds.kappa[static_cast<Eigen::Index>(row++)];
      if (!ind.outcome_observed) continue;
      if (!(kappa > 0)) throw NumericalError("kappa is not positive for an observed outcome");
      s += ind.outcome / kappa;
      w += 1.0 / kappa;
    }
    num[c.treatment] += s;
    den[c.treatment] += w;
    out.weight[i] = w;
    (c.treatment == 1 ? out.c1 : out.c0)[i] = w > 0 ? s / w : 0.0;
  }
  if (!(den[0] > 0) || !(den[1] > 0)) throw ValidationError("an arm has no observed outcomes");
  out.mu1 = num[1] / den[1];
  out.mu0 = num[0] / den[0];
  out.effect = effect_scale_apply(scale, out.mu1, out.mu0);
  return out;
}

PointEstimate individual_average_reweight(const TrialDataset& ds, const PointEstimate& cluster_average, ScaleKind scale) {
  Eigen::VectorXd sizes(static_cast<Eigen::Index>(ds.m()));
  for (std::size_t i = 0; i < ds.m(); ++i) {
    const auto& c = ds.clusters[i];
    if (c.population_size.observed) {
      sizes[static_cast<Eigen::Index>(i)] = c.population_size.value;
    } else if (ds.full_enrollment) {
      sizes[static_cast<Eigen::Index>(i)] = c.sampled_size;
    } else {
      throw ValidationError("cluster '" + c.cluster_id +
                            "' has no population size; the individual-average estimand needs every N_i, use the "
                            "cluster-average estimand instead");
    }
  }
  return size_weighted_means(cluster_average.c1, cluster_average.c0, sizes, scale);
}

UnadjustedEstimate unadjusted_estimate(const TrialDataset& ds, ScaleKind scale) {
  UnadjustedEstimate out;
  const auto m = static_cast<Eigen::Index>(ds.m());
  out.cluster_mean = Eigen::VectorXd::Constant(m, std::nan(""));
  double sum[2] = {0, 0};
  int count[2] = {0, 0};
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& c = ds.clusters[static_cast<std::size_t>(i)];
    double s = 0;
    int k = 0;
    for (const auto& ind : c.individuals) {
      if (ind.outcome_observed) {
        s += ind.outcome;
        ++k;
      }
    }
    if (k == 0) {
      out.flagged_clusters.push_back(c.cluster_id);
      continue;
    }
    out.cluster_mean[i] = s / k;
    sum[c.treatment] += s / k;
    count[c.treatment]++;
  }
  if (count[0] == 0 || count[1] == 0) {
    throw ValidationError("unadjusted estimator: an arm has no cluster with an observed outcome");
  }
  auto& p = out.point;
  p.mu1 = sum[1] / count[1];
  p.mu0 = sum[0] / count[0];
  p.effect = effect_scale_apply(scale, p.mu1, p.mu0);
  p.c1 = Eigen::VectorXd::Zero(m);
  p.c0 = Eigen::VectorXd::Zero(m);
  p.weight = Eigen::VectorXd::Ones(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::isnan(out.cluster_mean[i])) continue;
    (ds.clusters[static_cast<std::size_t>(i)].treatment ? p.c1 : p.c0)[i] = out.cluster_mean[i];
  }
  return out;
}

}  // namespace crt
