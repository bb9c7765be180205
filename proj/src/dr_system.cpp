#include "crt/dr_system.hpp"

#include <algorithm>

#include "crt/errors.hpp"
#include "crt/logistic.hpp"

namespace crt {

DrEstimatingSystem::DrEstimatingSystem(DrSystemSpec spec) : spec_(std::move(spec)) {
  const auto& ds = *spec_.ds;
  const std::size_t m = ds.m();
  if (spec_.offsets.size() != m + 1) throw std::invalid_argument("DrEstimatingSystem: offsets must have m + 1 entries");
  const auto n = static_cast<Eigen::Index>(spec_.offsets.back());

  blocks_.push_back({"mu1", 0, 1});
  blocks_.push_back({"mu0", 1, 1});
  if (spec_.kappa_design) {
    r_off_ = dim_;
    r_dim_ = static_cast<std::size_t>(spec_.kappa_design->cols());
    dim_ += r_dim_;
    blocks_.push_back({"theta_R", r_off_, r_dim_});
  } else if (spec_.kappa_fixed.size() != n) {
    throw std::invalid_argument("DrEstimatingSystem: fixed kappa has the wrong length");
  }
  if (spec_.eta_design_1) {
    y_off_ = dim_;
    y_dim_ = static_cast<std::size_t>(spec_.eta_design_1->cols());
    dim_ += y_dim_;
    blocks_.push_back({"theta_Y", y_off_, y_dim_});
  } else if (spec_.eta1_fixed.size() != n || spec_.eta0_fixed.size() != n) {
    throw std::invalid_argument("DrEstimatingSystem: fixed eta has the wrong length");
  }
  if (spec_.treatment_design) {
    a_off_ = dim_;
    a_dim_ = static_cast<std::size_t>(spec_.treatment_design->cols());
    dim_ += a_dim_;
    blocks_.push_back({"theta_A", a_off_, a_dim_});
  }

  r_.resize(n);
  std::vector<Eigen::Index> obs_rows;
  y_obs_offsets_.assign(1, 0);
  std::vector<double> y_obs;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& c = ds.clusters[i];
    for (std::size_t j = 0; j < c.individuals.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(spec_.offsets[i] + j);
      r_[r] = c.individuals[j].outcome_observed ? 1.0 : 0.0;
      if (c.individuals[j].outcome_observed) {
        obs_rows.push_back(r);
        y_obs.push_back(c.individuals[j].outcome);
      }
    }
    y_obs_offsets_.push_back(obs_rows.size());
  }
  if (spec_.eta_design_1) {
    y_obs_design_.resize(static_cast<Eigen::Index>(obs_rows.size()), spec_.eta_design_1->cols());
    std::size_t k = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& source = ds.clusters[i].treatment == 1 ? *spec_.eta_design_1 : *spec_.eta_design_0;
      for (; k < y_obs_offsets_[i + 1]; ++k) y_obs_design_.row(static_cast<Eigen::Index>(k)) = source.row(obs_rows[k]);
    }
    y_obs_ = Eigen::Map<Eigen::VectorXd>(y_obs.data(), static_cast<Eigen::Index>(y_obs.size()));
  }
}

Eigen::VectorXd DrEstimatingSystem::pack(double mu1, double mu0, const Eigen::VectorXd& theta_r,
                                         const Eigen::VectorXd& theta_y, const Eigen::VectorXd& theta_a) const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(dim_));
  theta[0] = mu1;
  theta[1] = mu0;
  if (r_dim_) theta.segment(static_cast<Eigen::Index>(r_off_), static_cast<Eigen::Index>(r_dim_)) = theta_r;
  if (y_dim_) theta.segment(static_cast<Eigen::Index>(y_off_), static_cast<Eigen::Index>(y_dim_)) = theta_y;
  if (a_dim_) theta.segment(static_cast<Eigen::Index>(a_off_), static_cast<Eigen::Index>(a_dim_)) = theta_a;
  return theta;
}

namespace {

double inverse_link(Family f, double eta) { return f == Family::binomial_logit ? expit(eta) : eta; }

}  // namespace

void DrEstimatingSystem::evaluate(std::size_t i, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const {
  const auto& c = spec_.ds->clusters[i];
  const std::size_t begin = spec_.offsets[i], n = spec_.offsets[i + 1] - begin;
  out.setZero();

  double pi_i = spec_.ds->randomization_probability;
  if (a_dim_) {
    const auto beta = theta.segment(static_cast<Eigen::Index>(a_off_), static_cast<Eigen::Index>(a_dim_));
    const auto z = spec_.treatment_design->row(static_cast<Eigen::Index>(i));
    pi_i = expit(z.dot(beta));
    out.segment(static_cast<Eigen::Index>(a_off_), static_cast<Eigen::Index>(a_dim_)) = z.transpose() * (c.treatment - pi_i);
  }

  const WeightScheme constant{};
  const Eigen::VectorXd w = (spec_.mode == SamplingMode::uniform_sampling ? constant : spec_.weights).scaled(n);
  double s1 = 0.0, s0 = 0.0;
  double ratio_weight = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto r = static_cast<Eigen::Index>(begin + j);
    double kappa;
    if (r_dim_) {
      const auto beta = theta.segment(static_cast<Eigen::Index>(r_off_), static_cast<Eigen::Index>(r_dim_));
      const auto z = spec_.kappa_design->row(r);
      const double p = expit(z.dot(beta));
      out.segment(static_cast<Eigen::Index>(r_off_), static_cast<Eigen::Index>(r_dim_)) += z.transpose() * (r_[r] - p);
      kappa = std::clamp(p, spec_.floor, 1.0);
    } else {
      kappa = spec_.kappa_fixed[r];
    }
    double e1, e0;
    if (y_dim_) {
      const auto beta = theta.segment(static_cast<Eigen::Index>(y_off_), static_cast<Eigen::Index>(y_dim_));
      e1 = inverse_link(spec_.family, spec_.eta_design_1->row(r).dot(beta));
      e0 = inverse_link(spec_.family, spec_.eta_design_0->row(r).dot(beta));
    } else {
      e1 = spec_.eta1_fixed[r];
      e0 = spec_.eta0_fixed[r];
    }
    const auto& ind = c.individuals[j];
    if (spec_.ratio_ipw) {
      if (ind.outcome_observed) {
        s1 += ind.outcome / kappa;
        ratio_weight += 1.0 / kappa;
      }
      continue;
    }
    const double wj = w[static_cast<Eigen::Index>(j)];
    s1 += wj * dr_term(1, c.treatment, pi_i, ind.outcome_observed, ind.outcome, kappa, e1);
    s0 += wj * dr_term(0, c.treatment, pi_i, ind.outcome_observed, ind.outcome, kappa, e0);
  }
  if (spec_.ratio_ipw) {
    out[c.treatment == 1 ? 0 : 1] = s1 - ratio_weight * theta[c.treatment == 1 ? 0 : 1];
  } else {
    out[0] = s1 - theta[0];
    out[1] = s0 - theta[1];
  }

  if (y_dim_) {
    const auto lo = static_cast<Eigen::Index>(y_obs_offsets_[i]);
    const auto len = static_cast<Eigen::Index>(y_obs_offsets_[i + 1] - y_obs_offsets_[i]);
    if (len > 0) {
      const auto beta = theta.segment(static_cast<Eigen::Index>(y_off_), static_cast<Eigen::Index>(y_dim_));
      out.segment(static_cast<Eigen::Index>(y_off_), static_cast<Eigen::Index>(y_dim_)) =
          gee_group_score(y_obs_design_.middleRows(lo, len), y_obs_.segment(lo, len), beta, spec_.family,
                          spec_.correlation, spec_.rho);
    }
  }
}

NuisancePredictions DrEstimatingSystem::predictions(const Eigen::VectorXd& theta) const {
  const auto n = static_cast<Eigen::Index>(spec_.offsets.back());
  NuisancePredictions p;
  p.floor = spec_.floor;
  p.kappa.resize(n);
  p.eta1.resize(n);
  p.eta0.resize(n);
  p.fold.assign(spec_.ds->m(), -1);
  if (r_dim_) {
    const Eigen::VectorXd lin =
        *spec_.kappa_design * theta.segment(static_cast<Eigen::Index>(r_off_), static_cast<Eigen::Index>(r_dim_));
    for (Eigen::Index r = 0; r < n; ++r) p.kappa[r] = std::clamp(expit(lin[r]), spec_.floor, 1.0);
  } else {
    p.kappa = spec_.kappa_fixed;
  }
  if (y_dim_) {
    const auto beta = theta.segment(static_cast<Eigen::Index>(y_off_), static_cast<Eigen::Index>(y_dim_));
    const Eigen::VectorXd l1 = *spec_.eta_design_1 * beta, l0 = *spec_.eta_design_0 * beta;
    for (Eigen::Index r = 0; r < n; ++r) {
      p.eta1[r] = inverse_link(spec_.family, l1[r]);
      p.eta0[r] = inverse_link(spec_.family, l0[r]);
    }
  } else {
    p.eta1 = spec_.eta1_fixed;
    p.eta0 = spec_.eta0_fixed;
  }
  if (a_dim_) {
    const Eigen::VectorXd lin =
        *spec_.treatment_design * theta.segment(static_cast<Eigen::Index>(a_off_), static_cast<Eigen::Index>(a_dim_));
    p.pi_hat = lin.unaryExpr([](double v) { return expit(v); });
  }
  return p;
}

UnadjustedSystem::UnadjustedSystem(const TrialDataset& ds) {
  for (const auto& c : ds.clusters) {
    double s = 0;
    int k = 0;
    for (const auto& ind : c.individuals) {
      if (ind.outcome_observed) {
        s += ind.outcome;
        ++k;
      }
    }
    treatment_.push_back(c.treatment);
    mean_.push_back(k ? s / k : 0.0);
    has_outcome_.push_back(k > 0);
  }
}

void UnadjustedSystem::evaluate(std::size_t i, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const {
  out.setZero();
  if (!has_outcome_[i]) return;
  if (treatment_[i] == 1) {
    out[0] = mean_[i] - theta[0];
  } else {
    out[1] = mean_[i] - theta[1];
  }
}

}  // namespace crt
