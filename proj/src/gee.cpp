#include "crt/gee.hpp"

#include <algorithm>
#include <cmath>

#include "crt/design.hpp"
#include "crt/errors.hpp"
#include "crt/logistic.hpp"

namespace crt {

namespace {

void mean_and_variance(Family family, double eta, double& mu, double& dmu, double& var) {
  if (family == Family::gaussian_identity) {
    mu = eta;
    dmu = 1.0;
    var = 1.0;
  } else {
    mu = expit(eta);
    dmu = mu * (1.0 - mu);
    var = std::max(dmu, 1e-12);
  }
}

// Accumulates D' V^{-1} D and D' V^{-1} (y - mu) for one group, where
// V = A^{1/2} R(rho) A^{1/2} and R^{-1} = (I - c J) / (1 - rho),
// c = rho / (1 + (n - 1) rho).
void accumulate_group(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                      const Eigen::VectorXd& beta, Family family, CorrelationKind correlation, double rho,
                      Eigen::MatrixXd* info, Eigen::VectorXd& score) {
  const Eigen::Index n = X.rows();
  if (n == 0) return;
  const Eigen::VectorXd eta = X * beta;
  // With V^{-1/2}: whitened rows G = A^{-1/2} D = A^{-1/2} diag(dmu) X and r = A^{-1/2}(y - mu).
  Eigen::MatrixXd G(n, X.cols());
  Eigen::VectorXd r(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double mu, dmu, var;
    mean_and_variance(family, eta[j], mu, dmu, var);
    const double s = 1.0 / std::sqrt(var);
    G.row(j) = (s * dmu) * X.row(j);
    r[j] = s * (y[j] - mu);
  }
  if (correlation == CorrelationKind::independence || rho == 0.0 || n == 1) {
    score += G.transpose() * r;
    if (info) *info += G.transpose() * G;
    return;
  }
  const double c = rho / (1.0 + (static_cast<double>(n) - 1.0) * rho);
  const double scale = 1.0 / (1.0 - rho);
  const Eigen::RowVectorXd gsum = G.colwise().sum();
  const double rsum = r.sum();
  score += scale * (G.transpose() * r - c * gsum.transpose() * rsum);
  if (info) *info += scale * (G.transpose() * G - c * gsum.transpose() * gsum);
}

Eigen::VectorXd solve_fixed_rho(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                std::span<const std::size_t> offsets, Eigen::VectorXd beta, Family family,
                                CorrelationKind correlation, double rho, const GeeOptions& options,
                                bool& converged, int& iterations) {
  const Eigen::Index d = X.cols();
  converged = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    iterations = it;
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(d);
    for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
      const auto b = static_cast<Eigen::Index>(offsets[g]);
      const auto n = static_cast<Eigen::Index>(offsets[g + 1] - offsets[g]);
      accumulate_group(X.middleRows(b, n), y.segment(b, n), beta, family, correlation, rho, &info, score);
    }
    Eigen::VectorXd step = info.ldlt().solve(score);
    if (!step.allFinite()) throw NumericalError("GEE: singular information matrix");
    beta += step;
    if (beta.norm() > 1e6) throw NumericalError("GEE: coefficients diverge");
    if (step.cwiseAbs().maxCoeff() < options.tolerance) {
      converged = true;
      break;
    }
  }
  return beta;
}

}  // namespace

Eigen::VectorXd gee_group_score(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                                const Eigen::VectorXd& beta, Family family, CorrelationKind correlation,
                                double rho) {
  Eigen::VectorXd score = Eigen::VectorXd::Zero(X.cols());
  accumulate_group(X, y, beta, family, correlation, rho, nullptr, score);
  return score;
}

MomentEstimate exchangeable_moment(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   std::span<const std::size_t> offsets, const Eigen::VectorXd& beta,
                                   Family family) {
  MomentEstimate est;
  const Eigen::VectorXd eta = X * beta;
  double sq = 0.0, cross = 0.0, pairs = 0.0;
  std::size_t n_total = 0;
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    double s = 0.0, s2 = 0.0;
    const std::size_t n = offsets[g + 1] - offsets[g];
    for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
      double mu, dmu, var;
      mean_and_variance(family, eta[static_cast<Eigen::Index>(r)], mu, dmu, var);
      const double e = (y[static_cast<Eigen::Index>(r)] - mu) / std::sqrt(var);
      s += e;
      s2 += e * e;
    }
    sq += s2;
    cross += 0.5 * (s * s - s2);
    pairs += 0.5 * static_cast<double>(n) * (static_cast<double>(n) - 1.0);
    n_total += n;
  }
  est.dispersion = n_total ? sq / static_cast<double>(n_total) : 1.0;
  if (pairs > 0 && est.dispersion > 0) {
    est.identified = true;
    est.rho = cross / (est.dispersion * pairs);
  }
  return est;
}

GeeFit fit_gee(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::span<const std::size_t> offsets,
               Family family, CorrelationKind correlation, const GeeOptions& options,
               std::span<const std::string> names) {
  if (X.rows() == 0) throw NumericalError("GEE: no observations");
  if (auto dep = first_dependent_column(X)) {
    const std::string label = *dep < names.size() ? "'" + names[*dep] + "'" : "#" + std::to_string(*dep);
    throw NumericalError("GEE: design is rank deficient; column " + label +
                         " is a linear combination of earlier columns");
  }

  GeeFit fit;
  fit.family = family;
  fit.correlation = correlation;

  // Independence start.
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  if (family == Family::gaussian_identity) {
    beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
    fit.converged = true;
    fit.iterations = 1;
  } else {
    beta = solve_fixed_rho(X, y, offsets, beta, family, CorrelationKind::independence, 0.0, options,
                           fit.converged, fit.iterations);
  }

  if (correlation == CorrelationKind::exchangeable) {
    fit.converged = false;
    for (int outer = 1; outer <= options.max_iterations; ++outer) {
      const MomentEstimate mom = exchangeable_moment(X, y, offsets, beta, family);
      double rho = mom.identified ? mom.rho : 0.0;
      bool truncated = false;
      if (!(rho >= 0.0 && rho < 1.0)) {
        rho = std::clamp(std::isfinite(rho) ? rho : 0.0, 0.0, options.rho_cap);
        truncated = true;
      }
      fit.rho = rho;
      fit.rho_truncated = truncated;
      fit.dispersion = mom.dispersion;
      bool inner_converged = false;
      int inner_it = 0;
      Eigen::VectorXd next = solve_fixed_rho(X, y, offsets, beta, family, correlation, rho, options,
                                             inner_converged, inner_it);
      const double change = (next - beta).cwiseAbs().maxCoeff();
      beta = next;
      fit.iterations = outer;
      if (inner_converged && change < options.tolerance) {
        fit.converged = true;
        break;
      }
    }
  } else {
    fit.dispersion = exchangeable_moment(X, y, offsets, beta, family).dispersion;
  }
  fit.coefficients = beta;
  return fit;
}

}  // namespace crt
