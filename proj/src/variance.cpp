#include "crt/variance.hpp"

#include <cmath>
#include <sstream>

#include "crt/errors.hpp"

namespace crt {

std::vector<ParameterBlock> EstimatingSystem::blocks() const { return {{"theta", 0, dimension()}}; }

Eigen::MatrixXd estimating_function_values(const EstimatingSystem& system, const Eigen::VectorXd& theta) {
  const auto m = static_cast<Eigen::Index>(system.clusters());
  Eigen::MatrixXd values(m, static_cast<Eigen::Index>(system.dimension()));
  Eigen::VectorXd row(values.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    system.evaluate(static_cast<std::size_t>(i), theta, row);
    values.row(i) = row.transpose();
  }
  return values;
}

Eigen::VectorXd mean_estimating_function(const EstimatingSystem& system, const Eigen::VectorXd& theta) {
  const auto d = static_cast<Eigen::Index>(system.dimension());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), row(d);
  for (std::size_t i = 0; i < system.clusters(); ++i) {
    system.evaluate(i, theta, row);
    sum += row;
  }
  return sum / static_cast<double>(system.clusters());
}

Eigen::MatrixXd numeric_jacobian(const EstimatingSystem& system, const Eigen::VectorXd& theta, double step_scale) {
  const auto d = theta.size();
  Eigen::MatrixXd J(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double h = step_scale * std::max(1e-6, 1e-6 * std::abs(theta[j]));
    Eigen::VectorXd up = theta, down = theta;
    up[j] += h;
    down[j] -= h;
    const Eigen::VectorXd f_up = mean_estimating_function(system, up);
    const Eigen::VectorXd f_down = mean_estimating_function(system, down);
    if (!f_up.allFinite() || !f_down.allFinite()) {
      throw NumericalError("estimating function is not finite when perturbing coordinate " + std::to_string(j));
    }
    J.col(j) = (f_up - f_down) / (up[j] - down[j]);
  }
  return J;
}

namespace {

std::string offending_block(const EstimatingSystem& system, const Eigen::VectorXd& direction) {
  Eigen::Index worst = 0;
  direction.cwiseAbs().maxCoeff(&worst);
  for (const auto& b : system.blocks()) {
    if (static_cast<std::size_t>(worst) >= b.offset && static_cast<std::size_t>(worst) < b.offset + b.size) return b.name;
  }
  return "unknown";
}

}  // namespace

SandwichResult sandwich_variance(const EstimatingSystem& system, const Eigen::VectorXd& theta_hat,
                                 const Eigen::VectorXd& gradient) {
  const auto m = static_cast<double>(system.clusters());
  SandwichResult out;
  const Eigen::MatrixXd psi = estimating_function_values(system, theta_hat);
  if (!psi.allFinite()) throw NumericalError("estimating function is not finite at the estimate");
  out.max_abs_mean_psi = (psi.colwise().sum() / m).cwiseAbs().maxCoeff();
  out.meat = psi.transpose() * psi / m;
  out.bread = numeric_jacobian(system, theta_hat);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.bread, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double smax = sv[0], smin = sv[sv.size() - 1];
  out.condition_number = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(out.condition_number < 1e12)) {
    std::ostringstream msg;
    msg << "sandwich bread is singular (condition number " << out.condition_number << "); parameter block '"
        << offending_block(system, svd.matrixV().col(sv.size() - 1)) << "' is not identified";
    throw NumericalError(msg.str());
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(out.bread);
  const Eigen::MatrixXd binv = lu.inverse();
  out.covariance = binv * out.meat * binv.transpose() / m;
  out.target_variance = gradient.dot(out.covariance * gradient);
  return out;
}

double small_sample_factor(std::size_t m, std::size_t k) {
  if (m <= k) {
    throw ValidationError("small-sample correction needs more clusters (" + std::to_string(m) +
                          ") than adjustment columns (" + std::to_string(k) + ")");
  }
  return static_cast<double>(m) / static_cast<double>(m - k);
}

double small_sample_correction(double variance, std::size_t m, std::size_t k) {
  return variance * small_sample_factor(m, k);
}

namespace {

// Lentz continued fraction for the incomplete beta function.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int k = 1; k <= 10000; ++k) {
    const double kk = k;
    double num = kk * (b - kk) * x / ((a + 2 * kk - 1) * (a + 2 * kk));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + kk) * (a + b + kk) * x / ((a + 2 * kk) * (a + 2 * kk + 1));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw std::invalid_argument("incomplete_beta: a, b must be positive");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * beta_continued_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (std::isinf(df)) return 0.5 * std::erfc(-t / std::sqrt(2.0));
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0 ? 1.0 - tail : tail;
}

double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) throw std::invalid_argument("normal_quantile: p must be in (0, 1)");
  // Bisection to bracket, then Newton on the exact CDF.
  double lo = -40, hi = 40;
  for (int it = 0; it < 200 && hi - lo > 1e-3; ++it) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  double z = 0.5 * (lo + hi);
  for (int it = 0; it < 50; ++it) {
    const double f = 0.5 * std::erfc(-z / std::sqrt(2.0)) - p;
    const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    const double step = f / dens;
    z -= step;
    if (std::abs(step) < 1e-15 * (1.0 + std::abs(z))) break;
  }
  return z;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0 && p < 1)) throw std::invalid_argument("student_t_quantile: p must be in (0, 1)");
  if (!(df > 0)) throw std::invalid_argument("student_t_quantile: df must be positive");
  if (std::isinf(df)) return normal_quantile(p);
  if (p < 0.5) return -student_t_quantile(1.0 - p, df);
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
    if (hi - lo < 1e-14 * (1.0 + hi)) break;
  }
  return 0.5 * (lo + hi);
}

ConfidenceInterval ci_tdist_df(double estimate, double se, double df, double level) {
  if (!(level > 0 && level < 1)) throw ValidationError("confidence level must lie in (0, 1)");
  if (!(se > 0) || !std::isfinite(se)) throw NumericalError("standard error must be positive and finite");
  ConfidenceInterval ci;
  ci.df = df;
  ci.quantile = student_t_quantile(0.5 + level / 2.0, df);
  ci.low = estimate - ci.quantile * se;
  ci.high = estimate + ci.quantile * se;
  return ci;
}

ConfidenceInterval ci_tdist(double estimate, double se, std::size_t m, std::size_t k, double level) {
  if (m <= k) throw ValidationError("t interval needs m > number of adjustment columns");
  return ci_tdist_df(estimate, se, static_cast<double>(m - k), level);
}

CrossFitVariance crossfit_variance(const Eigen::MatrixXd& u, const std::vector<std::size_t>& fold_of, std::size_t folds,
                                   const Eigen::Vector2d& gradient) {
  if (u.cols() != 2 || static_cast<std::size_t>(u.rows()) != fold_of.size()) {
    throw std::invalid_argument("crossfit_variance: u must be m x 2 and match the fold assignment");
  }
  CrossFitVariance out;
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == k) rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (rows.size() < 2) throw NumericalError("cross-fit variance: fold " + std::to_string(k + 1) + " has fewer than 2 clusters");
    const Eigen::MatrixXd uk = u(rows, Eigen::all);
    const Eigen::MatrixXd centered = uk.rowwise() - uk.colwise().mean();
    out.v_hat += centered.transpose() * centered / static_cast<double>(rows.size());
  }
  out.v_hat /= static_cast<double>(folds);
  out.variance = gradient.dot(out.v_hat * gradient) / static_cast<double>(u.rows());
  out.degenerate = out.v_hat.cwiseAbs().maxCoeff() == 0.0;
  return out;
}

}  // namespace crt
