#include "crt/logistic.hpp"

#include <cmath>

#include "crt/design.hpp"
#include "crt/errors.hpp"

namespace crt {

namespace {

Eigen::VectorXd probabilities(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = X * beta;
  return eta.unaryExpr([](double v) { return expit(v); });
}

double penalized_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                        const Eigen::VectorXd* w, double ridge) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // y*eta - log(1 + e^eta), computed stably
    const double e = eta[i];
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += (w ? (*w)[i] : 1.0) * (y[i] * e - log1pexp);
  }
  if (ridge > 0) ll -= 0.5 * ridge * beta.tail(beta.size() - 1).squaredNorm();
  return ll;
}

}  // namespace

Eigen::VectorXd logistic_score(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& beta, const Eigen::VectorXd* weights, double ridge) {
  Eigen::VectorXd resid = y - probabilities(X, beta);
  if (weights) resid = resid.cwiseProduct(*weights);
  Eigen::VectorXd g = X.transpose() * resid;
  if (ridge > 0) g.tail(g.size() - 1) -= ridge * beta.tail(beta.size() - 1);
  return g;
}

Eigen::MatrixXd logistic_information(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta,
                                     const Eigen::VectorXd* weights) {
  const Eigen::VectorXd p = probabilities(X, beta);
  Eigen::VectorXd w = p.cwiseProduct((1.0 - p.array()).matrix());
  if (weights) w = w.cwiseProduct(*weights);
  return X.transpose() * w.asDiagonal() * X;
}

LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd* weights,
                              const IrlsOptions& options, std::span<const std::string> names) {
  bool has0 = false, has1 = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) has0 = true;
    else if (y[i] == 1.0) has1 = true;
    else throw NumericalError("logistic regression: response must be 0/1");
  }
  if (!has0 || !has1) {
    throw NumericalError("logistic regression: response needs at least one 0 and one 1");
  }
  if (options.ridge <= 0.0) {
    if (auto dep = first_dependent_column(X)) {
      const std::string label = *dep < names.size() ? "'" + names[*dep] + "'" : "#" + std::to_string(*dep);
      throw NumericalError("logistic regression: design is rank deficient; column " + label +
                           " is a linear combination of earlier columns");
    }
  }

  const Eigen::Index d = X.cols();
  LogisticFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Zero(d, d);
  if (options.ridge > 0) {
    penalty.diagonal().setConstant(options.ridge);
    penalty(0, 0) = 0.0;
  }

  double ll = penalized_loglik(X, y, fit.coefficients, weights, options.ridge);
  for (int it = 1; it <= options.max_iterations; ++it) {
    fit.iterations = it;
    const Eigen::VectorXd g = logistic_score(X, y, fit.coefficients, weights, options.ridge);
    const Eigen::MatrixXd H = logistic_information(X, fit.coefficients, weights) + penalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step = ldlt.solve(g);
    if (!step.allFinite()) throw NumericalError("logistic regression: singular information matrix");

    // Step halving keeps the iteration monotone in the likelihood.
    Eigen::VectorXd next = fit.coefficients + step;
    double next_ll = penalized_loglik(X, y, next, weights, options.ridge);
    for (int half = 0; half < 30 && next_ll < ll - 1e-12 * (1.0 + std::abs(ll)); ++half) {
      step *= 0.5;
      next = fit.coefficients + step;
      next_ll = penalized_loglik(X, y, next, weights, options.ridge);
    }
    fit.coefficients = next;
    ll = next_ll;
    if (fit.coefficients.norm() > options.divergence_norm) {
      throw NumericalError(
          "logistic regression: coefficients diverge (quasi-complete separation); "
          "use the ridge-regularized learner");
    }
    if (step.cwiseAbs().maxCoeff() < options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged && (X * fit.coefficients).cwiseAbs().maxCoeff() > 20.0) {
    throw NumericalError(
        "logistic regression: fitted probabilities saturate without convergence (separation); "
        "use the ridge-regularized learner");
  }
  fit.max_abs_score = logistic_score(X, y, fit.coefficients, weights, options.ridge).cwiseAbs().maxCoeff();
  return fit;
}

}  // namespace crt
