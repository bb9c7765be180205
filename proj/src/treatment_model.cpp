#include "crt/treatment_model.hpp"

#include "crt/design.hpp"
#include "crt/errors.hpp"
#include "crt/logistic.hpp"

namespace crt {

TreatmentModelFit fit_treatment_model(const TrialDataset& ds, const Eigen::MatrixXd& summaries,
                                      const std::vector<std::string>& summary_names) {
  const auto m = static_cast<Eigen::Index>(ds.m());
  Eigen::VectorXd a(m);
  std::size_t treated = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    a[i] = ds.clusters[static_cast<std::size_t>(i)].treatment;
    treated += ds.clusters[static_cast<std::size_t>(i)].treatment == 1;
  }
  if (treated == 0 || treated == ds.m()) {
    throw ValidationError("treatment model: need at least one treated and one control cluster");
  }

  // Drop summaries that are constant or collinear across clusters.
  std::vector<std::size_t> candidates(static_cast<std::size_t>(summaries.cols()));
  for (std::size_t k = 0; k < candidates.size(); ++k) candidates[k] = k;
  const auto kept = informative_columns(summaries, candidates);

  TreatmentModelFit fit;
  fit.names.push_back("(intercept)");
  fit.design.resize(m, static_cast<Eigen::Index>(kept.size() + 1));
  fit.design.col(0).setOnes();
  for (std::size_t k = 0; k < kept.size(); ++k) {
    fit.design.col(static_cast<Eigen::Index>(k + 1)) = summaries.col(static_cast<Eigen::Index>(kept[k]));
    fit.names.push_back(kept[k] < summary_names.size() ? summary_names[kept[k]] : "s" + std::to_string(kept[k]));
  }

  const double pi = ds.randomization_probability;
  try {
    if (fit.design.cols() >= m) throw NumericalError("more parameters than clusters");
    LogisticFit lf = fit_logistic_irls(fit.design, a, nullptr, {}, fit.names);
    if (!lf.converged) throw NumericalError("IRLS did not converge");
    fit.coefficients = lf.coefficients;
    fit.pi_hat = (fit.design * lf.coefficients).unaryExpr([](double v) { return expit(v); });
    if (fit.pi_hat.minCoeff() < 1e-6 || fit.pi_hat.maxCoeff() > 1.0 - 1e-6) {
      throw NumericalError("fitted probabilities at the boundary");
    }
  } catch (const NumericalError& e) {
    fit.fallback = true;
    fit.warning = std::string("treatment model failed (") + e.what() +
                  "); using the known randomization probability";
    fit.coefficients = Eigen::VectorXd::Zero(fit.design.cols());
    fit.coefficients[0] = logit(pi);
    fit.pi_hat = Eigen::VectorXd::Constant(m, pi);
  }
  return fit;
}

}  // namespace crt
