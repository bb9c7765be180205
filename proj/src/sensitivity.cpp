#include "crt/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "crt/csv.hpp"
#include "crt/errors.hpp"
#include "crt/variance.hpp"

namespace crt {

BiasComponents estimate_bias_components(const TrialDataset& ds) {
  BiasComponents out;
  const std::size_t m = ds.m();
  if (m == 0) return out;

  double n_max = 0.0;
  for (const auto& c : ds.clusters) {
    if (c.population_size.observed) n_max = std::max(n_max, c.population_size.value);
  }
  double conservative = 0.0, optimistic = 0.0;
  double miss[2] = {0, 0};
  int count[2] = {0, 0};
  for (const auto& c : ds.clusters) {
    const double M = c.sampled_size;
    if (c.population_size.observed) {
      const double frac = (c.population_size.value - M) / c.population_size.value;
      conservative += frac;
      optimistic += frac;
    } else if (ds.full_enrollment) {
      // N = M by definition.
    } else {
      ++out.clusters_missing_n;
      conservative += n_max > 0 ? std::max(0.0, (n_max - M) / n_max) : 1.0;
    }
    std::size_t missing = 0;
    for (const auto& ind : c.individuals) missing += !ind.outcome_observed;
    if (!c.individuals.empty()) {
      miss[c.treatment] += static_cast<double>(missing) / static_cast<double>(c.individuals.size());
      count[c.treatment]++;
    }
  }
  out.nonparticipation = conservative / static_cast<double>(m);
  out.nonparticipation_optimistic = optimistic / static_cast<double>(m);
  out.missing_outcome_treated = count[1] ? miss[1] / count[1] : 0.0;
  out.missing_outcome_control = count[0] ? miss[0] / count[0] : 0.0;
  if (out.clusters_missing_n > 0) {
    if (n_max > 0) {
      out.notes.push_back(std::to_string(out.clusters_missing_n) +
                          " clusters without N use the bound (N_max - M) / N_max");
    } else {
      out.population_sizes_unavailable = true;
      out.notes.push_back("no population size observed; nonparticipation bounded by 1");
    }
  }
  if (out.missing_outcome_treated > 0 || out.missing_outcome_control > 0) {
    out.notes.push_back("missing-outcome fractions ignore dependence on (M, N)");
  }
  return out;
}

double bias_S(const SensitivitySpec& spec, const BiasComponents& comps, ScaleKind scale) {
  if (scale != ScaleKind::difference) {
    throw ValidationError("sensitivity analysis is only defined on the difference scale (got " + to_string(scale) + ")");
  }
  return comps.nonparticipation * spec.delta_diff + comps.missing_outcome_treated * spec.gamma1 -
         comps.missing_outcome_control * spec.gamma0;
}

SensitivitySpec split_gamma_contrast(double delta_diff, double contrast, double delta_hat) {
  const double s = delta_hat < 0 ? -1.0 : 1.0;
  return {delta_diff, s * contrast / 2.0, -s * contrast / 2.0};
}

namespace {

double critical_value(const EstimateResult& r) {
  if (r.scale != ScaleKind::difference) {
    throw ValidationError("sensitivity analysis is only defined on the difference scale (got " + to_string(r.scale) + ")");
  }
  if (!(r.se > 0)) throw ValidationError("sensitivity analysis needs a positive standard error");
  const double df = r.ci_df > 0 ? r.ci_df : std::numeric_limits<double>::infinity();
  return student_t_quantile(0.5 + r.level / 2.0, df);
}

}  // namespace

TippingPointResult tipping_point_search(const EstimateResult& result, const BiasComponents& comps,
                                        const std::vector<double>& delta_grid) {
  TippingPointResult out;
  out.quantile = critical_value(result);
  const double half_width = out.quantile * result.se;
  const double s = result.delta_hat < 0 ? -1.0 : 1.0;
  const double r_eff = 0.5 * (comps.missing_outcome_treated + comps.missing_outcome_control);
  for (double delta : delta_grid) {
    TippingPoint tp;
    tp.delta_diff = delta;
    if (std::abs(result.delta_hat) <= half_width) {
      tp.already_insignificant = true;
      tp.gamma_contrast = 0.0;
      out.points.push_back(tp);
      continue;
    }
    const double remaining = std::abs(result.delta_hat) - half_width - s * comps.nonparticipation * delta;
    if (remaining <= 0) {
      tp.gamma_contrast = 0.0;
    } else if (r_eff <= 0) {
      tp.finite = false;
      tp.gamma_contrast = std::numeric_limits<double>::infinity();
      out.notes.push_back("no finite tipping point in gamma at delta_diff = " + csv::format_double(delta));
    } else {
      tp.gamma_contrast = remaining / r_eff;
    }
    out.points.push_back(tp);
  }
  return out;
}

std::vector<SensitivityCell> sensitivity_grid(const EstimateResult& result, const BiasComponents& comps,
                                              const std::vector<double>& delta_grid,
                                              const std::vector<double>& gamma_grid) {
  const double half_width = critical_value(result) * result.se;
  std::vector<SensitivityCell> cells;
  cells.reserve(delta_grid.size() * gamma_grid.size());
  for (double delta : delta_grid) {
    for (double g : gamma_grid) {
      const auto spec = split_gamma_contrast(delta, g, result.delta_hat);
      SensitivityCell cell;
      cell.delta_diff = delta;
      cell.gamma1 = spec.gamma1;
      cell.gamma0 = spec.gamma0;
      cell.gamma_contrast = g;
      cell.corrected_estimate = result.delta_hat - bias_S(spec, comps);
      cell.significant = std::abs(cell.corrected_estimate) > half_width;
      cells.push_back(cell);
    }
  }
  return cells;
}

std::string tipping_csv(const TippingPointResult& result) {
  std::ostringstream out;
  out << "delta_diff,gamma_contrast,finite,already_insignificant\n";
  for (const auto& p : result.points) {
    out << csv::format_double(p.delta_diff) << ',' << (p.finite ? csv::format_double(p.gamma_contrast) : "Inf") << ','
        << (p.finite ? 1 : 0) << ',' << (p.already_insignificant ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string sensitivity_grid_csv(const std::vector<SensitivityCell>& cells) {
  std::ostringstream out;
  out << "delta_diff,gamma1,gamma0,corrected_estimate,significant\n";
  for (const auto& c : cells) {
    out << csv::format_double(c.delta_diff) << ',' << csv::format_double(c.gamma1) << ','
        << csv::format_double(c.gamma0) << ',' << csv::format_double(c.corrected_estimate) << ','
        << (c.significant ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace crt
