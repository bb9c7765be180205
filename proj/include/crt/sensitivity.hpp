#pragma once

#include <string>
#include <vector>

#include "crt/core_data.hpp"
#include "crt/estimator.hpp"

namespace crt {

struct BiasComponents {
  double nonparticipation = 0.0;             // E[(N - M) / N], conservative when N is missing
  double nonparticipation_optimistic = 0.0;  // same, with missing-N clusters contributing 0
  double missing_outcome_treated = 0.0;      // r1
  double missing_outcome_control = 0.0;      // r0
  std::size_t clusters_missing_n = 0;
  bool population_sizes_unavailable = false;  // no N observed at all; conservative value is 1
  std::vector<std::string> notes;
};

BiasComponents estimate_bias_components(const TrialDataset& ds);

struct SensitivitySpec {
  double delta_diff = 0.0;  // delta1 - delta0
  double gamma1 = 0.0;
  double gamma0 = 0.0;
};

// S = E[(N - M) / N] (delta1 - delta0) + r1 gamma1 - r0 gamma0 on the
// difference scale. Throws ValidationError for other scales.
double bias_S(const SensitivitySpec& spec, const BiasComponents& comps, ScaleKind scale = ScaleKind::difference);

// A gamma contrast g is split as gamma1 = s g / 2, gamma0 = -s g / 2 with
// s = sign(delta_hat), so S moves the estimate towards zero.
SensitivitySpec split_gamma_contrast(double delta_diff, double contrast, double delta_hat);

struct TippingPoint {
  double delta_diff = 0.0;
  double gamma_contrast = 0.0;  // +infinity when no finite value exists
  bool finite = true;
  bool already_insignificant = false;
};

struct TippingPointResult {
  std::vector<TippingPoint> points;
  double quantile = 0.0;
  std::vector<std::string> notes;
};

TippingPointResult tipping_point_search(const EstimateResult& result, const BiasComponents& comps,
                                        const std::vector<double>& delta_grid);

struct SensitivityCell {
  double delta_diff = 0.0;
  double gamma1 = 0.0;
  double gamma0 = 0.0;
  double gamma_contrast = 0.0;
  double corrected_estimate = 0.0;
  bool significant = false;
};

// `gamma_grid` holds gamma contrasts; every (delta, gamma) pair is evaluated.
std::vector<SensitivityCell> sensitivity_grid(const EstimateResult& result, const BiasComponents& comps,
                                              const std::vector<double>& delta_grid,
                                              const std::vector<double>& gamma_grid);

std::string tipping_csv(const TippingPointResult& result);
std::string sensitivity_grid_csv(const std::vector<SensitivityCell>& cells);

}  // namespace crt
