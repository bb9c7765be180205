#include "crt/config.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "crt/errors.hpp"

namespace crt {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ValidationError(where + ": unknown field '" + key + "'");
  }
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void read(const json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key) && !j.at(key).is_null()) out = get<T>(j, key, where);
}

std::vector<std::string> string_list(const json& j, const std::string& key, const std::string& where) {
  return get<std::vector<std::string>>(j, key, where);
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

LearnerSpec parse_learner(const json& j, LearnerTarget target) {
  const std::string where = "learner";
  check_keys(j, {"kind", "ridge_lambda", "trees", "max_depth", "min_leaf", "mtry_fraction", "bins", "k",
                 "treatment_interactions", "stratify_by_treatment", "members", "validation_fraction"},
             where);
  LearnerSpec s;
  s.target = target;
  s.kind = learner_kind_from_string(get<std::string>(j, "kind", where));
  read(j, "ridge_lambda", s.ridge_lambda, where);
  read(j, "trees", s.forest.trees, where);
  read(j, "max_depth", s.forest.max_depth, where);
  read(j, "min_leaf", s.forest.min_leaf, where);
  read(j, "mtry_fraction", s.forest.mtry_fraction, where);
  read(j, "bins", s.forest.bins, where);
  read(j, "k", s.k, where);
  read(j, "treatment_interactions", s.treatment_interactions, where);
  read(j, "stratify_by_treatment", s.stratify_by_treatment, where);
  read(j, "validation_fraction", s.validation_fraction, where);
  if (j.contains("members")) {
    for (const auto& m : j.at("members")) s.members.push_back(parse_learner(m, target));
  }
  if (s.kind == LearnerKind::ensemble && s.members.empty()) throw ValidationError("learner: ensemble needs members");
  return s;
}

AnalysisConfig parse_analysis_config(const json& j, const std::string& base_dir) {
  const std::string where = "config";
  check_keys(j, {"data", "schema", "randomization_probability", "full_enrollment", "estimator", "scale",
                 "sampling_mode", "weights", "level", "propensity_floor", "imputation_constant", "kappa", "eta",
                 "treatment_model", "ipw_target", "crossfit", "seed", "small_sample_correction",
                 "n_covariate_columns", "sensitivity"},
             where);
  AnalysisConfig c;
  if (j.contains("data")) {
    std::filesystem::path p(get<std::string>(j, "data", where));
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    c.data_path = p.string();
  }
  if (j.contains("schema")) {
    const auto& s = j.at("schema");
    check_keys(s, {"cluster_id", "treatment", "outcome", "sampled_size", "population_size", "individual_covariates",
                   "cluster_covariates"},
               "schema");
    read(s, "cluster_id", c.schema.cluster_id, "schema");
    read(s, "treatment", c.schema.treatment, "schema");
    read(s, "outcome", c.schema.outcome, "schema");
    read(s, "sampled_size", c.schema.sampled_size, "schema");
    read(s, "population_size", c.schema.population_size, "schema");
    if (s.contains("individual_covariates")) c.schema.individual_covariates = string_list(s, "individual_covariates", "schema");
    if (s.contains("cluster_covariates")) c.schema.cluster_covariates = string_list(s, "cluster_covariates", "schema");
  }
  read(j, "randomization_probability", c.randomization_probability, where);
  read(j, "full_enrollment", c.full_enrollment, where);

  auto& o = c.options;
  if (j.contains("estimator")) o.estimator = estimator_from_string(get<std::string>(j, "estimator", where));
  if (j.contains("scale")) o.scale = scale_from_string(get<std::string>(j, "scale", where));
  if (j.contains("sampling_mode")) {
    o.mode = sampling_mode_from_string(get<std::string>(j, "sampling_mode", where));
  } else {
    o.mode = c.full_enrollment ? SamplingMode::full_enrollment : SamplingMode::uniform_sampling;
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, {"kind", "rho"}, "weights");
    const auto kind = get<std::string>(w, "kind", "weights");
    if (kind == "constant") o.weights.kind = WeightKind::constant;
    else if (kind == "exchangeable") o.weights.kind = WeightKind::exchangeable;
    else throw ValidationError("weights.kind must be 'constant' or 'exchangeable'");
    read(w, "rho", o.weights.rho, "weights");
  }
  read(j, "level", o.level, where);
  read(j, "propensity_floor", o.propensity_floor, where);
  read(j, "imputation_constant", o.imputation_constant, where);

  o.kappa_learner = default_ml_learner(LearnerTarget::kappa);
  o.eta_learner = default_ml_learner(LearnerTarget::eta);
  if (j.contains("kappa")) {
    const auto& k = j.at("kappa");
    check_keys(k, {"columns", "treatment_interactions", "learner"}, "kappa");
    if (k.contains("columns")) o.kappa_columns = string_list(k, "columns", "kappa");
    read(k, "treatment_interactions", o.kappa_treatment_interactions, "kappa");
    if (k.contains("learner")) o.kappa_learner = parse_learner(k.at("learner"), LearnerTarget::kappa);
  }
  if (j.contains("eta")) {
    const auto& e = j.at("eta");
    check_keys(e, {"columns", "treatment_interactions", "family", "correlation", "learner"}, "eta");
    if (e.contains("columns")) o.eta_columns = string_list(e, "columns", "eta");
    read(e, "treatment_interactions", o.eta_treatment_interactions, "eta");
    if (e.contains("family")) {
      const auto f = get<std::string>(e, "family", "eta");
      if (f == "gaussian") o.outcome_family = Family::gaussian_identity;
      else if (f == "binomial") o.outcome_family = Family::binomial_logit;
      else throw ValidationError("eta.family must be 'gaussian' or 'binomial'");
    }
    if (e.contains("correlation")) {
      const auto r = get<std::string>(e, "correlation", "eta");
      if (r == "independence") o.outcome_correlation = CorrelationKind::independence;
      else if (r == "exchangeable") o.outcome_correlation = CorrelationKind::exchangeable;
      else throw ValidationError("eta.correlation must be 'independence' or 'exchangeable'");
    }
    if (e.contains("learner")) o.eta_learner = parse_learner(e.at("learner"), LearnerTarget::eta);
  }
  if (j.contains("treatment_model")) o.treatment_model = get<bool>(j, "treatment_model", where);
  if (j.contains("ipw_target")) {
    const auto t = get<std::string>(j, "ipw_target", where);
    if (t == "individual-average") o.ipw_target = IpwTarget::enrolled_individual_average;
    else if (t == "cluster-average") o.ipw_target = IpwTarget::cluster_average;
    else throw ValidationError("ipw_target must be 'individual-average' or 'cluster-average'");
  }
  if (j.contains("crossfit")) {
    const auto& x = j.at("crossfit");
    check_keys(x, {"folds", "cluster_summaries"}, "crossfit");
    if (x.contains("folds")) o.folds = get<std::size_t>(x, "folds", "crossfit");
    if (x.contains("cluster_summaries")) o.cluster_summaries = get<bool>(x, "cluster_summaries", "crossfit");
  }
  if (j.contains("seed") && !j.at("seed").is_null()) {
    o.seed = get<std::uint64_t>(j, "seed", where);
    c.seed_given = true;
  } else {
    o.seed = fresh_seed();
  }
  read(j, "small_sample_correction", o.small_sample_correction, where);
  if (j.contains("n_covariate_columns")) o.n_covariate_columns = get<std::size_t>(j, "n_covariate_columns", where);

  if (j.contains("sensitivity")) {
    const auto& s = j.at("sensitivity");
    check_keys(s, {"delta_grid", "gamma_grid", "components"}, "sensitivity");
    read(s, "delta_grid", c.sensitivity.delta_grid, "sensitivity");
    read(s, "gamma_grid", c.sensitivity.gamma_grid, "sensitivity");
    if (s.contains("components")) {
      const auto& k = s.at("components");
      check_keys(k, {"nonparticipation", "missing_outcome_treated", "missing_outcome_control"}, "components");
      BiasComponents b;
      b.nonparticipation = get<double>(k, "nonparticipation", "components");
      b.nonparticipation_optimistic = b.nonparticipation;
      b.missing_outcome_treated = get<double>(k, "missing_outcome_treated", "components");
      b.missing_outcome_control = get<double>(k, "missing_outcome_control", "components");
      for (double v : {b.nonparticipation, b.missing_outcome_treated, b.missing_outcome_control}) {
        if (!(v >= 0 && v <= 1)) throw ValidationError("sensitivity components must lie in [0, 1]");
      }
      b.notes.push_back("components supplied by configuration");
      c.sensitivity.components = b;
    }
    for (const auto* grid : {&c.sensitivity.delta_grid, &c.sensitivity.gamma_grid}) {
      for (std::size_t i = 1; i < grid->size(); ++i) {
        if (!((*grid)[i] > (*grid)[i - 1])) throw ValidationError("sensitivity grids must be strictly increasing");
      }
    }
  }
  if (c.sensitivity.gamma_grid.empty()) {
    for (int i = 0; i <= 40; ++i) c.sensitivity.gamma_grid.push_back(0.25 * i);
  }
  return c;
}

AnalysisConfig load_analysis_config(const std::string& path) {
  const auto j = read_json_file(path);
  return parse_analysis_config(j, std::filesystem::path(path).parent_path().string());
}

ScenarioFile parse_scenario(const json& j) {
  const std::string where = "scenario";
  check_keys(j, {"m", "p_m", "sampling", "seed", "replicates", "estimators", "folds", "cluster_summaries", "kappa_learner", "eta_learner",
                 "n_covariate_columns", "level", "delta_grid", "max_failure_rate", "sensitivity_study"},
             where);
  ScenarioFile f;
  auto& s = f.scenario;
  read(j, "m", s.m, where);
  read(j, "p_m", s.p_m, where);
  read(j, "sampling", s.sampling, where);
  read(j, "seed", s.seed, where);
  read(j, "replicates", s.replicates, where);
  if (j.contains("estimators")) s.estimators = string_list(j, "estimators", where);
  if (j.contains("folds")) s.folds = get<std::size_t>(j, "folds", where);
  if (j.contains("cluster_summaries")) s.cluster_summaries = get<bool>(j, "cluster_summaries", where);
  if (j.contains("kappa_learner")) s.kappa_learner = parse_learner(j.at("kappa_learner"), LearnerTarget::kappa);
  if (j.contains("eta_learner")) s.eta_learner = parse_learner(j.at("eta_learner"), LearnerTarget::eta);
  read(j, "n_covariate_columns", s.n_covariate_columns, where);
  read(j, "level", s.level, where);
  read(j, "delta_grid", s.delta_grid, where);
  read(j, "max_failure_rate", s.max_failure_rate, where);
  read(j, "sensitivity_study", f.sensitivity_study, where);
  if (!(s.p_m >= 0 && s.p_m < 1)) throw ValidationError("scenario.p_m must lie in [0, 1)");
  if (s.replicates < 1) throw ValidationError("scenario.replicates must be at least 1");
  if (s.m < 2) throw ValidationError("scenario.m must be at least 2");
  return f;
}

ScenarioFile load_scenario(const std::string& path) { return parse_scenario(read_json_file(path)); }

json estimate_json(const EstimateResult& e) {
  return {{"estimator", to_string(e.estimator)},
          {"scale", to_string(e.scale)},
          {"delta_hat", e.delta_hat},
          {"mu1_hat", e.mu1_hat},
          {"mu0_hat", e.mu0_hat},
          {"se", e.se},
          {"variance_uncorrected", e.variance_uncorrected},
          {"correction_factor", e.correction_factor},
          {"ci_low", e.ci_low},
          {"ci_high", e.ci_high},
          {"ci_df", e.ci_df},
          {"level", e.level},
          {"m", e.m}};
}

EstimateResult estimate_from_json(const json& j) {
  const std::string where = "estimate";
  EstimateResult e;
  if (j.contains("estimator")) e.estimator = estimator_from_string(get<std::string>(j, "estimator", where));
  if (j.contains("scale")) e.scale = scale_from_string(get<std::string>(j, "scale", where));
  e.delta_hat = get<double>(j, "delta_hat", where);
  e.se = get<double>(j, "se", where);
  read(j, "mu1_hat", e.mu1_hat, where);
  read(j, "mu0_hat", e.mu0_hat, where);
  read(j, "level", e.level, where);
  read(j, "m", e.m, where);
  // A missing or null df means the normal limit.
  e.ci_df = std::numeric_limits<double>::infinity();
  read(j, "ci_df", e.ci_df, where);
  read(j, "ci_low", e.ci_low, where);
  read(j, "ci_high", e.ci_high, where);
  return e;
}

json diagnostics_json(const AnalysisDiagnostics& d) {
  return {{"design_columns", d.design_columns},
          {"dropped_columns", d.dropped_columns},
          {"kappa", {{"source", d.kappa_source},
                     {"terms", d.kappa_terms},
                     {"converged", d.kappa_converged},
                     {"iterations", d.kappa_iterations},
                     {"min", d.kappa_min},
                     {"max", d.kappa_max},
                     {"clipped", d.kappa_clipped}}},
          {"eta", {{"source", d.eta_source},
                   {"terms", d.eta_terms},
                   {"converged", d.eta_converged},
                   {"iterations", d.eta_iterations},
                   {"rho", d.rho},
                   {"rho_truncated", d.rho_truncated}}},
          {"treatment", {{"modeled", d.treatment_modeled},
                         {"fallback", d.treatment_fallback},
                         {"terms", d.treatment_terms},
                         {"pi_min", d.pi_min},
                         {"pi_max", d.pi_max}}},
          {"folds", d.folds},
          {"max_abs_mean_psi", d.max_abs_mean_psi},
          {"bread_condition", d.bread_condition},
          {"n_covariate_columns", d.n_covariate_columns},
          {"flagged_clusters", d.flagged_clusters},
          {"warnings", d.warnings}};
}

namespace {

json range_json(const RangeSummary& r) {
  return {{"count", r.count}, {"min", r.min}, {"mean", r.mean}, {"max", r.max}};
}

json arm_json(const ArmSummary& a) {
  return {{"clusters", a.clusters}, {"individuals", a.individuals}, {"outcome_missing_rate", a.outcome_missing_rate}};
}

}  // namespace

json dataset_summary_json(const DatasetSummary& s) {
  return {{"treated", arm_json(s.treated)},
          {"control", arm_json(s.control)},
          {"outcome_missing_rate", s.outcome_missing_rate},
          {"individual_covariate_missing_rate", s.individual_covariate_missing_rate},
          {"cluster_covariate_missing_rate", s.cluster_covariate_missing_rate},
          {"sampled_size", range_json(s.sampled_size)},
          {"observed_population_size", range_json(s.observed_population_size)}};
}

json bias_components_json(const BiasComponents& c) {
  return {{"nonparticipation", c.nonparticipation},
          {"nonparticipation_optimistic", c.nonparticipation_optimistic},
          {"missing_outcome_treated", c.missing_outcome_treated},
          {"missing_outcome_control", c.missing_outcome_control},
          {"clusters_missing_n", c.clusters_missing_n},
          {"population_sizes_unavailable", c.population_sizes_unavailable},
          {"notes", c.notes}};
}

json tipping_json(const TippingPointResult& t) {
  json points = json::array();
  for (const auto& p : t.points) {
    points.push_back({{"delta_diff", p.delta_diff},
                      {"gamma_contrast", p.finite ? json(p.gamma_contrast) : json(nullptr)},
                      {"finite", p.finite},
                      {"already_insignificant", p.already_insignificant}});
  }
  return {{"quantile", t.quantile}, {"points", points}, {"notes", t.notes}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace crt
