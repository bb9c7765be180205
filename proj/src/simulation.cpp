#include "crt/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "crt/csv.hpp"
#include "crt/errors.hpp"
#include "crt/logistic.hpp"
#include "crt/sensitivity.hpp"

namespace crt {

namespace {

constexpr std::uint64_t kTagCluster = 0x6e6;
constexpr std::uint64_t kTagSampling = 0x5a3;
constexpr std::uint64_t kTagCrossFit = 0xcf1;

bool bernoulli(Philox4x32& rng, double p) { return uniform01(rng) < p; }

std::string cluster_name(std::size_t i) { return "k" + std::to_string(i + 1); }

}  // namespace

GeneratedCluster generate_cluster(double p_m, Philox4x32& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  GeneratedCluster g;
  g.n = 10 + static_cast<int>(uniform01(rng) * 81.0);
  const double center = g.n / 10.0;
  g.c = center + normal(rng);
  const double base = logit(1.0 - p_m);
  g.r_c = bernoulli(rng, expit(base + (g.c - center) / 2.0));
  g.a = bernoulli(rng, 0.5) ? 1 : 0;

  const auto n = static_cast<std::size_t>(g.n);
  g.x1.resize(n);
  double x1_sum = 0.0;
  for (auto& v : g.x1) {
    v = bernoulli(rng, g.n / 100.0) ? 1.0 : 0.0;
    x1_sum += v;
  }
  const double x1_mean = x1_sum / g.n;
  g.c_shift = normal(rng);
  g.b.resize(n);
  g.x2.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    g.b[j] = g.c * x1_mean + normal(rng);
    g.x2[j] = g.b[j] + (g.c > 0 ? g.c_shift : 0.0);
  }
  g.r_x1.resize(n);
  g.r_x2.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    g.r_x1[j] = bernoulli(rng, 1.0 - p_m);
    g.r_x2[j] = bernoulli(rng, expit(base + (g.c - center) / 2.0));
  }
  g.gamma = normal(rng);
  g.eps.resize(n);
  g.y.resize(n);
  g.r_y.resize(n);
  const double ry_base = logit(0.99 - 0.2 * p_m);
  const double ry_slope = 1.5 + 5.0 * p_m;
  for (std::size_t j = 0; j < n; ++j) {
    g.eps[j] = normal(rng);
    const double r1x1 = g.r_x1[j] ? g.x1[j] : 0.0;
    const double r2 = g.r_x2[j] ? 1.0 : 0.0;
    g.y[j] = 0.1 * ((g.r_c ? g.c : 0.0) - 1.0) * std::exp(r1x1) * std::abs(r2 * (g.x2[j] + 1.0)) +
             10.0 * r1x1 * g.a + g.gamma + g.eps[j];
    g.r_y[j] = bernoulli(rng, expit(ry_base - ry_slope * r1x1));
  }
  g.enrolled.resize(n);
  for (int j = 0; j < g.n; ++j) g.enrolled[static_cast<std::size_t>(j)] = j;
  g.population_observed = true;
  return g;
}

std::vector<int> uniform_subset(int n, int k, Philox4x32& rng) {
  if (k < 0 || k > n) throw std::invalid_argument("uniform_subset: need 0 <= k <= n");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) idx[static_cast<std::size_t>(j)] = j;
  for (int t = 0; t < k; ++t) {
    const int pick = t + static_cast<int>(uniform01(rng) * (n - t));
    std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(pick)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

void apply_uniform_sampling(GeneratedCluster& cluster, Philox4x32& rng) {
  const int half = cluster.n / 2;
  const int lo = std::max(1, half - 3), hi = std::min(cluster.n, half + 2);
  if (lo > hi) throw std::logic_error("sampling range is empty");
  const int m = lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
  cluster.enrolled = uniform_subset(cluster.n, m, rng);
  cluster.population_observed = false;
}

double dgp_oracle_eta(const GeneratedCluster& g, int j, int a) {
  const auto u = static_cast<std::size_t>(j);
  const double r1x1 = g.r_x1[u] ? g.x1[u] : 0.0;
  const double r2 = g.r_x2[u] ? 1.0 : 0.0;
  const double r2x2 = g.r_x2[u] ? g.x2[u] : 0.0;
  return 0.1 * ((g.r_c ? g.c : 0.0) - 1.0) * std::exp(r1x1) * std::abs(r2x2 + r2) + 10.0 * r1x1 * a;
}

namespace {

TrialDataset project(const std::vector<GeneratedCluster>& latent, bool full_enrollment, bool reveal_n) {
  TrialDataset ds;
  ds.individual_covariate_names = {"x_1", "x_2"};
  ds.cluster_covariate_names = {"c_1"};
  ds.randomization_probability = 0.5;
  ds.full_enrollment = full_enrollment;
  ds.clusters.reserve(latent.size());
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const auto& g = latent[i];
    ClusterRecord c;
    c.cluster_id = cluster_name(i);
    c.treatment = g.a;
    c.cluster_covariates = {g.r_c ? CovariateValue::of(g.c) : CovariateValue::missing()};
    c.sampled_size = static_cast<int>(g.enrolled.size());
    c.population_size = (g.population_observed || reveal_n) ? CovariateValue::of(g.n) : CovariateValue::missing();
    c.individuals.reserve(g.enrolled.size());
    for (int j : g.enrolled) {
      const auto u = static_cast<std::size_t>(j);
      IndividualRecord ind;
      ind.outcome_observed = g.r_y[u];
      ind.outcome = g.r_y[u] ? g.y[u] : 0.0;
      ind.covariates = {g.r_x1[u] ? CovariateValue::of(g.x1[u]) : CovariateValue::missing(),
                        g.r_x2[u] ? CovariateValue::of(g.x2[u]) : CovariateValue::missing()};
      c.individuals.push_back(std::move(ind));
    }
    ds.clusters.push_back(std::move(c));
  }
  return ds;
}

}  // namespace

GeneratedTrial generate_trial(const ScenarioConfig& cfg, std::size_t replicate) {
  GeneratedTrial t;
  t.latent.reserve(cfg.m);
  std::size_t total = 0;
  for (std::size_t i = 0; i < cfg.m; ++i) {
    Philox4x32 rng(cfg.seed, stream_id(replicate, i, kTagCluster));
    auto g = generate_cluster(cfg.p_m, rng);
    if (cfg.sampling) {
      Philox4x32 srng(cfg.seed, stream_id(replicate, i, kTagSampling));
      apply_uniform_sampling(g, srng);
    }
    total += g.enrolled.size();
    t.latent.push_back(std::move(g));
  }
  t.observed = project(t.latent, !cfg.sampling, false);
  t.oracle_eta1.resize(static_cast<Eigen::Index>(total));
  t.oracle_eta0.resize(static_cast<Eigen::Index>(total));
  Eigen::Index row = 0;
  for (const auto& g : t.latent) {
    for (int j : g.enrolled) {
      t.oracle_eta1[row] = dgp_oracle_eta(g, j, 1);
      t.oracle_eta0[row] = dgp_oracle_eta(g, j, 0);
      ++row;
    }
  }
  return t;
}

TrialDataset reveal_population_sizes(const GeneratedTrial& trial) {
  return project(trial.latent, trial.observed.full_enrollment, true);
}

const std::vector<std::string>& simulation_estimators() {
  static const std::vector<std::string> names{"unadjusted",     "ipw",           "dr-pm",
                                              "dr-ml",          "ipw-cluster",   "ipw-cluster-tm",
                                              "dr-oracle-eta",  "dr-oracle-eta-tm", "dr-oracle-eta-misspec-kappa",
                                              "dr-main-eta"};
  return names;
}

AnalysisOptions preset_options(const std::string& name, const ScenarioConfig& cfg, const GeneratedTrial& trial,
                               std::size_t replicate) {
  AnalysisOptions o;
  o.mode = cfg.sampling ? SamplingMode::uniform_sampling : SamplingMode::full_enrollment;
  o.level = cfg.level;
  o.n_covariate_columns = cfg.n_covariate_columns;
  o.kappa_learner = cfg.kappa_learner;
  o.eta_learner = cfg.eta_learner;
  o.folds = cfg.folds;
  o.seed = stream_id(cfg.seed, replicate, kTagCrossFit);
  auto oracle = [&] {
    o.estimator = EstimatorTag::dr_pm;
    o.fixed_eta1 = trial.oracle_eta1;
    o.fixed_eta0 = trial.oracle_eta0;
    o.treatment_model = false;
  };
  if (name == "unadjusted") {
    o.estimator = EstimatorTag::unadjusted;
  } else if (name == "ipw") {
    o.estimator = EstimatorTag::ipw;
    o.ipw_target = IpwTarget::enrolled_individual_average;
  } else if (name == "dr-pm") {
    o.estimator = EstimatorTag::dr_pm;
    o.treatment_model = true;
  } else if (name == "dr-ml") {
    o.estimator = EstimatorTag::dr_ml;
    o.cluster_summaries = cfg.cluster_summaries;
  } else if (name == "ipw-cluster" || name == "ipw-cluster-tm") {
    o.estimator = EstimatorTag::ipw;
    o.ipw_target = IpwTarget::cluster_average;
    o.treatment_model = name == "ipw-cluster-tm";
  } else if (name == "dr-oracle-eta") {
    oracle();
  } else if (name == "dr-oracle-eta-tm") {
    oracle();
    o.treatment_model = true;
  } else if (name == "dr-oracle-eta-misspec-kappa") {
    oracle();
    o.kappa_columns = std::vector<std::string>{};
  } else if (name == "dr-main-eta") {
    o.estimator = EstimatorTag::dr_pm;
    o.treatment_model = false;
  } else {
    throw ValidationError("unknown simulation estimator '" + name + "'");
  }
  return o;
}

namespace {

template <class Job>
void parallel_for(std::size_t count, unsigned threads, Job job) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

ReplicateRecord run_one(const std::string& name, const ScenarioConfig& cfg, const GeneratedTrial& trial,
                        std::size_t replicate, EstimateResult* full = nullptr) {
  ReplicateRecord rec;
  rec.replicate = replicate;
  rec.estimator = name;
  try {
    const auto res = analyze(trial.observed, preset_options(name, cfg, trial, replicate));
    rec.ok = true;
    rec.delta_hat = res.estimate.delta_hat;
    rec.se = res.estimate.se;
    rec.ci_low = res.estimate.ci_low;
    rec.ci_high = res.estimate.ci_high;
    if (full) *full = res.estimate;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

void check_config(const ScenarioConfig& cfg) {
  if (!(cfg.p_m >= 0 && cfg.p_m < 1)) throw ValidationError("scenario: p_m must lie in [0, 1)");
  if (cfg.replicates < 1) throw ValidationError("scenario: replicates must be at least 1");
  if (cfg.m < 2) throw ValidationError("scenario: m must be at least 2");
  for (const auto& e : cfg.estimators) {
    const auto& known = simulation_estimators();
    if (std::find(known.begin(), known.end(), e) == known.end()) {
      throw ValidationError("scenario: unknown estimator '" + e + "'");
    }
  }
}

}  // namespace

std::vector<ReplicateRecord> run_replications(const ScenarioConfig& cfg, unsigned threads) {
  check_config(cfg);
  std::vector<std::vector<ReplicateRecord>> per(cfg.replicates);
  parallel_for(cfg.replicates, threads, [&](std::size_t r) {
    const auto trial = generate_trial(cfg, r);
    for (const auto& name : cfg.estimators) per[r].push_back(run_one(name, cfg, trial, r));
  });
  std::vector<ReplicateRecord> out;
  out.reserve(cfg.replicates * cfg.estimators.size());
  for (auto& v : per) {
    for (auto& rec : v) out.push_back(std::move(rec));
  }
  return out;
}

std::vector<MetricsSummary> summarize_metrics(const std::vector<ReplicateRecord>& records, double truth,
                                              const std::vector<std::string>& estimators) {
  std::vector<MetricsSummary> out;
  for (const auto& name : estimators) {
    MetricsSummary s;
    s.estimator = name;
    std::vector<double> est, se;
    std::size_t covered = 0;
    for (const auto& r : records) {
      if (r.estimator != name) continue;
      if (!r.ok) {
        ++s.failures;
        continue;
      }
      est.push_back(r.delta_hat);
      se.push_back(r.se);
      covered += (r.ci_low <= truth && truth <= r.ci_high);
    }
    s.replicates = est.size();
    const double R = static_cast<double>(est.size());
    if (est.size() >= 1) {
      double mean = 0.0, mean_se = 0.0;
      for (std::size_t k = 0; k < est.size(); ++k) {
        mean += est[k];
        mean_se += se[k];
      }
      mean /= R;
      mean_se /= R;
      double ss = 0.0, ss_se = 0.0;
      for (std::size_t k = 0; k < est.size(); ++k) {
        ss += (est[k] - mean) * (est[k] - mean);
        ss_se += (se[k] - mean_se) * (se[k] - mean_se);
      }
      s.bias = mean - truth;
      s.ese = est.size() > 1 ? std::sqrt(ss / (R - 1)) : 0.0;
      s.ase = mean_se;
      s.cp = static_cast<double>(covered) / R;
      s.bias_mcse = s.ese / std::sqrt(R);
      s.ese_mcse = est.size() > 1 ? s.ese / std::sqrt(2.0 * (R - 1)) : 0.0;
      s.ase_mcse = est.size() > 1 ? std::sqrt(ss_se / (R - 1)) / std::sqrt(R) : 0.0;
      s.cp_mcse = std::sqrt(s.cp * (1 - s.cp) / R);
    }
    out.push_back(s);
  }
  return out;
}

namespace {

std::string fmt(double v) { return csv::format_double(v); }

std::string scenario_prefix(const ScenarioConfig& cfg) {
  return std::to_string(cfg.m) + ',' + fmt(cfg.p_m) + ',' + (cfg.sampling ? "1" : "0");
}

}  // namespace

std::string metrics_csv(const ScenarioConfig& cfg, const std::vector<MetricsSummary>& metrics) {
  std::ostringstream out;
  out << "m,p_m,sampling,estimator,status,bias,ese,ase,cp,replicates,failures,bias_mcse,ese_mcse,ase_mcse,cp_mcse\n";
  for (const auto& s : metrics) {
    out << scenario_prefix(cfg) << ',' << s.estimator << ',' << (s.replicates ? "ok" : "failed") << ','
        << fmt(s.bias) << ',' << fmt(s.ese) << ',' << fmt(s.ase) << ',' << fmt(s.cp) << ',' << s.replicates << ','
        << s.failures << ',' << fmt(s.bias_mcse) << ',' << fmt(s.ese_mcse) << ',' << fmt(s.ase_mcse) << ','
        << fmt(s.cp_mcse) << '\n';
  }
  out << scenario_prefix(cfg) << ",dr-aug-gee,not_implemented,NA,NA,NA,NA,0,0,NA,NA,NA,NA\n";
  return out.str();
}

std::string raw_replicates_csv(const ScenarioConfig& cfg, const std::vector<ReplicateRecord>& records) {
  std::ostringstream out;
  out << "replicate,estimator,status,delta_hat,se,ci_low,ci_high,truth,error\n";
  for (const auto& r : records) {
    out << r.replicate << ',' << r.estimator << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      out << fmt(r.delta_hat) << ',' << fmt(r.se) << ',' << fmt(r.ci_low) << ',' << fmt(r.ci_high);
    } else {
      out << "NA,NA,NA,NA";
    }
    out << ',' << fmt(cfg.truth()) << ',' << csv::escape(r.error) << '\n';
  }
  return out.str();
}

SensitivityStudy sensitivity_replication(const ScenarioConfig& cfg, unsigned threads) {
  check_config(cfg);
  struct PerReplicate {
    std::vector<ReplicateRecord> estimates;
    std::vector<TippingRecord> tipping;
  };
  std::vector<PerReplicate> per(cfg.replicates);
  parallel_for(cfg.replicates, threads, [&](std::size_t r) {
    const auto trial = generate_trial(cfg, r);
    const auto comps = estimate_bias_components(reveal_population_sizes(trial));
    for (const auto& name : cfg.estimators) {
      EstimateResult est;
      auto rec = run_one(name, cfg, trial, r, &est);
      if (rec.ok) {
        const auto tp = tipping_point_search(est, comps, cfg.delta_grid);
        for (const auto& p : tp.points) per[r].tipping.push_back({r, name, p.delta_diff, p.gamma_contrast, p.finite});
      }
      per[r].estimates.push_back(std::move(rec));
    }
  });
  SensitivityStudy study;
  for (auto& p : per) {
    for (auto& e : p.estimates) study.estimates.push_back(std::move(e));
    for (auto& t : p.tipping) study.records.push_back(t);
  }
  for (const auto& name : cfg.estimators) {
    for (double delta : cfg.delta_grid) {
      TippingSummary s;
      s.estimator = name;
      s.delta_diff = delta;
      std::vector<double> v;
      for (const auto& t : study.records) {
        if (t.estimator != name || t.delta_diff != delta) continue;
        if (!t.finite) {
          ++s.infinite;
          continue;
        }
        v.push_back(t.gamma_contrast);
      }
      s.replicates = v.size();
      if (!v.empty()) {
        double mean = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0;
        for (double x : v) ss += (x - mean) * (x - mean);
        s.mean = mean;
        s.se = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
      }
      study.summary.push_back(s);
    }
  }
  return study;
}

std::string tipping_summary_csv(const ScenarioConfig& cfg, const std::vector<TippingSummary>& summary) {
  std::ostringstream out;
  out << "m,p_m,sampling,estimator,delta_diff,mean_tipping,se_tipping,replicates,infinite\n";
  for (const auto& s : summary) {
    out << scenario_prefix(cfg) << ',' << s.estimator << ',' << fmt(s.delta_diff) << ',' << fmt(s.mean) << ','
        << fmt(s.se) << ',' << s.replicates << ',' << s.infinite << '\n';
  }
  return out.str();
}

}  // namespace crt
