#include "crt/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "crt/csv.hpp"

namespace crt {

std::size_t TrialDataset::total_individuals() const {
  std::size_t n = 0;
  for (const auto& c : clusters) n += c.individuals.size();
  return n;
}

std::optional<std::size_t> ExpandedDesign::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns.begin());
}

namespace {

bool starts_with(const std::string& s, const char* prefix) {
  return s.rfind(prefix, 0) == 0;
}

struct ColumnLookup {
  std::unordered_map<std::string, std::size_t> index;

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

CovariateValue parse_covariate(const std::string& field, bool& bad) {
  if (csv::is_missing_token(field)) return CovariateValue::missing();
  auto v = csv::parse_double(field);
  if (!v) {
    bad = true;
    return CovariateValue::missing();
  }
  return CovariateValue::of(*v);
}

}  // namespace

TrialDataset parse_csv(const std::string& text, const CsvSchema& schema,
                       double randomization_probability, bool full_enrollment) {
  const auto rows = csv::parse(text);
  if (rows.empty()) throw ValidationError("csv: missing header row");

  const auto& header = rows.front();
  ColumnLookup cols;
  for (std::size_t j = 0; j < header.size(); ++j) cols.index.emplace(header[j], j);

  std::vector<ValidationIssue> issues;
  auto require = [&](const std::string& name) -> std::size_t {
    auto idx = cols.find(name);
    if (!idx) {
      issues.push_back({"", name, "missing column", "required column '" + name + "' not found"});
      return 0;
    }
    return *idx;
  };
  const std::size_t id_col = require(schema.cluster_id);
  const std::size_t trt_col = require(schema.treatment);
  const std::size_t y_col = require(schema.outcome);
  const std::size_t m_col = require(schema.sampled_size);
  const auto n_col = cols.find(schema.population_size);

  std::vector<std::string> x_names = schema.individual_covariates;
  std::vector<std::string> c_names = schema.cluster_covariates;
  if (x_names.empty() && c_names.empty()) {
    for (const auto& h : header) {
      if (starts_with(h, "x_")) x_names.push_back(h);
      if (starts_with(h, "c_")) c_names.push_back(h);
    }
  }
  std::vector<std::size_t> x_cols, c_cols;
  for (const auto& n : x_names) x_cols.push_back(require(n));
  for (const auto& n : c_names) c_cols.push_back(require(n));
  if (!issues.empty()) {
    const std::string what = "csv: " + issues.front().message;
    throw ValidationError(what, std::move(issues));
  }

  TrialDataset ds;
  ds.individual_covariate_names = x_names;
  ds.cluster_covariate_names = c_names;
  ds.randomization_probability = randomization_probability;
  ds.full_enrollment = full_enrollment;

  std::unordered_map<std::string, std::size_t> cluster_pos;
  std::vector<std::optional<double>> declared_m;
  std::vector<bool> m_reported;

  auto issue = [&](const std::string& cid, const std::string& col, const std::string& kind,
                   const std::string& msg) {
    issues.push_back({cid, col, kind, "cluster '" + cid + "', column '" + col + "': " + msg});
  };

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != header.size()) {
      issues.push_back({"", "", "malformed row",
                        "row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                            " fields, header has " + std::to_string(header.size())});
      continue;
    }
    const std::string& cid = row[id_col];
    auto [it, inserted] = cluster_pos.emplace(cid, ds.clusters.size());
    const bool first = inserted;
    if (first) {
      ds.clusters.emplace_back();
      ds.clusters.back().cluster_id = cid;
      declared_m.emplace_back();
      m_reported.push_back(false);
    }
    ClusterRecord& cl = ds.clusters[it->second];

    // Treatment.
    int trt = -1;
    if (auto v = csv::parse_double(row[trt_col]); v && (*v == 0.0 || *v == 1.0)) {
      trt = static_cast<int>(*v);
    } else {
      issue(cid, schema.treatment, "non-binary treatment", "treatment must be 0 or 1, got '" + row[trt_col] + "'");
    }
    if (first) {
      cl.treatment = trt;
    } else if (trt >= 0 && cl.treatment >= 0 && cl.treatment != trt) {
      issue(cid, schema.treatment, "inconsistent cluster constant", "treatment differs across rows");
      cl.treatment = -2;
    }

    // Sampled size M.
    std::optional<double> mval = csv::parse_double(row[m_col]);
    if (!mval || *mval < 1 || std::floor(*mval) != *mval) {
      issue(cid, schema.sampled_size, "invalid sampled size", "M must be a positive integer, got '" + row[m_col] + "'");
    } else if (first) {
      declared_m[it->second] = mval;
    } else if (declared_m[it->second] && *declared_m[it->second] != *mval && !m_reported[it->second]) {
      issue(cid, schema.sampled_size, "inconsistent cluster constant", "M differs across rows");
      m_reported[it->second] = true;
    }

    // Population size N.
    CovariateValue nval = CovariateValue::missing();
    if (n_col) {
      bool bad = false;
      nval = parse_covariate(row[*n_col], bad);
      if (bad || (nval.observed && (nval.value < 1 || std::floor(nval.value) != nval.value))) {
        issue(cid, schema.population_size, "invalid population size", "N must be a positive integer or NA");
        nval = CovariateValue::missing();
      }
    }
    if (first) {
      cl.population_size = nval;
    } else if (!(cl.population_size == nval)) {
      issue(cid, schema.population_size, "inconsistent cluster constant", "N differs across rows");
    }

    // Cluster covariates.
    std::vector<CovariateValue> cvals;
    for (std::size_t l = 0; l < c_cols.size(); ++l) {
      bool bad = false;
      cvals.push_back(parse_covariate(row[c_cols[l]], bad));
      if (bad) issue(cid, c_names[l], "non-numeric value", "cannot parse '" + row[c_cols[l]] + "'");
    }
    if (first) {
      cl.cluster_covariates = cvals;
    } else {
      for (std::size_t l = 0; l < cvals.size(); ++l) {
        if (!(cvals[l] == cl.cluster_covariates[l])) {
          issue(cid, c_names[l], "inconsistent cluster constant", "cluster covariate differs across rows");
        }
      }
    }

    // Individual.
    IndividualRecord ind;
    {
      bool bad = false;
      CovariateValue y = parse_covariate(row[y_col], bad);
      if (bad) issue(cid, schema.outcome, "non-numeric value", "cannot parse outcome '" + row[y_col] + "'");
      ind.outcome_observed = y.observed;
      ind.outcome = y.observed ? y.value : 0.0;
    }
    for (std::size_t k = 0; k < x_cols.size(); ++k) {
      bool bad = false;
      ind.covariates.push_back(parse_covariate(row[x_cols[k]], bad));
      if (bad) issue(cid, x_names[k], "non-numeric value", "cannot parse '" + row[x_cols[k]] + "'");
    }
    cl.individuals.push_back(std::move(ind));
  }

  for (std::size_t i = 0; i < ds.clusters.size(); ++i) {
    auto& cl = ds.clusters[i];
    if (!declared_m[i]) continue;
    cl.sampled_size = static_cast<int>(*declared_m[i]);
    if (static_cast<std::size_t>(cl.sampled_size) != cl.individuals.size()) {
      issue(cl.cluster_id, schema.sampled_size, "size mismatch",
            "M=" + std::to_string(cl.sampled_size) + " but " + std::to_string(cl.individuals.size()) +
                " rows present");
    }
    if (full_enrollment && !cl.population_size.observed) {
      cl.population_size = CovariateValue::of(cl.sampled_size);
    }
  }

  if (!issues.empty()) {
    const std::string what = "csv validation failed: " + issues.front().message;
    throw ValidationError(what, std::move(issues));
  }
  return ds;
}

TrialDataset load_csv(const std::string& path, const CsvSchema& schema,
                      double randomization_probability, bool full_enrollment) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema, randomization_probability, full_enrollment);
}

std::string to_csv(const TrialDataset& ds) {
  const CsvSchema schema;
  std::ostringstream out;
  out << schema.cluster_id << ',' << schema.treatment << ',' << schema.outcome << ','
      << schema.sampled_size << ',' << schema.population_size;
  for (const auto& n : ds.individual_covariate_names) out << ',' << csv::escape(n);
  for (const auto& n : ds.cluster_covariate_names) out << ',' << csv::escape(n);
  out << '\n';
  auto cell = [](const CovariateValue& v) { return v.observed ? csv::format_double(v.value) : std::string("NA"); };
  for (const auto& cl : ds.clusters) {
    for (const auto& ind : cl.individuals) {
      out << csv::escape(cl.cluster_id) << ',' << cl.treatment << ','
          << (ind.outcome_observed ? csv::format_double(ind.outcome) : std::string("NA")) << ','
          << cl.sampled_size << ',' << cell(cl.population_size);
      for (const auto& x : ind.covariates) out << ',' << cell(x);
      for (const auto& c : cl.cluster_covariates) out << ',' << cell(c);
      out << '\n';
    }
  }
  return out.str();
}

void write_csv(const TrialDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << to_csv(ds);
}

ExpandedDesign expand_missing_indicators(const TrialDataset& ds, const ExpansionOptions& options) {
  const std::size_t p = ds.p();
  const std::size_t q = ds.q();
  const double c = options.imputation_constant;

  ExpandedDesign d;
  for (const auto& n : ds.individual_covariate_names) {
    d.columns.push_back(n + ".obs");
    d.columns.push_back(n + ".val");
  }
  for (const auto& n : ds.cluster_covariate_names) {
    d.columns.push_back(n + ".obs");
    d.columns.push_back(n + ".val");
  }
  d.columns.push_back("N.obs");
  d.columns.push_back("N.val");
  d.columns.push_back("M");
  if (options.include_cluster_means) {
    for (const auto& n : ds.individual_covariate_names) {
      d.columns.push_back(n + ".cmean_obs");
      d.columns.push_back(n + ".cmean_val");
    }
  }

  d.rows.resize(static_cast<Eigen::Index>(ds.total_individuals()),
                static_cast<Eigen::Index>(d.columns.size()));
  d.cluster_offsets.reserve(ds.m() + 1);
  d.cluster_offsets.push_back(0);

  auto pair = [c](const CovariateValue& v) -> std::pair<double, double> {
    return v.observed ? std::pair{1.0, v.value} : std::pair{0.0, c};
  };

  Eigen::Index r = 0;
  std::vector<double> obs_count(p), obs_sum(p);
  for (const auto& cl : ds.clusters) {
    std::fill(obs_count.begin(), obs_count.end(), 0.0);
    std::fill(obs_sum.begin(), obs_sum.end(), 0.0);
    if (options.include_cluster_means) {
      for (const auto& ind : cl.individuals) {
        for (std::size_t k = 0; k < p; ++k) {
          if (ind.covariates[k].observed) {
            obs_count[k] += 1.0;
            obs_sum[k] += ind.covariates[k].value;
          }
        }
      }
    }
    const double msize = static_cast<double>(cl.individuals.size());
    for (const auto& ind : cl.individuals) {
      Eigen::Index col = 0;
      for (std::size_t k = 0; k < p; ++k) {
        auto [o, v] = pair(ind.covariates[k]);
        d.rows(r, col++) = o;
        d.rows(r, col++) = v;
      }
      for (std::size_t l = 0; l < q; ++l) {
        auto [o, v] = pair(cl.cluster_covariates[l]);
        d.rows(r, col++) = o;
        d.rows(r, col++) = v;
      }
      auto [no, nv] = pair(cl.population_size);
      d.rows(r, col++) = no;
      d.rows(r, col++) = nv;
      d.rows(r, col++) = static_cast<double>(cl.sampled_size);
      if (options.include_cluster_means) {
        for (std::size_t k = 0; k < p; ++k) {
          d.rows(r, col++) = msize > 0 ? obs_count[k] / msize : 0.0;
          d.rows(r, col++) = obs_count[k] > 0 ? obs_sum[k] / obs_count[k] : 0.0;
        }
      }
      ++r;
    }
    d.cluster_offsets.push_back(static_cast<std::size_t>(r));
  }
  return d;
}

ValidationReport validate_dataset(const TrialDataset& ds) {
  ValidationReport rep;
  auto add = [&](const std::string& cid, const std::string& col, const std::string& kind,
                 const std::string& msg) { rep.issues.push_back({cid, col, kind, msg}); };

  const double pi = ds.randomization_probability;
  if (!(pi > 0.0 && pi < 1.0)) {
    add("", "randomization_probability", "invalid randomization probability",
        "randomization probability must lie in (0,1)");
  }
  if (ds.m() < 2) add("", "", "too few clusters", "at least two clusters are required");

  std::set<std::string> seen;
  std::size_t total = 0, total_missing = 0;
  std::vector<double> x_missing(ds.p(), 0.0);
  std::vector<double> c_missing(ds.q(), 0.0);
  double m_sum = 0.0, n_sum = 0.0;
  auto& s = rep.summary;
  s.sampled_size.min = s.observed_population_size.min = INFINITY;
  s.sampled_size.max = s.observed_population_size.max = -INFINITY;

  for (const auto& cl : ds.clusters) {
    if (!seen.insert(cl.cluster_id).second) {
      add(cl.cluster_id, "cluster_id", "duplicate cluster", "cluster id appears twice");
    }
    if (cl.treatment != 0 && cl.treatment != 1) {
      add(cl.cluster_id, "treatment", "non-binary treatment", "treatment must be 0 or 1");
    }
    if (cl.sampled_size < 1) add(cl.cluster_id, "M", "invalid sampled size", "M must be positive");
    if (static_cast<std::size_t>(std::max(cl.sampled_size, 0)) != cl.individuals.size()) {
      add(cl.cluster_id, "M", "size mismatch",
          "sampled_size=" + std::to_string(cl.sampled_size) + " but " +
              std::to_string(cl.individuals.size()) + " individuals");
    }
    if (cl.cluster_covariates.size() != ds.q()) {
      add(cl.cluster_id, "", "covariate count", "cluster covariate count differs from q");
    }
    if (cl.population_size.observed) {
      if (cl.population_size.value < cl.sampled_size) {
        add(cl.cluster_id, "N", "population below sample", "N is smaller than M");
      }
      if (ds.full_enrollment && cl.population_size.value != cl.sampled_size) {
        add(cl.cluster_id, "N", "enrollment mismatch", "full enrollment requires N == M");
      }
    }

    ArmSummary& arm = cl.treatment == 1 ? s.treated : s.control;
    arm.clusters++;
    std::size_t arm_missing = 0;
    for (const auto& ind : cl.individuals) {
      if (ind.covariates.size() != ds.p()) {
        add(cl.cluster_id, "", "covariate count", "individual covariate count differs from p");
        continue;
      }
      for (std::size_t k = 0; k < ds.p(); ++k) x_missing[k] += ind.covariates[k].observed ? 0.0 : 1.0;
      if (!ind.outcome_observed) ++arm_missing;
    }
    arm.individuals += cl.individuals.size();
    arm.outcome_missing_rate += static_cast<double>(arm_missing);
    total += cl.individuals.size();
    total_missing += arm_missing;
    for (std::size_t l = 0; l < std::min(ds.q(), cl.cluster_covariates.size()); ++l) {
      c_missing[l] += cl.cluster_covariates[l].observed ? 0.0 : 1.0;
    }

    s.sampled_size.count++;
    m_sum += cl.sampled_size;
    s.sampled_size.min = std::min<double>(s.sampled_size.min, cl.sampled_size);
    s.sampled_size.max = std::max<double>(s.sampled_size.max, cl.sampled_size);
    if (cl.population_size.observed) {
      s.observed_population_size.count++;
      n_sum += cl.population_size.value;
      s.observed_population_size.min = std::min(s.observed_population_size.min, cl.population_size.value);
      s.observed_population_size.max = std::max(s.observed_population_size.max, cl.population_size.value);
    }
  }

  if (ds.m() >= 1 && (s.treated.clusters == 0 || s.control.clusters == 0)) {
    add("", "treatment", "degenerate arm", "both treated and control clusters are required");
  }

  for (ArmSummary* arm : {&s.treated, &s.control}) {
    arm->outcome_missing_rate = arm->individuals ? arm->outcome_missing_rate / arm->individuals : 0.0;
  }
  s.outcome_missing_rate = total ? static_cast<double>(total_missing) / total : 0.0;
  for (auto& v : x_missing) v = total ? v / total : 0.0;
  for (auto& v : c_missing) v = ds.m() ? v / ds.m() : 0.0;
  s.individual_covariate_missing_rate = std::move(x_missing);
  s.cluster_covariate_missing_rate = std::move(c_missing);
  if (s.sampled_size.count) {
    s.sampled_size.mean = m_sum / s.sampled_size.count;
  } else {
    s.sampled_size.min = s.sampled_size.max = 0.0;
  }
  if (s.observed_population_size.count) {
    s.observed_population_size.mean = n_sum / s.observed_population_size.count;
  } else {
    s.observed_population_size.min = s.observed_population_size.max = 0.0;
  }
  return rep;
}

}  // namespace crt
