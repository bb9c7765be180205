#include <doctest.h>

#include <algorithm>

#include "crt/analysis.hpp"
#include "crt/core_data.hpp"
#include "crt/csv.hpp"
#include "crt/simulation.hpp"

using namespace crt;

namespace {

const char* kSmall =
    "cluster_id,treatment,outcome,M,x_1,c_1\n"
    "a,1,2.0,2,0.5,1\n"
    "a,1,3.0,2,1.5,1\n"
    "b,0,1.0,1,0.0,2\n";

bool has_issue(const ValidationError& e, const std::string& kind, const std::string& cluster) {
  return std::any_of(e.issues().begin(), e.issues().end(),
                     [&](const ValidationIssue& i) { return i.kind == kind && i.cluster_id == cluster; });
}

}  // namespace

TEST_CASE("csv parser handles quotes and escaped quotes") {
  const auto rows = csv::parse("a,\"b,c\",\"d\"\"e\"\n1,2,3\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][1] == "b,c");
  CHECK(rows[0][2] == "d\"e");
  CHECK(csv::escape("x,y") == "\"x,y\"");
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-17, 12345.678, 0.0}) {
    CHECK(*csv::parse_double(csv::format_double(v)) == v);
  }
}

TEST_CASE("three-row file without missing values") {
  const auto ds = parse_csv(kSmall, {}, 0.5, true);
  CHECK(ds.m() == 2);
  CHECK(ds.total_individuals() == 3);
  CHECK(ds.p() == 1);
  CHECK(ds.q() == 1);
  for (const auto& c : ds.clusters) {
    CHECK(c.population_size.observed);
    for (const auto& ind : c.individuals) {
      CHECK(ind.outcome_observed);
      for (const auto& x : ind.covariates) CHECK(x.observed);
    }
  }
}

TEST_CASE("NA outcome maps to an unobserved outcome") {
  const std::string text =
      "cluster_id,treatment,outcome,M\n"
      "a,1,1,3\na,1,2,3\na,1,3,3\nb,0,4,2\nb,0,NA,2\n";
  const auto ds = parse_csv(text, {}, 0.5, true);
  CHECK(ds.clusters[1].individuals[1].outcome_observed == false);
  CHECK(ds.clusters[1].individuals[0].outcome_observed);
}

TEST_CASE("contradictory treatment names the cluster") {
  const std::string text =
      "cluster_id,treatment,outcome,M\n"
      "c1,1,1,2\nc1,0,2,2\nc2,0,1,1\n";
  try {
    parse_csv(text, {}, 0.5, true);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(has_issue(e, "inconsistent cluster constant", "c1"));
    CHECK(std::string(e.what()).find("c1") != std::string::npos);
  }
}

TEST_CASE("non-binary treatment and missing columns are rejected") {
  CHECK_THROWS_AS(parse_csv("cluster_id,treatment,outcome,M\na,2,1,1\n", {}, 0.5, true), ValidationError);
  try {
    parse_csv("cluster_id,outcome,M\na,1,1\n", {}, 0.5, true);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    REQUIRE(!e.issues().empty());
    CHECK(e.issues().front().column == "treatment");
  }
}

TEST_CASE("M disagreeing with the row count is an error") {
  try {
    parse_csv("cluster_id,treatment,outcome,M\na,1,1,3\na,1,2,3\nb,0,1,1\n", {}, 0.5, true);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(has_issue(e, "size mismatch", "a"));
  }
}

TEST_CASE("csv round trip preserves the dataset") {
  ScenarioConfig cfg;
  cfg.m = 12;
  cfg.p_m = 0.3;
  cfg.sampling = true;
  const auto trial = generate_trial(cfg, 0);
  const auto& ds = trial.observed;
  const auto back = parse_csv(to_csv(ds), {}, ds.randomization_probability, ds.full_enrollment);
  CHECK(back == ds);
}

TEST_CASE("validate_dataset reports structural issues") {
  auto ds = parse_csv(kSmall, {}, 0.5, true);
  CHECK(validate_dataset(ds).ok());

  auto bad = ds;
  bad.clusters[0].sampled_size = 3;
  const auto rep = validate_dataset(bad);
  CHECK(std::any_of(rep.issues.begin(), rep.issues.end(), [](const auto& i) { return i.kind == "size mismatch"; }));

  auto one_arm = ds;
  one_arm.clusters[1].treatment = 1;
  const auto rep2 = validate_dataset(one_arm);
  CHECK(std::any_of(rep2.issues.begin(), rep2.issues.end(), [](const auto& i) { return i.kind == "degenerate arm"; }));
}

TEST_CASE("missingness-indicator expansion") {
  const std::string text =
      "cluster_id,treatment,outcome,M,x_1\n"
      "a,1,1,2,2.5\na,1,2,2,NA\nb,0,1,1,1\n";
  SUBCASE("zero imputation") {
    const auto ds = parse_csv(text, {}, 0.5, true);
    const auto d = expand_missing_indicators(ds);
    const auto obs = *d.column_index("x_1.obs");
    const auto val = *d.column_index("x_1.val");
    CHECK(d.rows(0, static_cast<Eigen::Index>(obs)) == 1.0);
    CHECK(d.rows(0, static_cast<Eigen::Index>(val)) == 2.5);
    CHECK(d.rows(1, static_cast<Eigen::Index>(obs)) == 0.0);
    CHECK(d.rows(1, static_cast<Eigen::Index>(val)) == 0.0);
    CHECK(d.cluster_offsets == std::vector<std::size_t>{0, 2, 3});
  }
  SUBCASE("constant imputation") {
    const auto ds = parse_csv(text, {}, 0.5, true);
    const auto d = expand_missing_indicators(ds, {7.0, false});
    CHECK(d.rows(1, static_cast<Eigen::Index>(*d.column_index("x_1.val"))) == 7.0);
  }
}

TEST_CASE("imputation constant does not change the parametric estimate") {
  ScenarioConfig cfg;
  cfg.m = 60;
  cfg.p_m = 0.3;
  const auto trial = generate_trial(cfg, 3);
  AnalysisOptions a;
  a.n_covariate_columns = 7;
  auto b = a;
  b.imputation_constant = 3.7;
  const auto ra = analyze(trial.observed, a);
  const auto rb = analyze(trial.observed, b);
  CHECK(std::abs(ra.estimate.delta_hat - rb.estimate.delta_hat) < 1e-8);
}
