#include <doctest.h>

#include <array>
#include <cmath>
#include <map>

#include "crt/rng.hpp"
#include "crt/simulation.hpp"

using namespace crt;

TEST_CASE("Philox streams are deterministic and distinct") {
  Philox4x32 a(7, 3), b(7, 3), c(7, 4), d(8, 3);
  bool differ_c = false, differ_d = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a();
    CHECK(x == b());
    differ_c |= x != c();
    differ_d |= x != d();
  }
  CHECK(differ_c);
  CHECK(differ_d);
  CHECK(stream_id(1, 2, 3) != stream_id(2, 1, 3));
  CHECK(stream_id(1, 2, 3) != stream_id(1, 2, 4));
}

TEST_CASE("uniform01 has the right mean") {
  Philox4x32 rng(1, 1);
  double s = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) s += uniform01(rng);
  CHECK(std::abs(s / n - 0.5) < 0.005);
}

TEST_CASE("cluster sizes and covariate missingness rates") {
  const int draws = 100000;
  double n_sum = 0, rx1 = 0, rx1_n = 0;
  for (int i = 0; i < draws; ++i) {
    Philox4x32 rng(42, static_cast<std::uint64_t>(i));
    const auto g = generate_cluster(0.3, rng);
    CHECK_FALSE((g.n < 10 || g.n > 90));
    n_sum += g.n;
    if (i % 10 == 0) {
      for (bool r : g.r_x1) rx1 += r;
      rx1_n += g.n;
    }
  }
  CHECK(std::abs(n_sum / draws - 50.0) < 0.3);
  CHECK(std::abs(rx1 / rx1_n - 0.70) < 0.01);
}

TEST_CASE("p_m = 0 observes everything") {
  Philox4x32 rng(5, 5);
  for (int i = 0; i < 50; ++i) {
    const auto g = generate_cluster(0.0, rng);
    CHECK(g.r_c);
    for (std::size_t j = 0; j < g.r_x1.size(); ++j) {
      CHECK(g.r_x1[j]);
      CHECK(g.r_x2[j]);
    }
    CHECK(static_cast<int>(g.enrolled.size()) == g.n);
  }
}

TEST_CASE("uniform sampling range for N = 10") {
  Philox4x32 base(3, 3);
  auto g = generate_cluster(0.1, base);
  g.n = 10;
  std::map<int, int> seen;
  for (int t = 0; t < 6000; ++t) {
    Philox4x32 rng(9, static_cast<std::uint64_t>(t));
    auto copy = g;
    apply_uniform_sampling(copy, rng);
    seen[static_cast<int>(copy.enrolled.size())]++;
    CHECK_FALSE(copy.population_observed);
  }
  CHECK(seen.size() == 6);
  CHECK(seen.begin()->first == 2);
  CHECK(seen.rbegin()->first == 7);
}

TEST_CASE("uniform 2-subsets of 4 are equiprobable") {
  Philox4x32 rng(12, 0);
  std::map<std::pair<int, int>, int> counts;
  const int draws = 60000;
  for (int t = 0; t < draws; ++t) {
    const auto s = uniform_subset(4, 2, rng);
    counts[{s[0], s[1]}]++;
  }
  REQUIRE(counts.size() == 6);
  double chi2 = 0;
  const double expected = draws / 6.0;
  for (const auto& [k, v] : counts) chi2 += (v - expected) * (v - expected) / expected;
  // Upper 0.001 point of chi-square with 5 degrees of freedom.
  CHECK(chi2 < 20.515);
}

TEST_CASE("truth and its analytic cross-check") {
  ScenarioConfig cfg;
  cfg.p_m = 0.1;
  CHECK(cfg.truth() == doctest::Approx(4.5));
  cfg.p_m = 0.3;
  CHECK(cfg.truth() == doctest::Approx(3.5));
  // 10 (1 - p_m) E[X1] with E[X1] = E[N] / 100 = 0.5.
  CHECK(10 * (1 - 0.3) * (50.0 / 100) == doctest::Approx(cfg.truth()));
}

TEST_CASE("latent difference in means converges to the truth") {
  ScenarioConfig cfg;
  cfg.m = 2000;
  cfg.p_m = 0.1;
  const auto trial = generate_trial(cfg, 0);
  // Cluster-average contrast of the individual effects 10 R1 X1.
  double sum = 0, sq = 0;
  for (const auto& g : trial.latent) {
    double d = 0;
    for (int j = 0; j < g.n; ++j) d += dgp_oracle_eta(g, j, 1) - dgp_oracle_eta(g, j, 0);
    d /= g.n;
    sum += d;
    sq += d * d;
  }
  const double m = static_cast<double>(cfg.m);
  const double mean = sum / m;
  const double se = std::sqrt((sq / m - mean * mean) / m);
  CHECK(std::abs(mean - cfg.truth()) < 3 * se);
}

TEST_CASE("clusters do not depend on m") {
  ScenarioConfig small, large;
  small.m = 10;
  large.m = 25;
  const auto a = generate_trial(small, 4);
  const auto b = generate_trial(large, 4);
  for (std::size_t i = 0; i < 10; ++i) CHECK(a.observed.clusters[i] == b.observed.clusters[i]);
}

TEST_CASE("sampling hides N and keeps a subset") {
  ScenarioConfig cfg;
  cfg.m = 20;
  cfg.sampling = true;
  const auto t = generate_trial(cfg, 0);
  CHECK_FALSE(t.observed.full_enrollment);
  for (std::size_t i = 0; i < cfg.m; ++i) {
    CHECK_FALSE(t.observed.clusters[i].population_size.observed);
    CHECK(t.observed.clusters[i].sampled_size < t.latent[i].n);
  }
  const auto revealed = reveal_population_sizes(t);
  CHECK(revealed.clusters[0].population_size.observed);
}

TEST_CASE("metric arithmetic") {
  std::vector<ReplicateRecord> recs;
  for (int k = 0; k < 3; ++k) recs.push_back({static_cast<std::size_t>(k), "e", true, 4.5, 0.1, 4.0, 5.0, ""});
  const auto exact = summarize_metrics(recs, 4.5, {"e"});
  CHECK(exact[0].bias == 0.0);
  CHECK(exact[0].ese == 0.0);
  CHECK(exact[0].cp == 1.0);

  std::vector<ReplicateRecord> two{{0, "e", true, 5.5, 1, 0, 1, ""}, {1, "e", true, 3.5, 1, 0, 1, ""},
                                   {2, "e", false, 0, 0, 0, 0, "boom"}};
  const auto m = summarize_metrics(two, 4.5, {"e"});
  CHECK(m[0].bias == doctest::Approx(0.0));
  CHECK(m[0].ese == doctest::Approx(std::sqrt(2.0)));
  CHECK(m[0].failures == 1);
  CHECK(m[0].failure_rate() == doctest::Approx(1.0 / 3));
}

TEST_CASE("replications are identical across thread counts") {
  ScenarioConfig cfg;
  cfg.m = 30;
  cfg.replicates = 4;
  cfg.estimators = {"unadjusted", "dr-pm"};
  const auto a = raw_replicates_csv(cfg, run_replications(cfg, 1));
  const auto b = raw_replicates_csv(cfg, run_replications(cfg, 3));
  CHECK(a == b);
}
