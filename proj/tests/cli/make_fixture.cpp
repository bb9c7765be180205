// Writes a synthetic full-enrollment trial drawn from the simulation design.
// Usage: make_fixture <out.csv> [clusters] [seed]

#include <cstdlib>
#include <iostream>
#include <string>

#include "crt/core_data.hpp"
#include "crt/simulation.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_fixture <out.csv> [clusters] [seed]\n";
    return 2;
  }
  crt::ScenarioConfig cfg;
  cfg.m = argc > 2 ? std::stoul(argv[2]) : 40;
  cfg.seed = argc > 3 ? std::stoull(argv[3]) : 17;
  cfg.p_m = 0.1;
  cfg.replicates = 1;
  const auto trial = crt::generate_trial(cfg, 0);
  crt::write_csv(trial.observed, argv[1]);
  return 0;
}
