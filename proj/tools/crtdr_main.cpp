// crtdr: analyze cluster-randomized trials, run the simulation studies, and
// compute tipping-point sensitivity analyses.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "crt/analysis.hpp"
#include "crt/config.hpp"
#include "crt/errors.hpp"
#include "crt/sensitivity.hpp"
#include "crt/simulation.hpp"

namespace {

using nlohmann::json;

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitFailureRate = 4;

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw crt::ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

std::filesystem::path prepare_out(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw crt::ValidationError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

crt::TrialDataset load_data(const crt::AnalysisConfig& cfg) {
  if (cfg.data_path.empty()) throw crt::ValidationError("config: 'data' is required");
  return crt::load_csv(cfg.data_path, cfg.schema, cfg.randomization_probability, cfg.full_enrollment);
}

json sensitivity_block(const crt::EstimateResult& est, const crt::BiasComponents& comps,
                       const crt::SensitivitySettings& s, const std::filesystem::path& out) {
  const auto tp = crt::tipping_point_search(est, comps, s.delta_grid);
  const auto grid = crt::sensitivity_grid(est, comps, s.delta_grid, s.gamma_grid);
  write_file(out / "tipping.csv", crt::tipping_csv(tp));
  write_file(out / "sensitivity_grid.csv", crt::sensitivity_grid_csv(grid));
  return {{"components", crt::bias_components_json(comps)}, {"tipping", crt::tipping_json(tp)},
          {"files", {"tipping.csv", "sensitivity_grid.csv"}}};
}

int cmd_analyze(const std::string& config_path, const std::string& out_dir, bool with_sensitivity) {
  const auto cfg = crt::load_analysis_config(config_path);
  const auto ds = load_data(cfg);
  const auto out = prepare_out(out_dir);
  const auto validation = crt::validate_dataset(ds);
  const auto result = crt::analyze(ds, cfg.options);

  json report;
  report["software"] = {{"name", crt::kSoftwareName}, {"version", crt::kSoftwareVersion}};
  report["timestamp"] = crt::utc_timestamp();
  report["seed"] = cfg.options.seed;
  report["seed_generated"] = !cfg.seed_given;
  report["data"] = {{"path", cfg.data_path},
                    {"clusters", ds.m()},
                    {"individuals", ds.total_individuals()},
                    {"randomization_probability", ds.randomization_probability},
                    {"sampling_mode", crt::to_string(cfg.options.mode)}};
  report["estimate"] = crt::estimate_json(result.estimate);
  report["nuisance"] = crt::diagnostics_json(result.diagnostics);
  report["dataset"] = crt::dataset_summary_json(validation.summary);
  if (with_sensitivity) {
    const auto comps = cfg.sensitivity.components.value_or(crt::estimate_bias_components(ds));
    report["sensitivity"] = sensitivity_block(result.estimate, comps, cfg.sensitivity, out);
  }
  write_file(out / "report.json", report.dump(2) + "\n");
  std::cout << "delta_hat = " << result.estimate.delta_hat << "  se = " << result.estimate.se << "  "
            << result.estimate.level * 100 << "% CI [" << result.estimate.ci_low << ", " << result.estimate.ci_high
            << "]\n"
            << "report written to " << (out / "report.json").string() << "\n";
  return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir, unsigned threads) {
  const auto file = crt::load_scenario(scenario_path);
  const auto& cfg = file.scenario;
  const auto out = prepare_out(out_dir);
  std::vector<crt::ReplicateRecord> records;
  if (file.sensitivity_study) {
    auto study = crt::sensitivity_replication(cfg, threads);
    write_file(out / "tipping.csv", crt::tipping_summary_csv(cfg, study.summary));
    records = std::move(study.estimates);
  } else {
    records = crt::run_replications(cfg, threads);
  }
  const auto metrics = crt::summarize_metrics(records, cfg.truth(), cfg.estimators);
  write_file(out / "metrics.csv", crt::metrics_csv(cfg, metrics));
  write_file(out / "raw_replicates.csv", crt::raw_replicates_csv(cfg, records));
  int code = 0;
  for (const auto& s : metrics) {
    std::cout << s.estimator << ": bias " << s.bias << "  ESE " << s.ese << "  ASE " << s.ase << "  CP " << s.cp
              << "  (" << s.replicates << " ok, " << s.failures << " failed)\n";
    if (s.failure_rate() > cfg.max_failure_rate) {
      std::cerr << "error: simulation: estimator " << s.estimator << " failed in " << s.failures << " of "
                << s.failures + s.replicates << " replicates (limit " << cfg.max_failure_rate * 100 << "%)\n";
      for (const auto& r : records) {
        if (!r.ok && r.estimator == s.estimator) {
          std::cerr << "  first failure (replicate " << r.replicate << "): " << r.error << "\n";
          break;
        }
      }
      code = kExitFailureRate;
    }
  }
  return code;
}

int cmd_sensitivity(const std::string& config_path, const std::string& report_path, const std::string& out_dir) {
  const auto cfg = crt::load_analysis_config(config_path);
  const auto out = prepare_out(out_dir);
  crt::EstimateResult est;
  std::optional<crt::BiasComponents> comps = cfg.sensitivity.components;
  if (!report_path.empty()) {
    const auto report = crt::read_json_file(report_path);
    if (!report.contains("estimate")) throw crt::ValidationError("report has no 'estimate' block");
    est = crt::estimate_from_json(report.at("estimate"));
    if (!comps) comps = crt::estimate_bias_components(load_data(cfg));
  } else {
    const auto ds = load_data(cfg);
    est = crt::analyze(ds, cfg.options).estimate;
    if (!comps) comps = crt::estimate_bias_components(ds);
  }
  if (est.scale != crt::ScaleKind::difference) {
    throw crt::ValidationError("sensitivity analysis is only defined on the difference scale (got " +
                               crt::to_string(est.scale) + ")");
  }
  const auto block = sensitivity_block(est, *comps, cfg.sensitivity, out);
  json doc;
  doc["software"] = {{"name", crt::kSoftwareName}, {"version", crt::kSoftwareVersion}};
  doc["timestamp"] = crt::utc_timestamp();
  doc["estimate"] = crt::estimate_json(est);
  doc["sensitivity"] = block;
  write_file(out / "sensitivity.json", doc.dump(2) + "\n");
  for (const auto& p : block.at("tipping").at("points")) {
    std::cout << "delta_diff = " << p.at("delta_diff") << "  tipping gamma contrast = " << p.at("gamma_contrast")
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly-robust estimation for cluster-randomized trials with missing data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(crt::kSoftwareVersion));

  std::string config, scenario, report, out = ".";
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  bool with_sensitivity = false;

  auto* analyze = app.add_subcommand("analyze", "Estimate the treatment effect for a trial dataset");
  analyze->add_option("--config", config, "Analysis configuration (JSON)")->required()->check(CLI::ExistingFile);
  analyze->add_option("--out", out, "Output directory");
  analyze->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  analyze->add_flag("--sensitivity", with_sensitivity, "Also run the tipping-point analysis");

  auto* simulate = app.add_subcommand("simulate", "Run a simulation scenario");
  simulate->add_option("--scenario", scenario, "Scenario configuration (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", out, "Output directory");
  simulate->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* sensitivity = app.add_subcommand("sensitivity", "Tipping-point sensitivity analysis");
  sensitivity->add_option("--config", config, "Analysis configuration (JSON)")->required()->check(CLI::ExistingFile);
  sensitivity->add_option("--report", report, "Existing report.json to take the estimate from")
      ->check(CLI::ExistingFile);
  sensitivity->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitValidation;
  }

  try {
    if (*analyze) return cmd_analyze(config, out, with_sensitivity);
    if (*simulate) return cmd_simulate(scenario, out, threads);
    if (*sensitivity) return cmd_sensitivity(config, report, out);
  } catch (const crt::ValidationError& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
    for (const auto& issue : e.issues()) {
      std::cerr << "  [" << issue.kind << "]";
      if (!issue.cluster_id.empty()) std::cerr << " cluster '" << issue.cluster_id << "'";
      if (!issue.column.empty()) std::cerr << " column '" << issue.column << "'";
      std::cerr << ": " << issue.message << "\n";
    }
    return kExitValidation;
  } catch (const crt::NumericalError& e) {
    std::cerr << "error: numerical: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
