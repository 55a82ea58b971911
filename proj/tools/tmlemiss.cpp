// Command-line front end: simgen, estimate, study, report.

#include "tmlemiss/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace tmlemiss;

namespace {

int cmd_simgen(const std::string& scenario, const std::string& mdag, std::size_t n,
               std::uint64_t seed, const std::string& out) {
  const Scenario s = scenario_from_string(scenario);
  const MDag g = mdag_from_string(mdag);
  const auto& cm = calibrated_complete_model(s);
  // Same streams as replication 0 of a study with this seed.
  RngStream gen = RngStream(seed, 1).derive(0).derive(static_cast<std::uint64_t>(s));
  const SimulatedData sim = generate_complete(cm, n, gen);
  Dataset d = sim.data;
  if (g != MDag::none) {
    RngStream mask = RngStream(seed, 2)
                         .derive(0)
                         .derive(static_cast<std::uint64_t>(s))
                         .derive(static_cast<std::uint64_t>(g));
    d = impose_missingness(sim.data, calibrated_missingness_model(s, g), mask);
  }
  write_csv(d, out);

  nlohmann::json truth;
  truth["scenario"] = to_string(s);
  truth["mdag"] = to_string(g);
  truth["theta1"] = cm.ace();
  truth["n"] = n;
  truth["seed"] = seed;
  truth["y0"] = std::vector<double>(sim.y0.data(), sim.y0.data() + sim.y0.size());
  truth["y1"] = std::vector<double>(sim.y1.data(), sim.y1.data() + sim.y1.size());
  const std::string path = out + ".truth.json";
  std::ofstream tf(path);
  if (!tf) throw Error("cannot write " + path);
  tf << truth.dump(1) << '\n';
  if (!tf) throw Error("write failed for " + path);
  return 0;
}

int cmd_estimate(const std::string& data, const std::string& method, std::uint64_t seed,
                 std::size_t m, std::size_t cycles, const std::string& save_prefix) {
  const Dataset d = read_csv(data);
  MethodConfig cfg;
  cfg.imputations = m;
  cfg.cycles = cycles;
  RngStream rng(seed, 3);
  std::vector<Dataset> imputed;
  const EstimateResult r =
      run_method(method_from_token(method), d, cfg, rng, save_prefix.empty() ? nullptr : &imputed);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  for (std::size_t k = 0; k < imputed.size(); ++k) {
    write_csv(imputed[k], save_prefix + ".imp" + std::to_string(k + 1) + ".csv");
  }
  std::cout << "method,psi,se,ci_lo,ci_hi,n_used\n"
            << method_token(r.method) << ',' << format_double(r.psi) << ','
            << format_double(r.se) << ',' << format_double(r.ci_lo) << ','
            << format_double(r.ci_hi) << ',' << r.n_used << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TMLE with missing data: simulation, estimation and Monte Carlo study"};
  app.require_subcommand(1);

  std::string scenario = "simple", mdag = "A", out, data, method, config, results;
  std::size_t n = 1000, m = 5, cycles = 10;
  std::uint64_t seed = 1;

  auto* simgen = app.add_subcommand("simgen", "Generate one simulated dataset");
  simgen->add_option("--scenario", scenario)->check(CLI::IsMember({"simple", "complex"}));
  simgen->add_option("--mdag", mdag)->check(CLI::IsMember({"A", "B", "none"}));
  simgen->add_option("--n", n)->check(CLI::PositiveNumber);
  simgen->add_option("--seed", seed);
  simgen->add_option("--out", out, "Output CSV")->required();

  std::string save_prefix;
  auto* estimate = app.add_subcommand("estimate", "Estimate the ACE from one CSV file");
  estimate->add_option("--data", data, "Input CSV")->required()->check(CLI::ExistingFile);
  estimate->add_option("--method", method)
      ->required()
      ->check(CLI::IsMember({"cca", "ext-tmle", "ext-tmle-mcmi", "mi-noint", "mi-2way",
                             "mi-higher", "mi-cart", "mi-rf"}));
  estimate->add_option("--seed", seed);
  estimate->add_option("--m", m, "Imputations")->check(CLI::Range(2, 1000));
  estimate->add_option("--cycles", cycles)->check(CLI::PositiveNumber);
  estimate->add_option("--save-imputations", save_prefix,
                       "Write completed datasets to PREFIX.impK.csv");

  std::optional<std::size_t> reps_override, n_override, jobs_override;
  std::optional<std::uint64_t> seed_override;
  bool full_scale = false;
  auto* study = app.add_subcommand("study", "Run the Monte Carlo study");
  study->add_option("--config", config, "TOML-style config")->check(CLI::ExistingFile);
  study->add_option("--out", out, "Output directory")->required();
  study->add_option("--reps", reps_override);
  study->add_option("--n", n_override);
  study->add_option("--seed", seed_override);
  study->add_option("--jobs", jobs_override);
  study->add_flag("--full-scale", full_scale, "2,000 datasets of 2,000 records");
  bool quiet = false;
  study->add_flag("--quiet", quiet, "No progress output");

  double psi0 = 0.2;
  auto* report = app.add_subcommand("report", "Re-render reports from results.csv");
  report->add_option("--results", results)->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "Output directory")->required();
  report->add_option("--psi0", psi0);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simgen) return cmd_simgen(scenario, mdag, n, seed, out);
    if (*estimate) return cmd_estimate(data, method, seed, m, cycles, save_prefix);
    if (*study) {
      StudyConfig cfg = config.empty() ? StudyConfig{} : load_study_config(config);
      if (full_scale) apply_full_scale(cfg);
      if (reps_override) cfg.reps = *reps_override;
      if (n_override) cfg.n = *n_override;
      if (seed_override) cfg.seed = *seed_override;
      if (jobs_override) cfg.jobs = *jobs_override;
      cfg.validate();
      const auto rows = run_study(cfg, [&](std::size_t done) {
        if (!quiet) std::fprintf(stderr, "\rreplications %zu/%zu", done, cfg.reps);
      });
      if (!quiet) std::fprintf(stderr, "\n");
      emit_report(rows, cfg, out);
      return 0;
    }
    if (*report) {
      rerender_report(results, out, psi0);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
