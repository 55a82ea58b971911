#pragma once

// Monte Carlo study driver: replicate generate, mask and estimate over the
// scenario x m-DAG x method grid, then summarise and render reports.

#include "tmlemiss/datagen.hpp"
#include "tmlemiss/missing.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace tmlemiss {

struct StudyConfig {
  std::vector<Scenario> scenarios{Scenario::simple, Scenario::complex};
  std::vector<MDag> mdags{MDag::A, MDag::B};
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::size_t n = 1000;
  std::size_t reps = 200;
  std::uint64_t seed = 1;
  double psi0 = 0.2;
  std::size_t jobs = 1;

  // Data generation.
  double main_effect = 0.4;
  double interaction = 0.5;

  // Estimation.
  std::size_t folds = 0;
  std::vector<LearnerKind> library{LearnerKind::mean, LearnerKind::glm,
                                   LearnerKind::glm_interaction, LearnerKind::ridge,
                                   LearnerKind::cart, LearnerKind::rf};
  std::size_t forest_trees = 100;

  // Imputation.
  std::size_t m = 5;
  std::size_t cycles = 10;
  std::size_t pmm_donors = 5;
  std::size_t rf_trees = 10;
  bool pmm_matching = true;

  void validate() const;
  MethodConfig method_config() const;
};

/// Reads `key = value` lines (TOML subset: strings, numbers, booleans,
/// one-line arrays, `#` comments). Unknown keys are an error.
StudyConfig parse_study_config(std::istream& in);
StudyConfig load_study_config(const std::string& path);

/// The 2,000 x 2,000 design.
void apply_full_scale(StudyConfig& cfg);

struct ResultRow {
  std::size_t rep = 0;
  Scenario scenario = Scenario::simple;
  MDag mdag = MDag::A;
  Method method = Method::cca;
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n_used = 0;
  bool failed = false;
  std::string error;
  double runtime = 0.0;  // seconds
};

/// Rows ordered by (rep, scenario, m-DAG, method) following the config's
/// list order. A failing method records NaN estimates and never stops the
/// study. `progress`, when set, is called after each finished replication.
std::vector<ResultRow> run_study(const StudyConfig& cfg,
                                 const std::function<void(std::size_t)>& progress = {});

struct MetricValue {
  double value = 0.0;
  double mcse = 0.0;
};

MetricValue relative_bias(std::span<const double> psis, double psi0);
MetricValue empirical_se(std::span<const double> psis);
MetricValue model_se_error(std::span<const double> ses, double emp_se);

struct CellMetrics {
  Scenario scenario = Scenario::simple;
  MDag mdag = MDag::A;
  Method method = Method::cca;
  std::size_t n_ok = 0;
  std::size_t n_failed = 0;
  double mean_psi = 0.0;
  double mean_se = 0.0;
  MetricValue rel_bias;
  MetricValue emp_se;
  MetricValue mod_se_err;
  /// Share of successful replications with |psi / se| > 1.96.
  double reject_rate = 0.0;
};

/// One entry per (scenario, m-DAG, method) of the given lists, in order.
std::vector<CellMetrics> compute_metrics(const std::vector<ResultRow>& rows,
                                         const std::vector<Scenario>& scenarios,
                                         const std::vector<MDag>& mdags,
                                         const std::vector<Method>& methods, double psi0);

void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out);
std::vector<ResultRow> read_results_csv(std::istream& in);
void write_metrics_csv(const std::vector<CellMetrics>& metrics, std::ostream& out);
void write_report_md(const std::vector<CellMetrics>& metrics, const StudyConfig& cfg,
                     std::ostream& out);

enum class Metric { rel_bias, emp_se, mod_se_err };
/// Dot-and-whisker chart (estimate +/- MCSE), one panel per scenario x m-DAG.
void write_metric_svg(const std::vector<CellMetrics>& metrics, Metric metric,
                      std::ostream& out);

/// Writes results.csv, timing.csv, failures.csv, metrics.csv, report.md and
/// three SVG charts into `dir` (created if needed).
void emit_report(const std::vector<ResultRow>& rows, const StudyConfig& cfg,
                 const std::string& dir);

/// Rebuilds metrics, report and charts from an existing results.csv. The
/// grid is taken from the rows present.
void rerender_report(const std::string& results_csv, const std::string& dir, double psi0);

}  // namespace tmlemiss
