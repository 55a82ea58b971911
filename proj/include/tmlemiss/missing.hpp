#pragma once

// Missing-data strategies around the TMLE estimator: complete cases,
// extended TMLE, missing-covariate indicators, and multiple imputation by
// chained equations with Rubin's rules.

#include "tmlemiss/tmle.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tmlemiss {

/// Complete-case TMLE over Z1..Z5, X, Y. Throws if no record is complete.
EstimateResult cca_estimate(const Dataset& d, const TmleConfig& cfg, RngStream& rng);

/// Drops records with a missing exposure or confounder, then runs extended
/// TMLE (outcome may stay missing).
EstimateResult ext_tmle_cec(const Dataset& d, const TmleConfig& cfg, RngStream& rng);

/// Removes records with missing X; zero-fills each incomplete confounder and
/// appends its indicator M_<name>. Indicators that are constant after the
/// row removal are not appended. Y is left as is.
Dataset mcmi_transform(const Dataset& d);

EstimateResult ext_tmle_mcmi(const Dataset& d, const TmleConfig& cfg, RngStream& rng);

enum class ImputationMethod { noint, twoway, higher, cart, rf };
std::string to_string(ImputationMethod m);
ImputationMethod imputation_method_for(Method m);

using Term = std::vector<std::string>;
/// Concatenated variable names, e.g. "XZ1" or "Z1Z3Z4".
std::string term_name(const Term& t);

/// Rows: variables that may be imputed. Columns: candidate predictor terms
/// (single names are main effects). flags[r][c] = 1 includes term c in the
/// model for target r.
struct InclusionMatrix {
  std::vector<std::string> targets;
  std::vector<Term> terms;
  std::vector<std::vector<std::uint8_t>> flags;

  bool has_target(std::string_view target) const;
  bool includes(std::string_view target, std::string_view term) const;
  std::vector<Term> predictors_for(std::string_view target) const;
};

/// Two-way interaction terms among X, Y and the confounders other than Z2.
std::vector<Term> twoway_interaction_terms();
/// Three- and four-way products over Z1, Z3, Z4, Z5.
std::vector<Term> higher_interaction_terms();

/// The published two-way inclusion table for targets Z2, Z3, Z4, X, Y over
/// A, Z1..Z5, X, Y and the fifteen two-way terms, entered as printed.
InclusionMatrix published_twoway_table();

/// Inclusion by rule: every term of `method`'s set that does not contain the
/// target. Tree methods use main effects only.
InclusionMatrix inclusion_by_rule(ImputationMethod method,
                                  const std::vector<std::string>& targets);

struct ImputationSpec {
  ImputationMethod method = ImputationMethod::noint;
  std::size_t m = 5;
  std::size_t cycles = 10;
  std::size_t pmm_donors = 5;
  /// false: draw continuous targets from the normal linear model instead of
  /// matching to donors.
  bool pmm_matching = true;
  std::size_t rf_trees = 10;
  CartParams cart{5, 1e-4, 10};
  std::size_t min_observed = 30;
  /// Empty: inclusion_by_rule(method, ...) for every incomplete variable.
  InclusionMatrix inclusion;

  void validate() const;
};

ImputationSpec make_imputation_spec(ImputationMethod method);

struct ImputationResult {
  std::vector<Dataset> completed;
  /// Times a univariate model failed and observed-value resampling was used.
  std::size_t fallbacks = 0;
  std::vector<std::string> warnings;
};

/// Chained-equations imputation of every incomplete column. Chain k draws
/// from rng.derive(k). Throws if an incomplete column has fewer than
/// spec.min_observed observed values.
ImputationResult mice_impute(const Dataset& d, const ImputationSpec& spec, RngStream& rng);

// Univariate imputers. `x_obs` / `x_mis` are predictor rows (no intercept)
// for the observed and missing records; each returns one draw per missing
// record.
Eigen::VectorXd impute_logreg(const Eigen::MatrixXd& x_obs, const Eigen::VectorXd& y_obs,
                              const Eigen::MatrixXd& x_mis, RngStream& rng);
Eigen::VectorXd impute_pmm(const Eigen::MatrixXd& x_obs, const Eigen::VectorXd& y_obs,
                           const Eigen::MatrixXd& x_mis, std::size_t donors,
                           bool matching, RngStream& rng);
Eigen::VectorXd impute_cart(const Eigen::MatrixXd& x_obs, const Eigen::VectorXd& y_obs,
                            const Eigen::MatrixXd& x_mis, const CartParams& params,
                            RngStream& rng);
Eigen::VectorXd impute_rf(const Eigen::MatrixXd& x_obs, const Eigen::VectorXd& y_obs,
                          const Eigen::MatrixXd& x_mis, std::size_t trees,
                          const CartParams& params, RngStream& rng);

struct PooledResult {
  double qbar = 0.0;
  double w = 0.0;
  double b = 0.0;
  double t = 0.0;
  std::size_t m = 0;
  double se() const;
};

PooledResult rubin_pool(std::span<const double> estimates, std::span<const double> ses);

/// Imputes from rng.derive(0), analyses every completed dataset with the
/// same stream rng.derive(1), and pools. `imputed` receives the completed
/// datasets when non-null.
EstimateResult mi_estimate(const Dataset& d, const ImputationSpec& spec,
                           const TmleConfig& cfg, RngStream& rng, Method label,
                           std::vector<Dataset>* imputed = nullptr);

struct MethodConfig {
  TmleConfig tmle;
  std::size_t imputations = 5;
  std::size_t cycles = 10;
  std::size_t pmm_donors = 5;
  std::size_t rf_trees = 10;
  bool pmm_matching = true;
};

/// Dispatches one of the eight strategies.
EstimateResult run_method(Method method, const Dataset& d, const MethodConfig& cfg,
                          RngStream& rng, std::vector<Dataset>* imputed = nullptr);

}  // namespace tmlemiss
