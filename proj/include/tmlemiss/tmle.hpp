#pragma once

// Targeted maximum likelihood estimation of the average causal effect of a
// binary exposure X on a continuous outcome Y, adjusting for confounders.

#include "tmlemiss/stacking.hpp"

#include <functional>
#include <optional>

namespace tmlemiss {

struct TmleConfig {
  std::vector<LearnerSpec> q_library = default_library();
  std::vector<LearnerSpec> g_library = default_library();
  std::vector<LearnerSpec> delta_library = default_library();
  std::size_t folds = 0;  // 0: default_fold_count(n)
  double g_bound = 0.025;
  double q_bound = 1e-4;
  double delta_bound = 0.025;
  /// Adjustment set. Empty means every column other than A, X and Y.
  std::vector<std::string> covariates;
};

/// Everything the targeting produced, for diagnostics and tests.
struct TmleFit {
  std::optional<EnsembleModel> qbar;
  std::optional<EnsembleModel> g;
  std::optional<EnsembleModel> delta;  // extended fits with missing Y only
  std::vector<std::string> covariates;

  double lower = 0.0;  // outcome scaling range
  double upper = 1.0;
  double epsilon = 0.0;
  double score_residual = 0.0;
  double psi_initial = 0.0;  // untargeted plug-in, original scale
  double psi_scaled = 0.0;
  double psi = 0.0;
  double se = 0.0;
  std::size_t n = 0;
  std::size_t n_observed_y = 0;

  Eigen::VectorXd ic;        // per record, scaled outcome
  Eigen::VectorXd g_values;  // truncated propensity
  Eigen::VectorXd q1_star;   // targeted predictions, scaled outcome
  Eigen::VectorXd q0_star;
  std::size_t g_truncated = 0;
  std::size_t delta_truncated = 0;
  std::vector<std::string> warnings;
};

/// Column order of the outcome-model design: X followed by the covariates.
DesignMatrix outcome_design(const Dataset& d, std::span<const std::string> covariates,
                            std::optional<double> set_exposure = std::nullopt);

std::vector<std::string> default_covariates(const Dataset& d);

/// g-computation: mean over records of Qbar(1, Z) - Qbar(0, Z). `qbar` maps an
/// outcome design (X, covariates...) to predicted outcomes.
double gcompute_ate(
    const Dataset& d, std::span<const std::string> covariates,
    const std::function<Eigen::VectorXd(const DesignMatrix&)>& qbar);

/// Full TMLE on data with no missing X, covariates or Y.
TmleFit tmle_fit(const Dataset& d, const TmleConfig& cfg, RngStream& rng);

/// Extended TMLE: Y may be missing; an outcome-observation model enters the
/// clever covariate. Reduces exactly to tmle_fit when Y is complete.
TmleFit tmle_fit_extended(const Dataset& d, const TmleConfig& cfg,
                          RngStream& rng);

EstimateResult tmle_ate(const Dataset& d, const TmleConfig& cfg,
                        RngStream& rng, Method method = Method::cca);
EstimateResult tmle_ate_extended(const Dataset& d, const TmleConfig& cfg,
                                 RngStream& rng,
                                 Method method = Method::ext_tmle);

/// Solves sum_i h_i (y_i - expit(offset_i + eps h_i)) = 0 for eps by Newton
/// steps on the quasi-binomial log-likelihood.
double fluctuate(const Eigen::VectorXd& y, const Eigen::VectorXd& offset,
                 const Eigen::VectorXd& h);

}  // namespace tmlemiss
