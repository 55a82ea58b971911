#pragma once

// Simulation of complete data (simple / complex scenarios) and of the
// sequential missingness indicators for m-DAGs A and B.

#include "tmlemiss/core.hpp"

#include <array>
#include <functional>
#include <string>

namespace tmlemiss {

class CalibrationError : public Error {
 public:
  using Error::Error;
};

enum class Scenario { simple, complex };
enum class MDag { none, A, B };

std::string to_string(Scenario s);
std::string to_string(MDag m);
Scenario scenario_from_string(std::string_view s);
MDag mdag_from_string(std::string_view s);

/// Interaction terms of the complex exposure model (eta7..eta12) and outcome
/// model (theta7..theta17), as index lists into (Z1, Z2, Z3, Z4, Z5).
/// Z2 never appears.
const std::vector<std::vector<int>>& exposure_interaction_terms();
const std::vector<std::vector<int>>& outcome_interaction_terms();

struct CompleteDataModel {
  Scenario scenario = Scenario::simple;
  double alpha0 = 0.0;                // Z1
  std::array<double, 2> beta{};       // Z2: intercept, A
  std::array<double, 2> gamma{};      // Z3: intercept, A
  std::array<double, 2> delta{};      // Z4: intercept, A
  double zeta0 = 0.0;                 // Z5
  /// X: [0] intercept, [1..5] Z1..Z5, [6] A, [7..12] interactions.
  std::array<double, 13> eta{};
  /// Y: [0] intercept, [1] X (the ACE), [2..6] Z1..Z5, [7..17] interactions.
  std::array<double, 18> theta{};
  double residual_sd = 1.0;

  double ace() const { return theta[1]; }
  /// Rejects a non-unit residual SD, non-finite coefficients, and nonzero
  /// interaction coefficients in the simple scenario.
  void validate() const;
};

/// Slopes set to `main_effect`, interactions (complex only) to `interaction`,
/// the exposure effect to `ace`; intercepts left at zero for calibration.
CompleteDataModel default_complete_model(Scenario s, double main_effect = 0.4,
                                         double interaction = 0.5,
                                         double ace = 0.2);

struct CompleteDataTargets {
  double z1 = 0.21, z2 = 0.14, z3 = 0.59, z4 = 0.37, z5 = 0.38, x = 0.15;
  double y_mean = 0.0;
};

struct CalibrationOptions {
  std::size_t draws = 1'000'000;
  double tolerance = 0.005;
  std::uint64_t seed = 0x5EED'CA11'B8A7'E5ULL;
};

/// Intercept c with mean(logit_inv(c + lp)) within `tolerance` of `target`.
/// The root is kept bracketed in [-20, 20]; Newton steps that leave the
/// bracket fall back to bisection. Throws CalibrationError naming `variable`
/// if the target is not bracketed.
double calibrate_intercept(double target, std::span<const double> lp,
                           double tolerance, std::string_view variable);

/// Same, drawing `draws` linear-predictor values from `sampler`.
double calibrate_intercept(double target,
                           const std::function<double(RngStream&)>& sampler,
                           std::size_t draws, RngStream& rng, double tolerance,
                           std::string_view variable);

/// Fills every intercept of `m` from the prevalence / mean targets.
CompleteDataModel calibrate_complete_model(CompleteDataModel m,
                                           const CompleteDataTargets& t = {},
                                           const CalibrationOptions& opt = {});

/// Calibrated default model, computed once per process and parameter set.
const CompleteDataModel& calibrated_complete_model(Scenario s,
                                                   double main_effect = 0.4,
                                                   double interaction = 0.5,
                                                   double ace = 0.2);

struct SimulatedData {
  Dataset data;
  Eigen::VectorXd y0;  // potential outcome under X = 0
  Eigen::VectorXd y1;  // potential outcome under X = 1
};

SimulatedData generate_complete(const CompleteDataModel& model, std::size_t n,
                                RngStream& rng);

struct MissingnessModel {
  MDag mdag = MDag::A;
  /// M_Z2: [0] intercept, Z1, Z5, Z2, X, Y.
  std::array<double, 6> iota{};
  /// M_Z3: [0] intercept, Z1, Z5, Z3, X, Y, M_Z2.
  std::array<double, 7> kappa{};
  /// M_Z4: [0] intercept, Z1, Z5, Z4, X, Y, M_Z2, M_Z3.
  std::array<double, 8> lambda{};
  /// M_X: [0] intercept, Z1, Z5, Z2, Z3, Z4, X, Y, M_Z2, M_Z3, M_Z4.
  std::array<double, 11> nu{};
  /// M_Y: [0] intercept, Z1, Z5, Z2, Z3, Z4, X, Y, M_Z2, M_Z3, M_Z4, M_X.
  std::array<double, 12> xi{};

  /// Sets the coefficient on Y in every indicator model except M_Y's own.
  void set_outcome_coefficient(double c);
  /// Indicator-on-indicator terms among M_Z2, M_Z3, M_Z4, M_X.
  void set_covariate_indicator_coefficient(double c);
  /// Terms of M_Y on M_Z2, M_Z3, M_Z4, M_X.
  void set_outcome_indicator_coefficient(double c);
};

struct MissingnessTargets {
  double z2 = 0.30, z3 = 0.15, z4 = 0.20, x = 0.30, y = 0.20;
  double any_exposure_or_confounder = 0.40;
  double any = 0.50;
};

/// Slopes on Z1, Z5, Z2-Z4 and X at `slope`; Y at 0 (A) or `outcome_coef`
/// (B); the outcome never enters its own indicator unless `outcome_self`
/// is nonzero.
MissingnessModel default_missingness_model(MDag mdag, double slope = 0.9,
                                           double outcome_coef = 0.1,
                                           double outcome_self = 0.0);

/// Calibrates the five intercepts to the marginal targets, and the shared
/// indicator-on-indicator coefficients to the joint any-missing targets.
MissingnessModel calibrate_missingness_model(MissingnessModel m,
                                             const CompleteDataModel& complete,
                                             const MissingnessTargets& t = {},
                                             const CalibrationOptions& opt = {});

const MissingnessModel& calibrated_missingness_model(Scenario s, MDag mdag,
                                                     double main_effect = 0.4,
                                                     double interaction = 0.5,
                                                     double ace = 0.2);

/// Draws M_Z2, M_Z3, M_Z4, M_X, M_Y in that order per record and masks the
/// corresponding cells. A, Z1 and Z5 stay observed. Underlying values are
/// kept for oracle use.
Dataset impose_missingness(const Dataset& complete, const MissingnessModel& m,
                           RngStream& rng);

}  // namespace tmlemiss
