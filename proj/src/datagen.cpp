#include "tmlemiss/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace tmlemiss {

using Eigen::Index;
using Eigen::VectorXd;

std::string to_string(Scenario s) {
  return s == Scenario::simple ? "simple" : "complex";
}

std::string to_string(MDag m) {
  switch (m) {
    case MDag::none: return "none";
    case MDag::A: return "A";
    case MDag::B: return "B";
  }
  return "?";
}

Scenario scenario_from_string(std::string_view s) {
  if (s == "simple") return Scenario::simple;
  if (s == "complex") return Scenario::complex;
  throw Error("unknown scenario '" + std::string(s) + "' (expected simple or complex)");
}

MDag mdag_from_string(std::string_view s) {
  if (s == "A" || s == "a") return MDag::A;
  if (s == "B" || s == "b") return MDag::B;
  if (s == "none") return MDag::none;
  throw Error("unknown m-DAG '" + std::string(s) + "' (expected A, B or none)");
}

const std::vector<std::vector<int>>& exposure_interaction_terms() {
  static const std::vector<std::vector<int>> terms = {
      {0, 2}, {0, 3}, {0, 4}, {2, 3}, {2, 4}, {3, 4}};
  return terms;
}

const std::vector<std::vector<int>>& outcome_interaction_terms() {
  static const std::vector<std::vector<int>> terms = {
      {0, 2},    {0, 3},    {0, 4},    {2, 3},    {2, 4},      {3, 4},
      {0, 2, 3}, {0, 2, 4}, {0, 3, 4}, {2, 3, 4}, {0, 2, 3, 4}};
  return terms;
}

namespace {

using ZRow = std::array<double, 5>;

double product(const ZRow& z, const std::vector<int>& term) {
  double p = 1.0;
  for (int k : term) p *= z[static_cast<std::size_t>(k)];
  return p;
}

// Exposure linear predictor without the intercept.
double exposure_lp(const CompleteDataModel& m, const ZRow& z, double a) {
  double lp = m.eta[6] * a;
  for (std::size_t k = 0; k < 5; ++k) lp += m.eta[k + 1] * z[k];
  const auto& terms = exposure_interaction_terms();
  for (std::size_t t = 0; t < terms.size(); ++t) lp += m.eta[7 + t] * product(z, terms[t]);
  return lp;
}

// Outcome mean without the intercept and without the exposure term.
double outcome_rest(const CompleteDataModel& m, const ZRow& z) {
  double mu = 0.0;
  for (std::size_t k = 0; k < 5; ++k) mu += m.theta[k + 2] * z[k];
  const auto& terms = outcome_interaction_terms();
  for (std::size_t t = 0; t < terms.size(); ++t) mu += m.theta[7 + t] * product(z, terms[t]);
  return mu;
}

template <std::size_t N>
bool all_finite(const std::array<double, N>& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

void CompleteDataModel::validate() const {
  if (residual_sd != 1.0) throw Error("complete-data model: residual SD must be 1");
  const bool finite = std::isfinite(alpha0) && std::isfinite(zeta0) && all_finite(beta) &&
                      all_finite(gamma) && all_finite(delta) && all_finite(eta) &&
                      all_finite(theta);
  if (!finite) throw Error("complete-data model: non-finite coefficient");
  if (scenario == Scenario::simple) {
    for (std::size_t k = 7; k < eta.size(); ++k) {
      if (eta[k] != 0.0) throw Error("complete-data model: simple scenario has an exposure interaction");
    }
    for (std::size_t k = 7; k < theta.size(); ++k) {
      if (theta[k] != 0.0) throw Error("complete-data model: simple scenario has an outcome interaction");
    }
  }
}

CompleteDataModel default_complete_model(Scenario s, double main_effect,
                                         double interaction, double ace) {
  CompleteDataModel m;
  m.scenario = s;
  m.beta = {0.0, main_effect};
  m.gamma = {0.0, main_effect};
  m.delta = {0.0, main_effect};
  for (std::size_t k = 1; k <= 6; ++k) m.eta[k] = main_effect;
  m.theta[1] = ace;
  for (std::size_t k = 2; k <= 6; ++k) m.theta[k] = main_effect;
  if (s == Scenario::complex) {
    for (std::size_t k = 7; k < m.eta.size(); ++k) m.eta[k] = interaction;
    for (std::size_t k = 7; k < m.theta.size(); ++k) m.theta[k] = interaction;
  }
  return m;
}

double calibrate_intercept(double target, std::span<const double> lp,
                           double tolerance, std::string_view variable) {
  const std::string name(variable);
  if (!(target > 0.0 && target < 1.0)) {
    throw CalibrationError("calibration of " + name + ": target must be in (0, 1)");
  }
  if (lp.empty()) throw CalibrationError("calibration of " + name + ": no draws");
  for (double v : lp) {
    if (!std::isfinite(v)) {
      throw CalibrationError("calibration of " + name + ": non-finite linear predictor draw");
    }
  }
  const double inv_n = 1.0 / static_cast<double>(lp.size());
  // Returns mean prevalence minus target, and its derivative in c.
  auto eval = [&](double c) {
    double f = 0.0, df = 0.0;
    for (double v : lp) {
      const double p = logit_inv(c + v);
      f += p;
      df += p * (1.0 - p);
    }
    return std::pair{f * inv_n - target, df * inv_n};
  };
  double lo = -20.0, hi = 20.0;
  if (eval(lo).first > 0.0 || eval(hi).first < 0.0) {
    throw CalibrationError("calibration of " + name + ": target prevalence " +
                           format_double(target) + " is not reachable with an intercept in [-20, 20]");
  }
  double c = 0.0;
  auto [f, df] = eval(c);
  for (int it = 0; it < 200 && f != 0.0; ++it) {
    if (f > 0.0) hi = c; else lo = c;
    double next = df > 0.0 ? c - f / df : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == c || hi - lo < 1e-14) break;
    c = next;
    std::tie(f, df) = eval(c);
    if (std::abs(f) < 1e-13) break;
  }
  if (std::abs(f) > tolerance) {
    throw CalibrationError("calibration of " + name + ": did not reach tolerance");
  }
  return c;
}

double calibrate_intercept(double target,
                           const std::function<double(RngStream&)>& sampler,
                           std::size_t draws, RngStream& rng, double tolerance,
                           std::string_view variable) {
  std::vector<double> lp(draws);
  for (auto& v : lp) v = sampler(rng);
  return calibrate_intercept(target, lp, tolerance, variable);
}

namespace {

// Pre-drawn complete records shared by every calibration step, so each
// intercept search sees common random numbers.
struct CompleteBank {
  std::vector<double> a, eps, x, y;
  std::vector<ZRow> z;
};

CompleteBank draw_bank(const CompleteDataModel& m, std::size_t n, std::uint64_t seed,
                       const CompleteDataTargets& t, double tol, bool calibrate,
                       CompleteDataModel* out) {
  RngStream base(seed, 0);
  CompleteBank b;
  b.a.resize(n);
  b.eps.resize(n);
  b.x.resize(n);
  b.y.resize(n);
  b.z.resize(n);
  std::vector<std::array<double, 6>> u(n);
  {
    RngStream r = base.derive(1);
    for (auto& v : b.a) v = r.normal();
  }
  {
    RngStream r = base.derive(2);
    for (auto& row : u) for (auto& v : row) v = r.uniform();
  }
  {
    RngStream r = base.derive(3);
    for (auto& v : b.eps) v = r.normal();
  }

  CompleteDataModel cm = m;
  std::vector<double> lp(n);
  auto calibrate_z = [&](double target, double& intercept, double slope, std::size_t k,
                         const char* name) {
    if (calibrate) {
      for (std::size_t i = 0; i < n; ++i) lp[i] = slope * b.a[i];
      intercept = calibrate_intercept(target, lp, tol, name);
    }
    for (std::size_t i = 0; i < n; ++i) {
      b.z[i][k] = u[i][k] < logit_inv(intercept + slope * b.a[i]) ? 1.0 : 0.0;
    }
  };
  calibrate_z(t.z1, cm.alpha0, 0.0, 0, "Z1");
  calibrate_z(t.z2, cm.beta[0], cm.beta[1], 1, "Z2");
  calibrate_z(t.z3, cm.gamma[0], cm.gamma[1], 2, "Z3");
  calibrate_z(t.z4, cm.delta[0], cm.delta[1], 3, "Z4");
  calibrate_z(t.z5, cm.zeta0, 0.0, 4, "Z5");

  for (std::size_t i = 0; i < n; ++i) lp[i] = exposure_lp(cm, b.z[i], b.a[i]);
  if (calibrate) cm.eta[0] = calibrate_intercept(t.x, lp, tol, "X");
  double rest_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    b.x[i] = u[i][5] < logit_inv(cm.eta[0] + lp[i]) ? 1.0 : 0.0;
    rest_sum += cm.theta[1] * b.x[i] + outcome_rest(cm, b.z[i]);
  }
  if (calibrate) cm.theta[0] = t.y_mean - rest_sum / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.y[i] = cm.theta[0] + cm.theta[1] * b.x[i] + outcome_rest(cm, b.z[i]) +
             cm.residual_sd * b.eps[i];
  }
  if (out) *out = cm;
  return b;
}

}  // namespace

CompleteDataModel calibrate_complete_model(CompleteDataModel m,
                                           const CompleteDataTargets& t,
                                           const CalibrationOptions& opt) {
  m.validate();
  CompleteDataModel out;
  draw_bank(m, opt.draws, opt.seed, t, opt.tolerance, true, &out);
  return out;
}

const CompleteDataModel& calibrated_complete_model(Scenario s, double main_effect,
                                                   double interaction, double ace) {
  static std::mutex mu;
  static std::map<std::tuple<int, double, double, double>, CompleteDataModel> cache;
  const std::lock_guard lock(mu);
  const auto key = std::tuple{static_cast<int>(s), main_effect, interaction, ace};
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, calibrate_complete_model(
                                default_complete_model(s, main_effect, interaction, ace)))
             .first;
  }
  return it->second;
}

SimulatedData generate_complete(const CompleteDataModel& model, std::size_t n,
                                RngStream& rng) {
  if (n == 0) throw Error("generate_complete: n must be at least 1");
  model.validate();
  std::vector<Column> cols;
  for (auto name : kVariableNames) cols.push_back({std::string(name), kind_for_name(name)});
  Eigen::MatrixXd v(static_cast<Index>(n), 8);
  SimulatedData out;
  out.y0.resize(static_cast<Index>(n));
  out.y1.resize(static_cast<Index>(n));
  const CompleteDataModel& m = model;
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = static_cast<Index>(r);
    const double a = rng.normal();
    ZRow z{};
    z[0] = rng.bernoulli(logit_inv(m.alpha0)) ? 1.0 : 0.0;
    z[1] = rng.bernoulli(logit_inv(m.beta[0] + m.beta[1] * a)) ? 1.0 : 0.0;
    z[2] = rng.bernoulli(logit_inv(m.gamma[0] + m.gamma[1] * a)) ? 1.0 : 0.0;
    z[3] = rng.bernoulli(logit_inv(m.delta[0] + m.delta[1] * a)) ? 1.0 : 0.0;
    z[4] = rng.bernoulli(logit_inv(m.zeta0)) ? 1.0 : 0.0;
    const double x = rng.bernoulli(logit_inv(m.eta[0] + exposure_lp(m, z, a))) ? 1.0 : 0.0;
    const double e = m.residual_sd * rng.normal();
    const double base = m.theta[0] + outcome_rest(m, z) + e;
    out.y0[i] = base;
    out.y1[i] = base + m.theta[1];
    v(i, 0) = a;
    for (Index k = 0; k < 5; ++k) v(i, k + 1) = z[static_cast<std::size_t>(k)];
    v(i, 6) = x;
    v(i, 7) = x == 1.0 ? out.y1[i] : out.y0[i];
  }
  out.data = Dataset(std::move(cols), std::move(v));
  return out;
}

void MissingnessModel::set_outcome_coefficient(double c) {
  iota[5] = c;
  kappa[5] = c;
  lambda[5] = c;
  nu[7] = c;
}

void MissingnessModel::set_covariate_indicator_coefficient(double c) {
  kappa[6] = c;
  lambda[6] = c;
  lambda[7] = c;
  nu[8] = c;
  nu[9] = c;
  nu[10] = c;
}

void MissingnessModel::set_outcome_indicator_coefficient(double c) {
  for (std::size_t k = 8; k <= 11; ++k) xi[k] = c;
}

MissingnessModel default_missingness_model(MDag mdag, double slope,
                                           double outcome_coef, double outcome_self) {
  MissingnessModel m;
  m.mdag = mdag;
  if (mdag == MDag::none) return m;
  for (std::size_t k = 1; k <= 4; ++k) {
    m.iota[k] = slope;
    m.kappa[k] = slope;
    m.lambda[k] = slope;
  }
  for (std::size_t k = 1; k <= 6; ++k) {
    m.nu[k] = slope;
    m.xi[k] = slope;
  }
  m.set_outcome_coefficient(mdag == MDag::B ? outcome_coef : 0.0);
  m.xi[7] = outcome_self;
  return m;
}

namespace {

// Values one record offers to the indicator models.
struct RecordView {
  double z1, z2, z3, z4, z5, x, y;
};

// Linear predictors without intercepts, given earlier indicators.
double lp_mz2(const MissingnessModel& m, const RecordView& r) {
  return m.iota[1] * r.z1 + m.iota[2] * r.z5 + m.iota[3] * r.z2 + m.iota[4] * r.x +
         m.iota[5] * r.y;
}
double lp_mz3(const MissingnessModel& m, const RecordView& r, double mz2) {
  return m.kappa[1] * r.z1 + m.kappa[2] * r.z5 + m.kappa[3] * r.z3 + m.kappa[4] * r.x +
         m.kappa[5] * r.y + m.kappa[6] * mz2;
}
double lp_mz4(const MissingnessModel& m, const RecordView& r, double mz2, double mz3) {
  return m.lambda[1] * r.z1 + m.lambda[2] * r.z5 + m.lambda[3] * r.z4 + m.lambda[4] * r.x +
         m.lambda[5] * r.y + m.lambda[6] * mz2 + m.lambda[7] * mz3;
}
double lp_mx(const MissingnessModel& m, const RecordView& r, double mz2, double mz3,
             double mz4) {
  return m.nu[1] * r.z1 + m.nu[2] * r.z5 + m.nu[3] * r.z2 + m.nu[4] * r.z3 +
         m.nu[5] * r.z4 + m.nu[6] * r.x + m.nu[7] * r.y + m.nu[8] * mz2 + m.nu[9] * mz3 +
         m.nu[10] * mz4;
}
double lp_my(const MissingnessModel& m, const RecordView& r, double mz2, double mz3,
             double mz4, double mx) {
  return m.xi[1] * r.z1 + m.xi[2] * r.z5 + m.xi[3] * r.z2 + m.xi[4] * r.z3 +
         m.xi[5] * r.z4 + m.xi[6] * r.x + m.xi[7] * r.y + m.xi[8] * mz2 + m.xi[9] * mz3 +
         m.xi[10] * mz4 + m.xi[11] * mx;
}

struct IndicatorBank {
  std::vector<RecordView> rec;
  std::vector<std::array<double, 5>> u;
};

struct ChainResult {
  double any_xz = 0.0;
  double any = 0.0;
};

// Calibrates the five intercepts on the first n records in turn and returns
// the realised joint missing fractions. Later stages see realised draws of
// earlier indicators. With `with_y` false the M_Y stage is skipped.
ChainResult calibrate_chain(MissingnessModel& m, const IndicatorBank& b, std::size_t n,
                            const MissingnessTargets& t, double tol, bool with_y) {
  std::vector<double> lp(n);
  std::vector<std::array<double, 5>> ind(n);
  auto stage = [&](std::size_t k, double target, double& intercept, const char* name,
                   auto&& lp_of) {
    for (std::size_t i = 0; i < n; ++i) lp[i] = lp_of(i);
    intercept = calibrate_intercept(target, std::span<const double>(lp.data(), n), tol, name);
    for (std::size_t i = 0; i < n; ++i) {
      ind[i][k] = b.u[i][k] < logit_inv(intercept + lp[i]) ? 1.0 : 0.0;
    }
  };
  stage(0, t.z2, m.iota[0], "M_Z2", [&](std::size_t i) { return lp_mz2(m, b.rec[i]); });
  stage(1, t.z3, m.kappa[0], "M_Z3",
        [&](std::size_t i) { return lp_mz3(m, b.rec[i], ind[i][0]); });
  stage(2, t.z4, m.lambda[0], "M_Z4",
        [&](std::size_t i) { return lp_mz4(m, b.rec[i], ind[i][0], ind[i][1]); });
  stage(3, t.x, m.nu[0], "M_X",
        [&](std::size_t i) { return lp_mx(m, b.rec[i], ind[i][0], ind[i][1], ind[i][2]); });
  if (with_y) {
    stage(4, t.y, m.xi[0], "M_Y", [&](std::size_t i) {
      return lp_my(m, b.rec[i], ind[i][0], ind[i][1], ind[i][2], ind[i][3]);
    });
  }
  ChainResult r;
  for (std::size_t i = 0; i < n; ++i) {
    const bool xz = ind[i][0] + ind[i][1] + ind[i][2] + ind[i][3] > 0.0;
    r.any_xz += xz ? 1.0 : 0.0;
    r.any += (xz || (with_y && ind[i][4] > 0.0)) ? 1.0 : 0.0;
  }
  r.any_xz /= static_cast<double>(n);
  r.any /= static_cast<double>(n);
  return r;
}

// Finds the coefficient at which the decreasing function `frac` meets
// `target`, on [-3, 6].
double solve_decreasing(const std::function<double(double)>& frac, double target,
                        double tol, const std::string& what) {
  double lo = -3.0, hi = 6.0;
  const double f_lo = frac(lo) - target;
  const double f_hi = frac(hi) - target;
  if (f_lo < 0.0 || f_hi > 0.0) {
    throw CalibrationError("calibration of " + what + ": joint missing fraction " +
                           format_double(target) + " is not reachable");
  }
  double c = 0.5 * (lo + hi);
  for (int it = 0; it < 60; ++it) {
    c = 0.5 * (lo + hi);
    const double f = frac(c) - target;
    if (std::abs(f) < tol) break;
    if (f > 0.0) lo = c; else hi = c;
  }
  return c;
}

}  // namespace

MissingnessModel calibrate_missingness_model(MissingnessModel m,
                                             const CompleteDataModel& complete,
                                             const MissingnessTargets& t,
                                             const CalibrationOptions& opt) {
  if (m.mdag == MDag::none) return m;
  const std::size_t n = opt.draws;
  const CompleteBank cb =
      draw_bank(complete, n, opt.seed, CompleteDataTargets{}, opt.tolerance, false, nullptr);
  IndicatorBank b;
  b.rec.resize(n);
  b.u.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& z = cb.z[i];
    b.rec[i] = {z[0], z[1], z[2], z[3], z[4], cb.x[i], cb.y[i]};
  }
  {
    RngStream r = RngStream(opt.seed, 0).derive(4);
    for (auto& row : b.u) for (auto& v : row) v = r.uniform();
  }

  // The shared coefficients are searched on a sub-sample; the final
  // intercepts use every draw.
  const std::size_t n_search = std::min<std::size_t>(n, 200'000);
  const double joint_tol = 0.001;
  const double omega1 = solve_decreasing(
      [&](double w) {
        MissingnessModel trial = m;
        trial.set_covariate_indicator_coefficient(w);
        return calibrate_chain(trial, b, n_search, t, opt.tolerance, false).any_xz;
      },
      t.any_exposure_or_confounder, joint_tol, "indicator-on-indicator coefficient");
  m.set_covariate_indicator_coefficient(omega1);
  const double omega2 = solve_decreasing(
      [&](double w) {
        MissingnessModel trial = m;
        trial.set_outcome_indicator_coefficient(w);
        return calibrate_chain(trial, b, n_search, t, opt.tolerance, true).any;
      },
      t.any, joint_tol, "outcome-indicator coefficient");
  m.set_outcome_indicator_coefficient(omega2);
  calibrate_chain(m, b, n, t, opt.tolerance, true);
  return m;
}

const MissingnessModel& calibrated_missingness_model(Scenario s, MDag mdag,
                                                     double main_effect,
                                                     double interaction, double ace) {
  const CompleteDataModel& complete =
      calibrated_complete_model(s, main_effect, interaction, ace);
  static std::mutex mu;
  static std::map<std::tuple<int, int, double, double, double>, MissingnessModel> cache;
  const std::lock_guard lock(mu);
  const auto key = std::tuple{static_cast<int>(s), static_cast<int>(mdag), main_effect,
                              interaction, ace};
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, calibrate_missingness_model(default_missingness_model(mdag),
                                                        complete))
             .first;
  }
  return it->second;
}

Dataset impose_missingness(const Dataset& complete, const MissingnessModel& m,
                           RngStream& rng) {
  if (complete.any_missing()) throw Error("impose_missingness: input already has missing cells");
  const std::size_t n = complete.rows();
  const std::size_t j[7] = {complete.index_of("Z1"), complete.index_of("Z2"),
                            complete.index_of("Z3"), complete.index_of("Z4"),
                            complete.index_of("Z5"), complete.index_of("X"),
                            complete.index_of("Y")};
  std::vector<std::uint8_t> mask(complete.mask().begin(), complete.mask().end());
  if (m.mdag == MDag::none) return complete;
  auto set = [&](std::size_t i, std::size_t col) { mask[col * n + i] = 1; };
  for (std::size_t i = 0; i < n; ++i) {
    const RecordView r{complete.underlying(i, j[0]), complete.underlying(i, j[1]),
                       complete.underlying(i, j[2]), complete.underlying(i, j[3]),
                       complete.underlying(i, j[4]), complete.underlying(i, j[5]),
                       complete.underlying(i, j[6])};
    const double mz2 = rng.bernoulli(logit_inv(m.iota[0] + lp_mz2(m, r))) ? 1.0 : 0.0;
    const double mz3 = rng.bernoulli(logit_inv(m.kappa[0] + lp_mz3(m, r, mz2))) ? 1.0 : 0.0;
    const double mz4 =
        rng.bernoulli(logit_inv(m.lambda[0] + lp_mz4(m, r, mz2, mz3))) ? 1.0 : 0.0;
    const double mx =
        rng.bernoulli(logit_inv(m.nu[0] + lp_mx(m, r, mz2, mz3, mz4))) ? 1.0 : 0.0;
    const double my =
        rng.bernoulli(logit_inv(m.xi[0] + lp_my(m, r, mz2, mz3, mz4, mx))) ? 1.0 : 0.0;
    if (mz2 > 0.0) set(i, j[1]);
    if (mz3 > 0.0) set(i, j[2]);
    if (mz4 > 0.0) set(i, j[3]);
    if (mx > 0.0) set(i, j[5]);
    if (my > 0.0) set(i, j[6]);
  }
  return complete.with_mask(std::move(mask));
}

}  // namespace tmlemiss
