#include "tmlemiss/tmle.hpp"

#include <algorithm>
#include <cmath>

namespace tmlemiss {

using Eigen::Index;
using Eigen::VectorXd;

std::vector<std::string> default_covariates(const Dataset& d) {
  std::vector<std::string> out;
  for (const auto& c : d.columns()) {
    if (c.name != "A" && c.name != "X" && c.name != "Y") out.push_back(c.name);
  }
  return out;
}

DesignMatrix outcome_design(const Dataset& d,
                            std::span<const std::string> covariates,
                            std::optional<double> set_exposure) {
  DesignMatrix out;
  out.x.resize(static_cast<Index>(d.rows()),
               static_cast<Index>(covariates.size() + 1));
  out.x.col(0) = set_exposure
                     ? VectorXd::Constant(static_cast<Index>(d.rows()), *set_exposure)
                     : d.column("X");
  out.names.push_back("X");
  for (std::size_t c = 0; c < covariates.size(); ++c) {
    out.x.col(static_cast<Index>(c + 1)) = d.column(covariates[c]);
    out.names.push_back(covariates[c]);
  }
  return out;
}

double gcompute_ate(
    const Dataset& d, std::span<const std::string> covariates,
    const std::function<VectorXd(const DesignMatrix&)>& qbar) {
  const VectorXd q1 = qbar(outcome_design(d, covariates, 1.0));
  const VectorXd q0 = qbar(outcome_design(d, covariates, 0.0));
  return (q1 - q0).mean();
}

double fluctuate(const VectorXd& y, const VectorXd& offset, const VectorXd& h) {
  if (h.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  auto loglik = [&](double eps) {
    double ll = 0.0;
    for (Index i = 0; i < y.size(); ++i) {
      const double eta = offset[i] + eps * h[i];
      // log(expit(eta)) and log(1 - expit(eta)) without cancellation.
      const double log_p = -std::log1p(std::exp(-std::abs(eta))) + std::min(eta, 0.0);
      const double log_q = log_p - eta;
      ll += y[i] * log_p + (1.0 - y[i]) * log_q;
    }
    return ll;
  };
  const double scale = 1.0 + h.cwiseAbs().sum();
  double eps = 0.0;
  double ll = loglik(eps);
  for (int it = 0; it < 100; ++it) {
    double score = 0.0, info = 0.0;
    for (Index i = 0; i < y.size(); ++i) {
      const double mu = logit_inv(offset[i] + eps * h[i]);
      score += h[i] * (y[i] - mu);
      info += h[i] * h[i] * mu * (1.0 - mu);
    }
    if (std::abs(score) < 1e-13 * scale || info <= 0.0) break;
    double step = score / info;
    double next = eps + step;
    double next_ll = loglik(next);
    for (int half = 0; half < 40 && next_ll < ll - 1e-12 * std::abs(ll); ++half) {
      step *= 0.5;
      next = eps + step;
      next_ll = loglik(next);
    }
    if (next == eps) break;
    eps = next;
    ll = next_ll;
  }
  return eps;
}

namespace {

VectorXd logit_vec(const VectorXd& p) {
  return p.unaryExpr([](double v) { return logit(v); });
}

TmleFit run_tmle(const Dataset& d, const TmleConfig& cfg, RngStream& rng,
                 bool allow_missing_y) {
  TmleFit fit;
  fit.covariates = cfg.covariates.empty() ? default_covariates(d) : cfg.covariates;
  const std::size_t n = d.rows();
  if (n == 0) throw Error("tmle: no records");
  fit.n = n;

  const std::size_t jx = d.index_of("X");
  const std::size_t jy = d.index_of("Y");
  if (d.column_has_missing(jx)) throw Error("tmle: exposure X has missing values");
  for (const auto& c : fit.covariates) {
    if (d.column_has_missing(d.index_of(c))) {
      throw Error("tmle: covariate " + c + " has missing values");
    }
  }
  if (!allow_missing_y && d.column_has_missing(jy)) {
    throw Error("tmle: outcome Y has missing values");
  }

  std::vector<std::size_t> obs;
  for (std::size_t i = 0; i < n; ++i) {
    if (!d.missing(i, jy)) obs.push_back(i);
  }
  if (obs.empty()) throw Error("tmle: every outcome is missing");
  fit.n_observed_y = obs.size();
  const bool has_missing_y = obs.size() < n;

  VectorXd y_obs(static_cast<Index>(obs.size()));
  for (std::size_t r = 0; r < obs.size(); ++r) {
    y_obs[static_cast<Index>(r)] = d.value(obs[r], jy);
  }
  fit.lower = y_obs.minCoeff();
  fit.upper = y_obs.maxCoeff();
  const double range = fit.upper - fit.lower;
  if (!(range > 0.0)) throw Error("tmle: outcome is constant");
  const VectorXd ystar = (y_obs.array() - fit.lower) / range;

  const DesignMatrix x_all = outcome_design(d, fit.covariates);
  const DesignMatrix x1 = outcome_design(d, fit.covariates, 1.0);
  const DesignMatrix x0 = outcome_design(d, fit.covariates, 0.0);
  const DesignMatrix z_all = make_design(d, fit.covariates);
  const VectorXd xcol = d.column(jx);

  // Outcome model on the observed-outcome records.
  {
    RngStream r = rng.derive(1);
    fit.qbar = fit_superlearner(select_rows(x_all, obs), ystar, Family::gaussian,
                                cfg.q_library, cfg.folds, r);
  }
  {
    RngStream r = rng.derive(2);
    fit.g = fit_superlearner(z_all, xcol, Family::binomial, cfg.g_library,
                             cfg.folds, r);
  }
  VectorXd delta_obs = VectorXd::Ones(static_cast<Index>(n));
  VectorXd delta1 = delta_obs;
  VectorXd delta0 = delta_obs;
  if (has_missing_y) {
    VectorXd observed(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      observed[static_cast<Index>(i)] = d.missing(i, jy) ? 0.0 : 1.0;
    }
    RngStream r = rng.derive(3);
    fit.delta = fit_superlearner(x_all, observed, Family::binomial,
                                 cfg.delta_library, cfg.folds, r);
    auto bound = [&](VectorXd v) {
      for (Index i = 0; i < v.size(); ++i) {
        if (v[i] < cfg.delta_bound) {
          v[i] = cfg.delta_bound;
          ++fit.delta_truncated;
        }
        v[i] = std::min(v[i], 1.0);
      }
      return v;
    };
    delta_obs = bound(fit.delta->predict(x_all));
    const std::size_t truncated_at_observed = fit.delta_truncated;
    delta1 = bound(fit.delta->predict(x1));
    delta0 = bound(fit.delta->predict(x0));
    fit.delta_truncated = truncated_at_observed;
    if (fit.delta_truncated * 2 > n) {
      fit.warnings.push_back("outcome-observation probability truncated for " +
                             std::to_string(fit.delta_truncated) + " of " +
                             std::to_string(n) + " records");
    }
  }

  auto bound_q = [&](VectorXd v) {
    return VectorXd(v.cwiseMax(cfg.q_bound).cwiseMin(1.0 - cfg.q_bound));
  };
  const VectorXd q_a = bound_q(fit.qbar->predict(x_all));
  const VectorXd q_1 = bound_q(fit.qbar->predict(x1));
  const VectorXd q_0 = bound_q(fit.qbar->predict(x0));
  fit.psi_initial = (q_1 - q_0).mean() * range;

  VectorXd g = fit.g->predict(z_all);
  for (Index i = 0; i < g.size(); ++i) {
    const double b = std::clamp(g[i], cfg.g_bound, 1.0 - cfg.g_bound);
    if (b != g[i]) ++fit.g_truncated;
    g[i] = b;
  }
  fit.g_values = g;
  if (fit.g_truncated * 2 > n) {
    fit.warnings.push_back("propensity score truncated for " +
                           std::to_string(fit.g_truncated) + " of " +
                           std::to_string(n) + " records");
  }

  // Clever covariates: observed exposure, and each counterfactual level.
  VectorXd h_a(static_cast<Index>(n)), h_1(static_cast<Index>(n)),
      h_0(static_cast<Index>(n));
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double hx = xcol[i] / g[i] - (1.0 - xcol[i]) / (1.0 - g[i]);
    h_a[i] = hx / delta_obs[i];
    h_1[i] = (1.0 / g[i]) / delta1[i];
    h_0[i] = (-1.0 / (1.0 - g[i])) / delta0[i];
  }

  VectorXd off(static_cast<Index>(obs.size())), h_obs(static_cast<Index>(obs.size()));
  for (std::size_t r = 0; r < obs.size(); ++r) {
    off[static_cast<Index>(r)] = logit(q_a[static_cast<Index>(obs[r])]);
    h_obs[static_cast<Index>(r)] = h_a[static_cast<Index>(obs[r])];
  }
  fit.epsilon = fluctuate(ystar, off, h_obs);

  const VectorXd l1 = logit_vec(q_1);
  const VectorXd l0 = logit_vec(q_0);
  fit.q1_star = (l1 + fit.epsilon * h_1).unaryExpr([](double e) { return logit_inv(e); });
  fit.q0_star = (l0 + fit.epsilon * h_0).unaryExpr([](double e) { return logit_inv(e); });
  fit.psi_scaled = (fit.q1_star - fit.q0_star).mean();

  fit.ic = fit.q1_star - fit.q0_star;
  fit.ic.array() -= fit.psi_scaled;
  double score = 0.0;
  for (std::size_t r = 0; r < obs.size(); ++r) {
    const auto i = static_cast<Index>(obs[r]);
    const double qstar = logit_inv(off[static_cast<Index>(r)] +
                                   fit.epsilon * h_obs[static_cast<Index>(r)]);
    const double term = h_obs[static_cast<Index>(r)] *
                        (ystar[static_cast<Index>(r)] - qstar);
    fit.ic[i] += term;
    score += term;
  }
  fit.score_residual = score;

  const std::span<const double> ic(fit.ic.data(), static_cast<std::size_t>(fit.ic.size()));
  fit.se = std::sqrt(sample_variance(ic) / static_cast<double>(n)) * range;
  fit.psi = fit.psi_scaled * range;

  for (const auto* m : {&*fit.qbar, &*fit.g}) {
    fit.warnings.insert(fit.warnings.end(), m->warnings().begin(), m->warnings().end());
  }
  if (fit.delta) {
    fit.warnings.insert(fit.warnings.end(), fit.delta->warnings().begin(),
                        fit.delta->warnings().end());
  }
  return fit;
}

EstimateResult to_estimate(const TmleFit& fit, Method method) {
  auto r = make_estimate(method, fit.psi, fit.se, fit.n);
  r.warnings = fit.warnings;
  return r;
}

}  // namespace

TmleFit tmle_fit(const Dataset& d, const TmleConfig& cfg, RngStream& rng) {
  return run_tmle(d, cfg, rng, false);
}

TmleFit tmle_fit_extended(const Dataset& d, const TmleConfig& cfg,
                          RngStream& rng) {
  return run_tmle(d, cfg, rng, true);
}

EstimateResult tmle_ate(const Dataset& d, const TmleConfig& cfg, RngStream& rng,
                        Method method) {
  return to_estimate(tmle_fit(d, cfg, rng), method);
}

EstimateResult tmle_ate_extended(const Dataset& d, const TmleConfig& cfg,
                                 RngStream& rng, Method method) {
  return to_estimate(tmle_fit_extended(d, cfg, rng), method);
}

}  // namespace tmlemiss
