#include "tmlemiss/missing.hpp"

#include <algorithm>
#include <cmath>

namespace tmlemiss {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

const std::vector<std::string>& analysis_variables() {
  static const std::vector<std::string> vars = {"Z1", "Z2", "Z3", "Z4", "Z5", "X", "Y"};
  return vars;
}

bool is_confounder(std::string_view name) {
  return name.size() == 2 && name[0] == 'Z';
}

}  // namespace

EstimateResult cca_estimate(const Dataset& d, const TmleConfig& cfg, RngStream& rng) {
  const auto cc = complete_cases(d, analysis_variables());
  if (cc.empty) throw Error("complete-case analysis: no complete records");
  return tmle_ate(cc.data, cfg, rng, Method::cca);
}

EstimateResult ext_tmle_cec(const Dataset& d, const TmleConfig& cfg, RngStream& rng) {
  const std::vector<std::string> xz = {"Z1", "Z2", "Z3", "Z4", "Z5", "X"};
  const auto cc = complete_cases(d, xz);
  if (cc.empty) throw Error("extended TMLE: no records with exposure and confounders observed");
  return tmle_ate_extended(cc.data, cfg, rng, Method::ext_tmle);
}

Dataset mcmi_transform(const Dataset& d) {
  const std::vector<std::string> x = {"X"};
  Dataset out = complete_cases(d, x).data;
  const std::size_t n = out.rows();
  std::vector<std::pair<Column, VectorXd>> indicators;
  for (std::size_t j = 0; j < out.cols(); ++j) {
    const std::string& name = out.column_info(j).name;
    if (!is_confounder(name) || !out.column_has_missing(j)) continue;
    VectorXd ind(static_cast<Index>(n));
    std::vector<std::uint8_t> mask(out.mask().begin(), out.mask().end());
    Eigen::MatrixXd values = out.underlying_values();
    for (std::size_t i = 0; i < n; ++i) {
      const bool miss = out.missing(i, j);
      ind[static_cast<Index>(i)] = miss ? 1.0 : 0.0;
      if (miss) {
        values(static_cast<Index>(i), static_cast<Index>(j)) = 0.0;
        mask[j * n + i] = 0;
      }
    }
    out = Dataset(out.columns(), std::move(values), std::move(mask));
    // Every record missing: the indicator is constant, so it carries nothing.
    if (ind.minCoeff() != ind.maxCoeff()) {
      indicators.emplace_back(Column{"M_" + name, ColumnKind::binary}, std::move(ind));
    }
  }
  for (auto& [col, v] : indicators) out = out.with_column(col, v);
  return out;
}

EstimateResult ext_tmle_mcmi(const Dataset& d, const TmleConfig& cfg, RngStream& rng) {
  const Dataset t = mcmi_transform(d);
  if (t.rows() == 0) throw Error("MCMI: every exposure value is missing");
  return tmle_ate_extended(t, cfg, rng, Method::ext_tmle_mcmi);
}

double PooledResult::se() const { return std::sqrt(t); }

PooledResult rubin_pool(std::span<const double> estimates, std::span<const double> ses) {
  if (estimates.size() != ses.size()) {
    throw Error("rubin_pool: estimate and SE counts differ");
  }
  if (estimates.size() < 2) throw Error("rubin_pool: at least two imputations are required");
  PooledResult r;
  r.m = estimates.size();
  r.qbar = mean(estimates);
  double w = 0.0;
  for (double s : ses) {
    if (!(s >= 0.0)) throw Error("rubin_pool: standard errors must be non-negative");
    w += s * s;
  }
  r.w = w / static_cast<double>(r.m);
  r.b = sample_variance(estimates);
  r.t = r.w + (1.0 + 1.0 / static_cast<double>(r.m)) * r.b;
  return r;
}

EstimateResult mi_estimate(const Dataset& d, const ImputationSpec& spec, const TmleConfig& cfg,
                           RngStream& rng, Method label, std::vector<Dataset>* imputed) {
  RngStream imp_rng = rng.derive(0);
  ImputationResult imp = mice_impute(d, spec, imp_rng);
  std::vector<double> psi, se;
  std::vector<std::string> warnings = imp.warnings;
  for (const auto& completed : imp.completed) {
    RngStream analysis = rng.derive(1);
    const auto r = tmle_ate(completed, cfg, analysis, label);
    psi.push_back(r.psi);
    se.push_back(r.se);
    warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  const PooledResult pooled = rubin_pool(psi, se);
  EstimateResult out = make_estimate(label, pooled.qbar, pooled.se(), d.rows());
  std::sort(warnings.begin(), warnings.end());
  warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());
  out.warnings = std::move(warnings);
  if (imputed) *imputed = std::move(imp.completed);
  return out;
}

EstimateResult run_method(Method method, const Dataset& d, const MethodConfig& cfg,
                          RngStream& rng, std::vector<Dataset>* imputed) {
  switch (method) {
    case Method::cca: return cca_estimate(d, cfg.tmle, rng);
    case Method::ext_tmle: return ext_tmle_cec(d, cfg.tmle, rng);
    case Method::ext_tmle_mcmi: return ext_tmle_mcmi(d, cfg.tmle, rng);
    default: break;
  }
  ImputationSpec spec = make_imputation_spec(imputation_method_for(method));
  spec.m = cfg.imputations;
  spec.cycles = cfg.cycles;
  spec.pmm_donors = cfg.pmm_donors;
  spec.rf_trees = cfg.rf_trees;
  spec.pmm_matching = cfg.pmm_matching;
  return mi_estimate(d, spec, cfg.tmle, rng, method, imputed);
}

}  // namespace tmlemiss
