#include "tmlemiss/missing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tmlemiss {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(ImputationMethod m) {
  switch (m) {
    case ImputationMethod::noint: return "noint";
    case ImputationMethod::twoway: return "twoway";
    case ImputationMethod::higher: return "higher";
    case ImputationMethod::cart: return "cart";
    case ImputationMethod::rf: return "rf";
  }
  return "?";
}

ImputationMethod imputation_method_for(Method m) {
  switch (m) {
    case Method::mi_noint: return ImputationMethod::noint;
    case Method::mi_2way: return ImputationMethod::twoway;
    case Method::mi_higher: return ImputationMethod::higher;
    case Method::mi_cart: return ImputationMethod::cart;
    case Method::mi_rf: return ImputationMethod::rf;
    default: break;
  }
  throw Error("method " + method_token(m) + " does not impute");
}

std::string term_name(const Term& t) {
  std::string s;
  for (const auto& v : t) s += v;
  return s;
}

bool InclusionMatrix::has_target(std::string_view target) const {
  return std::find(targets.begin(), targets.end(), target) != targets.end();
}

bool InclusionMatrix::includes(std::string_view target, std::string_view term) const {
  const auto r = std::find(targets.begin(), targets.end(), target);
  if (r == targets.end()) throw Error("inclusion matrix: no row for " + std::string(target));
  for (std::size_t c = 0; c < terms.size(); ++c) {
    if (term_name(terms[c]) == term) {
      return flags[static_cast<std::size_t>(r - targets.begin())][c] != 0;
    }
  }
  throw Error("inclusion matrix: no term " + std::string(term));
}

std::vector<Term> InclusionMatrix::predictors_for(std::string_view target) const {
  const auto r = std::find(targets.begin(), targets.end(), target);
  if (r == targets.end()) throw Error("inclusion matrix: no row for " + std::string(target));
  const auto& row = flags[static_cast<std::size_t>(r - targets.begin())];
  std::vector<Term> out;
  for (std::size_t c = 0; c < terms.size(); ++c) {
    if (row[c]) out.push_back(terms[c]);
  }
  return out;
}

std::vector<Term> twoway_interaction_terms() {
  return {{"X", "Y"},   {"X", "Z1"},  {"Y", "Z1"},  {"X", "Z3"},  {"Y", "Z3"},
          {"X", "Z4"},  {"Y", "Z4"},  {"X", "Z5"},  {"Y", "Z5"},  {"Z1", "Z3"},
          {"Z1", "Z4"}, {"Z1", "Z5"}, {"Z3", "Z4"}, {"Z3", "Z5"}, {"Z4", "Z5"}};
}

std::vector<Term> higher_interaction_terms() {
  return {{"Z1", "Z3", "Z4"}, {"Z1", "Z3", "Z5"}, {"Z1", "Z4", "Z5"}, {"Z3", "Z4", "Z5"},
          {"Z1", "Z3", "Z4", "Z5"}};
}

namespace {

std::vector<Term> main_effect_terms() {
  std::vector<Term> out;
  for (auto v : kVariableNames) out.push_back({std::string(v)});
  return out;
}

bool term_contains(const Term& t, std::string_view v) {
  return std::find(t.begin(), t.end(), v) != t.end();
}

}  // namespace

InclusionMatrix published_twoway_table() {
  InclusionMatrix m;
  m.targets = {"Z2", "Z3", "Z4", "X", "Y"};
  m.terms = main_effect_terms();
  for (auto& t : twoway_interaction_terms()) m.terms.push_back(t);
  // Printed rows carry one entry more than the header has columns; the
  // trailing entry is not read.
  static const std::uint8_t printed[5][24] = {
      {1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1},
      {1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 0, 0, 1, 1},
      {1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 1, 0, 1, 0, 1},
      {1, 1, 1, 1, 1, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1},
      {1, 1, 1, 1, 1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1}};
  for (const auto& row : printed) {
    m.flags.emplace_back(row, row + m.terms.size());
  }
  return m;
}

InclusionMatrix inclusion_by_rule(ImputationMethod method,
                                  const std::vector<std::string>& targets) {
  InclusionMatrix m;
  m.targets = targets;
  m.terms = main_effect_terms();
  if (method == ImputationMethod::twoway || method == ImputationMethod::higher) {
    for (auto& t : twoway_interaction_terms()) m.terms.push_back(t);
  }
  if (method == ImputationMethod::higher) {
    for (auto& t : higher_interaction_terms()) m.terms.push_back(t);
  }
  for (const auto& target : targets) {
    std::vector<std::uint8_t> row;
    for (const auto& t : m.terms) row.push_back(term_contains(t, target) ? 0 : 1);
    m.flags.push_back(std::move(row));
  }
  return m;
}

void ImputationSpec::validate() const {
  if (m < 1) throw Error("imputation: m must be at least 1");
  if (cycles < 1) throw Error("imputation: cycles must be at least 1");
  if (pmm_donors < 1) throw Error("imputation: pmm_donors must be at least 1");
  if (rf_trees < 1) throw Error("imputation: rf_trees must be at least 1");
  if (inclusion.flags.size() != inclusion.targets.size()) {
    throw Error("imputation: inclusion matrix has mismatched rows");
  }
  for (const auto& row : inclusion.flags) {
    if (row.size() != inclusion.terms.size()) {
      throw Error("imputation: inclusion matrix has mismatched columns");
    }
  }
}

ImputationSpec make_imputation_spec(ImputationMethod method) {
  ImputationSpec s;
  s.method = method;
  return s;
}

namespace {

MatrixXd with_intercept(const MatrixXd& x) {
  MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

// Draws beta* = beta_hat + scale * L z over the kept terms, where L L' is
// the fit's covariance.
VectorXd draw_coefficients(const GlmFit& fit, double scale, RngStream& rng) {
  std::vector<Index> pos{0};
  for (auto k : fit.kept) pos.push_back(static_cast<Index>(k + 1));
  const Index p = static_cast<Index>(pos.size());
  if (fit.covariance.rows() != p) throw Error("imputation: covariance shape mismatch");
  Eigen::LLT<MatrixXd> llt(fit.covariance);
  if (llt.info() != Eigen::Success) throw Error("imputation: covariance not positive definite");
  VectorXd z(p);
  for (Index k = 0; k < p; ++k) z[k] = rng.normal();
  const VectorXd shift = scale * VectorXd(llt.matrixL() * z);
  VectorXd beta = fit.coefficients;
  for (Index k = 0; k < p; ++k) beta[pos[static_cast<std::size_t>(k)]] += shift[k];
  if (!beta.allFinite()) throw Error("imputation: non-finite coefficient draw");
  return beta;
}

double uniform_member(std::span<const std::size_t> members, const VectorXd& y, RngStream& rng) {
  if (members.empty()) throw Error("imputation: empty donor set");
  return y[static_cast<Index>(members[rng.uniform_index(members.size())])];
}

}  // namespace

VectorXd impute_logreg(const MatrixXd& x_obs, const VectorXd& y_obs, const MatrixXd& x_mis,
                       RngStream& rng) {
  const GlmFit fit = fit_glm_design(with_intercept(x_obs), y_obs, Family::binomial, {}, {});
  const VectorXd beta = draw_coefficients(fit, 1.0, rng);
  const VectorXd eta = with_intercept(x_mis) * beta;
  VectorXd out(x_mis.rows());
  for (Index i = 0; i < out.size(); ++i) out[i] = rng.bernoulli(logit_inv(eta[i])) ? 1.0 : 0.0;
  return out;
}

VectorXd impute_pmm(const MatrixXd& x_obs, const VectorXd& y_obs, const MatrixXd& x_mis,
                    std::size_t donors, bool matching, RngStream& rng) {
  const MatrixXd d_obs = with_intercept(x_obs);
  const GlmFit fit = fit_glm_design(d_obs, y_obs, Family::gaussian, {}, {});
  const auto df = static_cast<std::size_t>(fit.df_residual);
  if (df < 1) throw Error("imputation: no residual degrees of freedom");
  double chi2 = 0.0;
  for (std::size_t k = 0; k < df; ++k) {
    const double z = rng.normal();
    chi2 += z * z;
  }
  const double sigma = std::sqrt(fit.rss / chi2);
  const VectorXd beta_star = draw_coefficients(fit, sigma, rng);
  const VectorXd pred_mis = with_intercept(x_mis) * beta_star;
  VectorXd out(x_mis.rows());
  if (!matching) {
    for (Index i = 0; i < out.size(); ++i) out[i] = pred_mis[i] + sigma * rng.normal();
    return out;
  }
  const VectorXd pred_obs = d_obs * fit.coefficients;
  const auto n_obs = static_cast<std::size_t>(pred_obs.size());
  std::vector<std::size_t> order(n_obs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred_obs[static_cast<Index>(a)] < pred_obs[static_cast<Index>(b)];
  });
  std::vector<double> sorted(n_obs);
  for (std::size_t k = 0; k < n_obs; ++k) sorted[k] = pred_obs[static_cast<Index>(order[k])];
  const std::size_t take = std::min(donors, n_obs);
  std::vector<std::size_t> pool;
  for (Index i = 0; i < out.size(); ++i) {
    const double target = pred_mis[i];
    // Two-pointer walk outwards from the insertion point.
    std::size_t hi = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), target) - sorted.begin());
    std::size_t lo = hi;  // candidates are [lo, hi)
    pool.clear();
    while (pool.size() < take) {
      const bool can_left = lo > 0;
      const bool can_right = hi < n_obs;
      if (can_left && (!can_right || target - sorted[lo - 1] <= sorted[hi] - target)) {
        pool.push_back(order[--lo]);
      } else {
        pool.push_back(order[hi++]);
      }
    }
    out[i] = uniform_member(pool, y_obs, rng);
  }
  return out;
}

VectorXd impute_cart(const MatrixXd& x_obs, const VectorXd& y_obs, const MatrixXd& x_mis,
                     const CartParams& params, RngStream& rng) {
  std::vector<std::size_t> all(static_cast<std::size_t>(x_obs.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Tree tree = grow_tree(x_obs, y_obs, all, params, 0, nullptr);
  VectorXd out(x_mis.rows());
  for (Index i = 0; i < out.size(); ++i) {
    const auto& leaf = tree.nodes()[tree.leaf_for(x_mis.row(i))];
    out[i] = uniform_member(leaf.members, y_obs, rng);
  }
  return out;
}

VectorXd impute_rf(const MatrixXd& x_obs, const VectorXd& y_obs, const MatrixXd& x_mis,
                   std::size_t trees, const CartParams& params, RngStream& rng) {
  DesignMatrix dm;
  dm.x = x_obs;
  for (Index j = 0; j < x_obs.cols(); ++j) dm.names.push_back("v" + std::to_string(j));
  ForestParams fp;
  fp.n_trees = trees;
  fp.tree = params;
  const RngStream forest_rng = rng.derive(0);
  RngStream fr = forest_rng;
  const LearnerModel model = fit_random_forest(dm, y_obs, Family::gaussian, fp, fr);
  const auto& forest = model.forest().trees;

  // Donors of a leaf: every observed record that falls in it.
  std::vector<std::vector<std::vector<std::size_t>>> by_leaf(forest.size());
  for (std::size_t t = 0; t < forest.size(); ++t) {
    by_leaf[t].resize(forest[t].nodes().size());
    for (Index i = 0; i < x_obs.rows(); ++i) {
      by_leaf[t][forest[t].leaf_for(x_obs.row(i))].push_back(static_cast<std::size_t>(i));
    }
  }
  VectorXd out(x_mis.rows());
  std::vector<std::size_t> pool;
  for (Index i = 0; i < out.size(); ++i) {
    pool.clear();
    for (std::size_t t = 0; t < forest.size(); ++t) {
      const auto& members = by_leaf[t][forest[t].leaf_for(x_mis.row(i))];
      pool.insert(pool.end(), members.begin(), members.end());
    }
    out[i] = uniform_member(pool, y_obs, rng);
  }
  return out;
}

namespace {

struct Target {
  std::size_t col = 0;
  std::vector<std::size_t> obs, mis;
  VectorXd y_obs;
  // Each predictor term as dataset column indices.
  std::vector<std::vector<std::size_t>> terms;
};

MatrixXd build_predictors(const MatrixXd& cur, const Target& t,
                          std::span<const std::size_t> rows) {
  MatrixXd x(static_cast<Index>(rows.size()), static_cast<Index>(t.terms.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Index>(rows[r]);
    for (std::size_t c = 0; c < t.terms.size(); ++c) {
      double v = 1.0;
      for (auto j : t.terms[c]) v *= cur(i, static_cast<Index>(j));
      x(static_cast<Index>(r), static_cast<Index>(c)) = v;
    }
  }
  return x;
}

}  // namespace

ImputationResult mice_impute(const Dataset& d, const ImputationSpec& spec, RngStream& rng) {
  spec.validate();
  const std::size_t n = d.rows();
  std::vector<Target> targets;
  for (std::size_t j = 0; j < d.cols(); ++j) {
    if (!d.column_has_missing(j)) continue;
    const std::string& name = d.column_info(j).name;
    Target t;
    t.col = j;
    for (std::size_t i = 0; i < n; ++i) (d.missing(i, j) ? t.mis : t.obs).push_back(i);
    if (t.obs.size() < spec.min_observed) {
      throw Error("imputation: " + name + " has " + std::to_string(t.obs.size()) +
                  " observed values, fewer than " + std::to_string(spec.min_observed));
    }
    t.y_obs.resize(static_cast<Index>(t.obs.size()));
    for (std::size_t r = 0; r < t.obs.size(); ++r) {
      t.y_obs[static_cast<Index>(r)] = d.value(t.obs[r], j);
    }
    const InclusionMatrix rule = spec.inclusion.has_target(name)
                                     ? spec.inclusion
                                     : inclusion_by_rule(spec.method, {name});
    for (const auto& term : rule.predictors_for(name)) {
      if (term_contains(term, name)) {
        throw Error("imputation: model for " + name + " would contain term " + term_name(term));
      }
      std::vector<std::size_t> cols;
      bool present = true;
      for (const auto& v : term) {
        if (!d.has_column(v)) {
          present = false;
          break;
        }
        cols.push_back(d.index_of(v));
      }
      if (present) t.terms.push_back(std::move(cols));
    }
    targets.push_back(std::move(t));
  }

  ImputationResult result;
  result.completed.reserve(spec.m);
  for (std::size_t k = 0; k < spec.m; ++k) {
    RngStream chain = rng.derive(k);
    MatrixXd cur = d.underlying_values();
    for (const auto& t : targets) {
      for (auto i : t.mis) {
        cur(static_cast<Index>(i), static_cast<Index>(t.col)) =
            t.y_obs[static_cast<Index>(chain.uniform_index(t.obs.size()))];
      }
    }
    for (std::size_t cycle = 0; cycle < spec.cycles; ++cycle) {
      for (std::size_t ti = 0; ti < targets.size(); ++ti) {
        const Target& t = targets[ti];
        RngStream step = chain.derive(1 + cycle * targets.size() + ti);
        const bool binary = d.column_info(t.col).kind == ColumnKind::binary;
        VectorXd draws;
        try {
          const MatrixXd x_obs = build_predictors(cur, t, t.obs);
          const MatrixXd x_mis = build_predictors(cur, t, t.mis);
          switch (spec.method) {
            case ImputationMethod::noint:
            case ImputationMethod::twoway:
            case ImputationMethod::higher:
              draws = binary ? impute_logreg(x_obs, t.y_obs, x_mis, step)
                             : impute_pmm(x_obs, t.y_obs, x_mis, spec.pmm_donors,
                                          spec.pmm_matching, step);
              break;
            case ImputationMethod::cart:
              draws = impute_cart(x_obs, t.y_obs, x_mis, spec.cart, step);
              break;
            case ImputationMethod::rf:
              draws = impute_rf(x_obs, t.y_obs, x_mis, spec.rf_trees, spec.cart, step);
              break;
          }
          if (!draws.allFinite()) throw Error("non-finite imputed value");
        } catch (const std::exception& e) {
          ++result.fallbacks;
          result.warnings.push_back("imputation model for " + d.column_info(t.col).name +
                                    " failed (" + e.what() + "); resampled observed values");
          draws.resize(static_cast<Index>(t.mis.size()));
          for (auto& v : draws) v = t.y_obs[static_cast<Index>(step.uniform_index(t.obs.size()))];
        }
        for (std::size_t r = 0; r < t.mis.size(); ++r) {
          cur(static_cast<Index>(t.mis[r]), static_cast<Index>(t.col)) =
              draws[static_cast<Index>(r)];
        }
      }
    }
    result.completed.emplace_back(d.columns(), std::move(cur));
  }
  return result;
}

}  // namespace tmlemiss
