#include "tmlemiss/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

namespace tmlemiss {

DesignMatrix make_design(const Dataset& d, std::span<const std::string> names) {
  DesignMatrix out;
  out.x.resize(static_cast<Eigen::Index>(d.rows()),
               static_cast<Eigen::Index>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    out.x.col(static_cast<Eigen::Index>(c)) = d.column(names[c]);
  }
  out.names.assign(names.begin(), names.end());
  return out;
}

DesignMatrix select_rows(const DesignMatrix& x,
                         std::span<const std::size_t> rows) {
  DesignMatrix out;
  out.names = x.names;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.x.row(static_cast<Eigen::Index>(r)) =
        x.x.row(static_cast<Eigen::Index>(rows[r]));
  }
  return out;
}

std::string to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::mean: return "mean";
    case LearnerKind::glm: return "glm";
    case LearnerKind::glm_interaction: return "glm_interaction";
    case LearnerKind::ridge: return "ridge";
    case LearnerKind::cart: return "cart";
    case LearnerKind::rf: return "rf";
  }
  return "?";
}

LearnerKind learner_kind_from_string(std::string_view s) {
  for (auto k : {LearnerKind::mean, LearnerKind::glm,
                 LearnerKind::glm_interaction, LearnerKind::ridge,
                 LearnerKind::cart, LearnerKind::rf}) {
    if (to_string(k) == s) return k;
  }
  throw Error("unknown learner '" + std::string(s) + "'");
}

const GlmFit& LearnerModel::glm() const {
  if (const auto* g = std::get_if<GlmFit>(&fit_)) return *g;
  if (const auto* g = std::get_if<InteractionGlmFit>(&fit_)) return g->glm;
  throw Error("learner '" + to_string(kind_) + "' has no GLM coefficients");
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kEtaBound = 30.0;
constexpr double kSeparationEta = 15.0;

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

void check_response(const DesignMatrix& x, const VectorXd& y, Family family,
                    const char* who) {
  if (static_cast<std::size_t>(y.size()) != x.rows()) {
    throw Error(std::string(who) + ": response length " +
                std::to_string(y.size()) + " != design rows " +
                std::to_string(x.rows()));
  }
  if (x.rows() == 0) throw Error(std::string(who) + ": no rows");
  if (family == Family::binomial) {
    for (Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0 && y[i] != 1.0) {
        throw Error(std::string(who) + ": binomial response must be 0/1");
      }
    }
  }
}

void check_schema(const LearnerModel& m, const DesignMatrix& x) {
  const auto& want = m.feature_names();
  for (std::size_t j = 0; j < std::max(want.size(), x.names.size()); ++j) {
    if (j >= want.size()) {
      throw Error("predict: unexpected column '" + x.names[j] + "'");
    }
    if (j >= x.names.size()) {
      throw Error("predict: missing column '" + want[j] + "'");
    }
    if (want[j] != x.names[j]) {
      throw Error("predict: column '" + x.names[j] + "' where '" + want[j] +
                  "' was expected");
    }
  }
}

// Identical design rows merged into frequency-weighted groups; the fits
// below depend on the data only through these sufficient statistics.
struct Collapsed {
  MatrixXd design;
  VectorXd weight;
  VectorXd ybar;
};

Collapsed collapse_rows(const MatrixXd& design, const VectorXd& y,
                        const VectorXd* prior) {
  const Index n = design.rows();
  const Index p = design.cols();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index j = 0; j < p; ++j) {
      const double u = design(a, j), v = design(b, j);
      if (u != v) return u < v;
    }
    return false;
  });
  std::vector<Index> starts;
  for (Index r = 0; r < n; ++r) {
    if (r == 0 || (design.row(order[static_cast<std::size_t>(r)]).array() !=
                   design.row(order[static_cast<std::size_t>(r - 1)]).array())
                      .any()) {
      starts.push_back(r);
    }
  }
  Collapsed c;
  if (static_cast<Index>(starts.size()) * 2 > n) {
    c.design = design;
    c.weight = prior ? *prior : VectorXd::Ones(n);
    c.ybar = y;
    return c;
  }
  const auto g = static_cast<Index>(starts.size());
  c.design.resize(g, p);
  c.weight = VectorXd::Zero(g);
  c.ybar = VectorXd::Zero(g);
  for (Index k = 0; k < g; ++k) {
    const Index end = k + 1 < g ? starts[static_cast<std::size_t>(k + 1)] : n;
    c.design.row(k) = design.row(order[static_cast<std::size_t>(starts[static_cast<std::size_t>(k)])]);
    double w = 0.0, s = 0.0;
    for (Index r = starts[static_cast<std::size_t>(k)]; r < end; ++r) {
      const Index i = order[static_cast<std::size_t>(r)];
      const double wi = prior ? (*prior)[i] : 1.0;
      w += wi;
      s += wi * y[i];
    }
    c.weight[k] = w;
    c.ybar[k] = w > 0 ? s / w : 0.0;
  }
  return c;
}

// Keeps columns in input order whose weighted residual, after projection on
// the columns kept so far, is not negligible.
std::vector<Index> independent_columns(const MatrixXd& design,
                                       const VectorXd& w, double tol) {
  const VectorXd sw = w.array().sqrt();
  MatrixXd q(design.rows(), 0);
  std::vector<Index> kept;
  for (Index j = 0; j < design.cols(); ++j) {
    VectorXd v = design.col(j).cwiseProduct(sw);
    const double norm0 = v.norm();
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (Index k = 0; k < q.cols(); ++k) v -= q.col(k).dot(v) * q.col(k);
    }
    const double norm = v.norm();
    if (norm > tol * norm0) {
      q.conservativeResize(Eigen::NoChange, q.cols() + 1);
      q.col(q.cols() - 1) = v / norm;
      kept.push_back(j);
    }
  }
  return kept;
}

double binomial_deviance(const VectorXd& ybar, const VectorXd& mu,
                         const VectorXd& w) {
  double dev = 0.0;
  for (Index i = 0; i < mu.size(); ++i) {
    const double y = ybar[i];
    const double m = std::clamp(mu[i], 1e-300, 1.0 - 1e-16);
    double t = 0.0;
    if (y > 0) t += y * std::log(y / m);
    if (y < 1) t += (1 - y) * std::log((1 - y) / (1 - m));
    dev += 2.0 * w[i] * t;
  }
  return dev;
}

struct WlsResult {
  VectorXd beta;
  MatrixXd r;  // upper triangular factor of sqrt(W) D
};

WlsResult weighted_ls(const MatrixXd& d, const VectorXd& z, const VectorXd& w) {
  const VectorXd sw = w.array().sqrt();
  const MatrixXd a = sw.asDiagonal() * d;
  Eigen::HouseholderQR<MatrixXd> qr(a);
  WlsResult out;
  out.beta = qr.solve(sw.cwiseProduct(z));
  out.r = qr.matrixQR().topRows(d.cols()).triangularView<Eigen::Upper>();
  return out;
}

MatrixXd inverse_from_r(const MatrixXd& r) {
  const Index p = r.cols();
  const MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(
      MatrixXd::Identity(p, p));
  return rinv * rinv.transpose();
}

}  // namespace

GlmFit fit_glm_design(const MatrixXd& design, const VectorXd& y, Family family,
                      const GlmOptions& opt,
                      std::span<const std::string> names) {
  const Index n = design.rows();
  const Index p = design.cols();
  const Collapsed c = collapse_rows(design, y, nullptr);
  const auto kept = independent_columns(c.design, c.weight,
                                        opt.collinearity_tolerance);
  MatrixXd d(c.design.rows(), static_cast<Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    d.col(static_cast<Index>(k)) = c.design.col(kept[k]);
  }

  GlmFit fit;
  fit.coefficients = VectorXd::Zero(p);
  {
    std::vector<bool> is_kept(static_cast<std::size_t>(p), false);
    for (auto j : kept) is_kept[static_cast<std::size_t>(j)] = true;
    for (Index j = 0; j < p; ++j) {
      if (!is_kept[static_cast<std::size_t>(j)]) {
        fit.dropped.push_back(names.empty() ? std::to_string(j)
                                            : names[static_cast<std::size_t>(j)]);
      } else if (j > 0) {
        fit.kept.push_back(static_cast<std::size_t>(j - 1));
      }
    }
  }

  VectorXd beta;
  if (family == Family::gaussian) {
    auto wls = weighted_ls(d, c.ybar, c.weight);
    beta = wls.beta;
    fit.covariance = inverse_from_r(wls.r);
    fit.iterations = 1;
  } else {
    VectorXd eta(d.rows());
    for (Index i = 0; i < eta.size(); ++i) {
      eta[i] = logit((c.weight[i] * c.ybar[i] + 0.5) / (c.weight[i] + 1.0));
    }
    VectorXd mu = eta.unaryExpr([](double e) { return logit_inv(e); });
    double dev = binomial_deviance(c.ybar, mu, c.weight);
    beta = VectorXd::Zero(d.cols());
    bool have_beta = false;
    fit.converged = false;
    MatrixXd r;
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
      const VectorXd var = mu.array() * (1.0 - mu.array());
      const VectorXd ww = c.weight.cwiseProduct(var.cwiseMax(1e-12));
      const VectorXd z =
          eta + (c.ybar - mu).cwiseQuotient(var.cwiseMax(1e-12));
      auto wls = weighted_ls(d, z, ww);
      VectorXd step = have_beta ? VectorXd(wls.beta - beta) : VectorXd();
      VectorXd cand = wls.beta;
      VectorXd cand_eta = (d * cand).cwiseMax(-kEtaBound).cwiseMin(kEtaBound);
      VectorXd cand_mu = cand_eta.unaryExpr([](double e) { return logit_inv(e); });
      double cand_dev = binomial_deviance(c.ybar, cand_mu, c.weight);
      for (int half = 0; have_beta && half < 20 && cand_dev > dev + 1e-9 * (1 + std::abs(dev)); ++half) {
        step *= 0.5;
        cand = beta + step;
        cand_eta = (d * cand).cwiseMax(-kEtaBound).cwiseMin(kEtaBound);
        cand_mu = cand_eta.unaryExpr([](double e) { return logit_inv(e); });
        cand_dev = binomial_deviance(c.ybar, cand_mu, c.weight);
      }
      const double rel_change = std::abs(dev - cand_dev) / (std::abs(cand_dev) + 0.1);
      beta = cand;
      eta = cand_eta;
      mu = cand_mu;
      dev = cand_dev;
      have_beta = true;
      fit.iterations = it;
      const VectorXd score =
          d.transpose() * c.weight.cwiseProduct(c.ybar - mu);
      if (score.cwiseAbs().maxCoeff() < opt.score_tolerance) {
        fit.converged = true;
        break;
      }
      // Stalled deviance: either converged to rounding or drifting apart
      // under separation.
      if (it > 1 && rel_change < 1e-13) {
        fit.converged = score.cwiseAbs().maxCoeff() < 1e-6;
        break;
      }
    }
    // A vanishing score can also mean the iterate ran off towards a
    // separating direction; fitted probabilities pinned at 0 or 1 say so.
    if (eta.cwiseAbs().maxCoeff() > kSeparationEta) fit.converged = false;
    const VectorXd var = mu.array() * (1.0 - mu.array());
    const VectorXd ww = c.weight.cwiseProduct(var.cwiseMax(1e-12));
    fit.covariance = inverse_from_r(weighted_ls(d, eta, ww).r);
    fit.deviance = dev;
  }
  for (std::size_t k = 0; k < kept.size(); ++k) {
    fit.coefficients[kept[k]] = beta[static_cast<Index>(k)];
  }
  const VectorXd fitted = design * fit.coefficients;
  if (family == Family::gaussian) {
    fit.rss = (y - fitted).squaredNorm();
    fit.deviance = fit.rss;
  }
  fit.df_residual = static_cast<double>(n) - static_cast<double>(kept.size());
  return fit;
}

namespace {

MatrixXd with_intercept(const MatrixXd& x) {
  MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

std::vector<std::string> with_intercept_names(const std::vector<std::string>& n) {
  std::vector<std::string> out{"(Intercept)"};
  out.insert(out.end(), n.begin(), n.end());
  return out;
}

VectorXd glm_response(const GlmFit& g, const MatrixXd& x, Family family) {
  VectorXd eta = x * g.coefficients.tail(x.cols());
  eta.array() += g.coefficients[0];
  if (family == Family::gaussian) return eta;
  return eta.unaryExpr([](double e) { return clamp_probability(logit_inv(e)); });
}

}  // namespace

LearnerModel fit_mean(const DesignMatrix& x, const VectorXd& y, Family family) {
  check_response(x, y, family, "fit_mean");
  return LearnerModel(LearnerKind::mean, family, x.names, MeanFit{y.mean()});
}

LearnerModel fit_glm(const DesignMatrix& x, const VectorXd& y, Family family,
                     const GlmOptions& opt) {
  check_response(x, y, family, "fit_glm");
  if (x.rows() <= x.cols()) {
    throw Error("fit_glm: " + std::to_string(x.rows()) + " rows for " +
                std::to_string(x.cols()) + " predictors");
  }
  auto g = fit_glm_design(with_intercept(x.x), y, family, opt,
                          with_intercept_names(x.names));
  return LearnerModel(LearnerKind::glm, family, x.names, std::move(g));
}

DesignMatrix expand_interactions(
    const DesignMatrix& x, std::span<const std::vector<std::string>> terms) {
  std::set<std::vector<std::string>> seen;
  DesignMatrix out;
  out.names = x.names;
  out.x.resize(x.x.rows(), x.x.cols() + static_cast<Index>(terms.size()));
  out.x.leftCols(x.x.cols()) = x.x;
  Index col = x.x.cols();
  for (const auto& term : terms) {
    auto key = term;
    std::sort(key.begin(), key.end());
    if (!seen.insert(key).second) {
      std::string label;
      for (const auto& t : term) label += t;
      throw Error("expand_interactions: duplicate term " + label);
    }
    VectorXd prod = VectorXd::Ones(x.x.rows());
    std::string label;
    for (const auto& name : term) {
      const auto it = std::find(x.names.begin(), x.names.end(), name);
      if (it == x.names.end()) {
        throw Error("expand_interactions: unknown variable '" + name + "'");
      }
      prod = prod.cwiseProduct(x.x.col(it - x.names.begin()));
      label += name;
    }
    out.x.col(col++) = prod;
    out.names.push_back(label);
  }
  return out;
}

std::vector<std::vector<std::string>> pairwise_terms(
    std::span<const std::string> names) {
  std::vector<std::vector<std::string>> out;
  for (std::size_t a = 0; a < names.size(); ++a) {
    for (std::size_t b = a + 1; b < names.size(); ++b) {
      out.push_back({names[a], names[b]});
    }
  }
  return out;
}

LearnerModel fit_glm_interaction(const DesignMatrix& x, const VectorXd& y,
                                 Family family) {
  check_response(x, y, family, "fit_glm_interaction");
  auto terms = pairwise_terms(x.names);
  const auto expanded = expand_interactions(x, terms);
  auto g = fit_glm_design(with_intercept(expanded.x), y, family, GlmOptions{},
                          with_intercept_names(expanded.names));
  return LearnerModel(LearnerKind::glm_interaction, family, x.names,
                      InteractionGlmFit{std::move(terms), std::move(g)});
}

namespace {

struct Standardizer {
  VectorXd center;
  VectorXd scale;  // 0 marks a constant column
};

Standardizer standardize_stats(const MatrixXd& x) {
  Standardizer s;
  s.center = x.colwise().mean();
  s.scale.resize(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double v = (x.col(j).array() - s.center[j]).square().mean();
    s.scale[j] = v > 1e-24 ? std::sqrt(v) : 0.0;
  }
  return s;
}

MatrixXd standardized_design(const MatrixXd& x, const Standardizer& s) {
  MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  for (Index j = 0; j < x.cols(); ++j) {
    if (s.scale[j] > 0) {
      d.col(j + 1) = (x.col(j).array() - s.center[j]) / s.scale[j];
    } else {
      d.col(j + 1).setZero();
    }
  }
  return d;
}

// Penalized IRLS over a descending penalty grid with warm starts. Returns one
// coefficient column per penalty, on the standardized scale.
MatrixXd ridge_path(const MatrixXd& design, const VectorXd& y, Family family,
                    const std::vector<double>& lambdas) {
  const Collapsed c = collapse_rows(design, y, nullptr);
  const Index p = design.cols();
  const double total = c.weight.sum();
  MatrixXd path(p, static_cast<Index>(lambdas.size()));
  VectorXd beta = VectorXd::Zero(p);
  if (family == Family::binomial) {
    const double ybar = c.weight.dot(c.ybar) / total;
    beta[0] = logit(std::clamp(ybar, 1e-6, 1 - 1e-6));
  }
  VectorXd pen = VectorXd::Ones(p);
  pen[0] = 0.0;
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    const double lam = lambdas[l] * total;
    if (family == Family::gaussian) {
      MatrixXd a = c.design.transpose() * c.weight.asDiagonal() * c.design;
      a.diagonal() += lam * pen;
      beta = a.ldlt().solve(c.design.transpose() * c.weight.cwiseProduct(c.ybar));
    } else {
      for (int it = 0; it < 50; ++it) {
        const VectorXd eta =
            (c.design * beta).cwiseMax(-kEtaBound).cwiseMin(kEtaBound);
        const VectorXd mu = eta.unaryExpr([](double e) { return logit_inv(e); });
        const VectorXd var = (mu.array() * (1 - mu.array())).max(1e-12);
        const VectorXd ww = c.weight.cwiseProduct(var);
        const VectorXd z = eta + (c.ybar - mu).cwiseQuotient(var);
        MatrixXd a = c.design.transpose() * ww.asDiagonal() * c.design;
        a.diagonal() += lam * pen;
        const VectorXd next =
            a.ldlt().solve(c.design.transpose() * ww.cwiseProduct(z));
        const double delta = (next - beta).cwiseAbs().maxCoeff();
        beta = next;
        if (delta < 1e-8) break;
      }
    }
    path.col(static_cast<Index>(l)) = beta;
  }
  return path;
}

VectorXd ridge_predict(const MatrixXd& design, const VectorXd& beta,
                       Family family) {
  const VectorXd eta = design * beta;
  if (family == Family::gaussian) return eta;
  return eta.unaryExpr([](double e) { return clamp_probability(logit_inv(e)); });
}

}  // namespace

LearnerModel fit_ridge(const DesignMatrix& x, const VectorXd& y, Family family,
                       RngStream& rng, const RidgeParams& params) {
  check_response(x, y, family, "fit_ridge");
  const Index n = x.x.rows();
  std::vector<double> lambdas(params.grid_size);
  for (std::size_t l = 0; l < params.grid_size; ++l) {
    const double t = params.grid_size > 1
                         ? static_cast<double>(l) /
                               static_cast<double>(params.grid_size - 1)
                         : 0.0;
    lambdas[l] = std::exp(std::log(params.lambda_max) +
                          t * (std::log(params.lambda_min) -
                               std::log(params.lambda_max)));
  }

  // Fold assignment: shuffled round-robin.
  const std::size_t k_folds =
      std::min<std::size_t>(params.folds, static_cast<std::size_t>(n));
  std::vector<std::size_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<std::size_t> fold_of(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < perm.size(); ++r) fold_of[perm[r]] = r % k_folds;

  std::size_t best = 0;
  if (k_folds >= 2 && lambdas.size() > 1) {
    std::vector<double> cv_err(lambdas.size(), 0.0);
    for (std::size_t f = 0; f < k_folds; ++f) {
      std::vector<std::size_t> tr, va;
      for (Index i = 0; i < n; ++i) {
        (fold_of[static_cast<std::size_t>(i)] == f ? va : tr)
            .push_back(static_cast<std::size_t>(i));
      }
      MatrixXd xtr(static_cast<Index>(tr.size()), x.x.cols());
      VectorXd ytr(static_cast<Index>(tr.size()));
      for (std::size_t r = 0; r < tr.size(); ++r) {
        xtr.row(static_cast<Index>(r)) = x.x.row(static_cast<Index>(tr[r]));
        ytr[static_cast<Index>(r)] = y[static_cast<Index>(tr[r])];
      }
      MatrixXd xva(static_cast<Index>(va.size()), x.x.cols());
      VectorXd yva(static_cast<Index>(va.size()));
      for (std::size_t r = 0; r < va.size(); ++r) {
        xva.row(static_cast<Index>(r)) = x.x.row(static_cast<Index>(va[r]));
        yva[static_cast<Index>(r)] = y[static_cast<Index>(va[r])];
      }
      const auto st = standardize_stats(xtr);
      const MatrixXd path = ridge_path(standardized_design(xtr, st), ytr,
                                       family, lambdas);
      const MatrixXd dva = standardized_design(xva, st);
      for (std::size_t l = 0; l < lambdas.size(); ++l) {
        const VectorXd pred =
            ridge_predict(dva, path.col(static_cast<Index>(l)), family);
        cv_err[l] += (yva - pred).squaredNorm();
      }
    }
    for (std::size_t l = 1; l < lambdas.size(); ++l) {
      if (cv_err[l] < cv_err[best]) best = l;
    }
  }

  const auto st = standardize_stats(x.x);
  const std::vector<double> chosen(lambdas.begin(),
                                   lambdas.begin() + static_cast<std::ptrdiff_t>(best) + 1);
  const MatrixXd path =
      ridge_path(standardized_design(x.x, st), y, family, chosen);
  const VectorXd bs = path.col(path.cols() - 1);

  GlmFit g;
  g.lambda = lambdas[best];
  g.coefficients = VectorXd::Zero(x.x.cols() + 1);
  g.coefficients[0] = bs[0];
  for (Index j = 0; j < x.x.cols(); ++j) {
    if (st.scale[j] > 0) {
      g.coefficients[j + 1] = bs[j + 1] / st.scale[j];
      g.coefficients[0] -= bs[j + 1] * st.center[j] / st.scale[j];
      g.kept.push_back(static_cast<std::size_t>(j));
    } else {
      g.dropped.push_back(x.names[static_cast<std::size_t>(j)]);
    }
  }
  return LearnerModel(LearnerKind::ridge, family, x.names, std::move(g));
}

// ---------------------------------------------------------------------------
// Trees

std::size_t Tree::leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  std::size_t k = 0;
  while (nodes_[k].feature >= 0) {
    const auto& nd = nodes_[k];
    k = static_cast<std::size_t>(row[nd.feature] <= nd.threshold ? nd.left
                                                                 : nd.right);
  }
  return k;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(),
      [](const TreeNode& nd) { return nd.feature < 0; }));
}

std::size_t Tree::depth() const {
  std::size_t d = 0;
  for (const auto& nd : nodes_) d = std::max(d, nd.depth);
  return d;
}

namespace {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Identical design rows share a pattern id; trees split patterns, never
// the records inside one.
struct RowPatterns {
  std::vector<std::uint32_t> id;  // per row of x
  std::vector<std::size_t> first;  // a representative row per pattern
};

RowPatterns row_patterns(const MatrixXd& x) {
  RowPatterns p;
  const Index n = x.rows();
  const Index k = x.cols();
  p.id.resize(static_cast<std::size_t>(n));
  std::unordered_map<std::string, std::uint32_t> seen;
  std::string key(static_cast<std::size_t>(k) * sizeof(double), '\0');
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) {
      const double v = x(i, j) == 0.0 ? 0.0 : x(i, j);  // fold -0.0
      std::memcpy(key.data() + j * static_cast<Index>(sizeof(double)), &v, sizeof(double));
    }
    auto [it, inserted] = seen.try_emplace(key, static_cast<std::uint32_t>(p.first.size()));
    if (inserted) p.first.push_back(static_cast<std::size_t>(i));
    p.id[static_cast<std::size_t>(i)] = it->second;
  }
  return p;
}

class TreeGrower {
 public:
  TreeGrower(const MatrixXd& x, const VectorXd& y, const RowPatterns& patterns,
             const CartParams& params, std::size_t mtry, RngStream* rng,
             bool keep_members = true)
      : x_(x), y_(y), patterns_(patterns), params_(params), rng_(rng),
        keep_members_(keep_members) {
    const auto k = static_cast<std::size_t>(x.cols());
    mtry_ = (mtry == 0 || mtry >= k) ? k : mtry;
    binary_.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      binary_[j] = (x.col(static_cast<Index>(j)).array() == 0.0 ||
                    x.col(static_cast<Index>(j)).array() == 1.0)
                       .all();
    }
    features_.resize(k);
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  Tree grow(std::span<const std::size_t> sample) {
    double s = 0.0;
    for (auto i : sample) s += y_[static_cast<Index>(i)];
    const double m = sample.empty() ? 0.0 : s / static_cast<double>(sample.size());
    double sse = 0.0;
    for (auto i : sample) {
      const double r = y_[static_cast<Index>(i)] - m;
      sse += r * r;
    }
    min_gain_ = std::max(params_.cp * sse, 1e-12 * sse);

    // Sample records grouped by pattern, groups in order of first appearance.
    std::vector<int> slot(patterns_.first.size(), -1);
    groups_.clear();
    for (auto i : sample) {
      const auto p = patterns_.id[i];
      if (slot[p] < 0) {
        slot[p] = static_cast<int>(groups_.size());
        groups_.push_back({patterns_.first[p], 0.0, 0.0,
                           std::numeric_limits<double>::infinity(),
                           -std::numeric_limits<double>::infinity(), {}});
      }
      auto& g = groups_[static_cast<std::size_t>(slot[p])];
      const double v = y_[static_cast<Index>(i)];
      g.count += 1.0;
      g.sum += v;
      g.lo = std::min(g.lo, v);
      g.hi = std::max(g.hi, v);
      if (keep_members_) g.members.push_back(i);
    }
    std::vector<std::size_t> all(groups_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow_node(std::move(all), 0);
    return Tree(std::move(nodes_));
  }

 private:
  struct Group {
    std::size_t row;  // representative row of x
    double count, sum, lo, hi;
    std::vector<std::size_t> members;
  };

  int grow_node(std::vector<std::size_t> gs, std::size_t depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    double s = 0.0, cnt = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto g : gs) {
      s += groups_[g].sum;
      cnt += groups_[g].count;
      lo = std::min(lo, groups_[g].lo);
      hi = std::max(hi, groups_[g].hi);
    }
    nodes_[static_cast<std::size_t>(id)].value = cnt > 0.0 ? s / cnt : 0.0;
    nodes_[static_cast<std::size_t>(id)].depth = depth;

    SplitChoice best;
    if (depth < params_.max_depth && lo < hi && gs.size() > 1 &&
        cnt >= 2.0 * static_cast<double>(std::max<std::size_t>(params_.min_leaf, 1))) {
      best = find_split(gs, s, cnt);
    }
    if (best.feature < 0 || !(best.gain > 0.0) || best.gain < min_gain_) {
      auto& members = nodes_[static_cast<std::size_t>(id)].members;
      for (auto g : gs) {
        members.insert(members.end(), groups_[g].members.begin(), groups_[g].members.end());
      }
      return id;
    }
    std::vector<std::size_t> left, right;
    for (auto g : gs) {
      (x_(static_cast<Index>(groups_[g].row), best.feature) <= best.threshold ? left : right)
          .push_back(g);
    }
    gs.clear();
    gs.shrink_to_fit();
    const int l = grow_node(std::move(left), depth + 1);
    const int r = grow_node(std::move(right), depth + 1);
    auto& nd = nodes_[static_cast<std::size_t>(id)];
    nd.feature = best.feature;
    nd.threshold = best.threshold;
    nd.left = l;
    nd.right = r;
    return id;
  }

  SplitChoice find_split(const std::vector<std::size_t>& gs, double total, double n) {
    const std::size_t k = features_.size();
    std::vector<std::size_t> cand;
    if (mtry_ >= k) {
      cand = features_;
    } else {
      auto pool = features_;
      for (std::size_t a = 0; a < mtry_; ++a) {
        std::swap(pool[a], pool[a + rng_->uniform_index(k - a)]);
      }
      cand.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(mtry_));
      std::sort(cand.begin(), cand.end());
    }
    const auto min_leaf = static_cast<double>(std::max<std::size_t>(params_.min_leaf, 1));
    SplitChoice best;
    for (auto f : cand) {
      const auto fi = static_cast<Index>(f);
      if (binary_[f]) {
        double n1 = 0.0, s1 = 0.0;
        for (auto g : gs) {
          if (x_(static_cast<Index>(groups_[g].row), fi) == 1.0) {
            n1 += groups_[g].count;
            s1 += groups_[g].sum;
          }
        }
        const double n0 = n - n1;
        if (n0 < min_leaf || n1 < min_leaf) continue;
        const double m0 = (total - s1) / n0;
        const double m1 = s1 / n1;
        const double gain = n0 * n1 / n * (m0 - m1) * (m0 - m1);
        if (gain > best.gain) best = {static_cast<int>(f), 0.5, gain};
        continue;
      }
      buf_.clear();
      for (auto g : gs) {
        buf_.push_back({x_(static_cast<Index>(groups_[g].row), fi), groups_[g].count,
                        groups_[g].sum});
      }
      std::sort(buf_.begin(), buf_.end(),
                [](const auto& a, const auto& b) { return a.x < b.x; });
      double sl = 0.0, nl = 0.0;
      for (std::size_t r = 0; r + 1 < buf_.size(); ++r) {
        sl += buf_[r].sum;
        nl += buf_[r].count;
        const double nr = n - nl;
        if (buf_[r].x == buf_[r + 1].x) continue;
        if (nl < min_leaf) continue;
        if (nr < min_leaf) break;
        const double ml = sl / nl;
        const double mr = (total - sl) / nr;
        const double gain = nl * nr / n * (ml - mr) * (ml - mr);
        if (gain > best.gain) {
          best = {static_cast<int>(f), 0.5 * (buf_[r].x + buf_[r + 1].x), gain};
        }
      }
    }
    return best;
  }

  struct Cell {
    double x, count, sum;
  };

  const MatrixXd& x_;
  const VectorXd& y_;
  const RowPatterns& patterns_;
  CartParams params_;
  RngStream* rng_;
  bool keep_members_;
  std::size_t mtry_ = 0;
  std::vector<bool> binary_;
  std::vector<std::size_t> features_;
  std::vector<TreeNode> nodes_;
  std::vector<Group> groups_;
  std::vector<Cell> buf_;
  double min_gain_ = 0.0;
};

}  // namespace

Tree grow_tree(const MatrixXd& x, const VectorXd& y,
               std::span<const std::size_t> sample, const CartParams& params,
               std::size_t mtry, RngStream* rng) {
  if (mtry > 0 && mtry < static_cast<std::size_t>(x.cols()) && rng == nullptr) {
    throw Error("grow_tree: feature subsampling needs a random stream");
  }
  const RowPatterns patterns = row_patterns(x);
  TreeGrower g(x, y, patterns, params, mtry, rng);
  return g.grow(sample);
}

LearnerModel fit_cart(const DesignMatrix& x, const VectorXd& y, Family family,
                      const CartParams& params) {
  check_response(x, y, family, "fit_cart");
  if (x.rows() < 2 * params.min_leaf) {
    throw Error("fit_cart: " + std::to_string(x.rows()) +
                " rows is fewer than twice min_leaf");
  }
  std::vector<std::size_t> all(x.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return LearnerModel(LearnerKind::cart, family, x.names,
                      grow_tree(x.x, y, all, params, 0, nullptr));
}

LearnerModel fit_random_forest(const DesignMatrix& x, const VectorXd& y,
                               Family family, const ForestParams& params,
                               RngStream& rng) {
  check_response(x, y, family, "fit_random_forest");
  if (params.n_trees == 0) throw Error("fit_random_forest: n_trees must be >= 1");
  const std::size_t k = x.cols();
  const std::size_t mtry =
      params.mtry == 0
          ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))))
          : params.mtry;
  if (k > 0 && (mtry < 1 || mtry > k)) {
    throw Error("fit_random_forest: mtry must lie in [1, " + std::to_string(k) + "]");
  }
  const std::size_t n = x.rows();
  const RowPatterns patterns = row_patterns(x.x);
  ForestFit forest;
  forest.trees.reserve(params.n_trees);
  std::vector<std::size_t> sample(n);
  for (std::size_t t = 0; t < params.n_trees; ++t) {
    RngStream tr = rng.derive(t);
    if (params.bootstrap) {
      for (auto& s : sample) s = tr.uniform_index(n);
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    TreeGrower g(x.x, y, patterns, params.tree, mtry, &tr, false);
    forest.trees.push_back(g.grow(sample));
  }
  return LearnerModel(LearnerKind::rf, family, x.names, std::move(forest));
}

Eigen::MatrixXd predict_trees(const LearnerModel& model, const DesignMatrix& x) {
  check_schema(model, x);
  const auto& trees = model.forest().trees;
  MatrixXd out(x.x.rows(), static_cast<Index>(trees.size()));
  for (std::size_t t = 0; t < trees.size(); ++t) {
    for (Index i = 0; i < x.x.rows(); ++i) {
      out(i, static_cast<Index>(t)) = trees[t].predict_row(x.x.row(i));
    }
  }
  return out;
}

VectorXd predict(const LearnerModel& model, const DesignMatrix& x) {
  check_schema(model, x);
  const Index n = x.x.rows();
  VectorXd out(n);
  std::visit(
      [&](const auto& fit) {
        using T = std::decay_t<decltype(fit)>;
        if constexpr (std::is_same_v<T, MeanFit>) {
          out.setConstant(fit.value);
        } else if constexpr (std::is_same_v<T, GlmFit>) {
          out = glm_response(fit, x.x, Family::gaussian);
        } else if constexpr (std::is_same_v<T, InteractionGlmFit>) {
          const auto ex = expand_interactions(x, fit.terms);
          out = glm_response(fit.glm, ex.x, Family::gaussian);
        } else if constexpr (std::is_same_v<T, Tree>) {
          for (Index i = 0; i < n; ++i) out[i] = fit.predict_row(x.x.row(i));
        } else if constexpr (std::is_same_v<T, ForestFit>) {
          out.setZero();
          for (const auto& tree : fit.trees) {
            for (Index i = 0; i < n; ++i) out[i] += tree.predict_row(x.x.row(i));
          }
          out /= static_cast<double>(fit.trees.size());
        }
      },
      model.fit());
  if (model.family() == Family::binomial) {
    const bool linear = model.kind() == LearnerKind::glm ||
                        model.kind() == LearnerKind::glm_interaction ||
                        model.kind() == LearnerKind::ridge;
    for (Index i = 0; i < n; ++i) {
      out[i] = clamp_probability(linear ? logit_inv(out[i]) : out[i]);
    }
  }
  return out;
}

LearnerModel fit_learner(const LearnerSpec& spec, const DesignMatrix& x,
                         const VectorXd& y, Family family, RngStream& rng) {
  switch (spec.kind) {
    case LearnerKind::mean: return fit_mean(x, y, family);
    case LearnerKind::glm: return fit_glm(x, y, family);
    case LearnerKind::glm_interaction: return fit_glm_interaction(x, y, family);
    case LearnerKind::ridge: return fit_ridge(x, y, family, rng, spec.ridge);
    case LearnerKind::cart: return fit_cart(x, y, family, spec.cart);
    case LearnerKind::rf: return fit_random_forest(x, y, family, spec.forest, rng);
  }
  throw Error("fit_learner: unknown learner kind");
}

}  // namespace tmlemiss
