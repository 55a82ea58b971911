#include "tmlemiss/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tmlemiss {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<std::vector<std::size_t>> cv_folds(std::size_t n,
                                               std::size_t folds,
                                               RngStream& rng,
                                               const VectorXd* strata) {
  if (folds < 2) throw Error("cv_folds: need at least 2 folds");
  if (folds > n) {
    throw Error("cv_folds: " + std::to_string(folds) + " folds for " +
                std::to_string(n) + " records");
  }
  std::vector<std::vector<std::size_t>> groups;
  if (strata != nullptr) {
    std::vector<std::size_t> zeros, ones;
    for (std::size_t i = 0; i < n; ++i) {
      ((*strata)[static_cast<Index>(i)] != 0.0 ? ones : zeros).push_back(i);
    }
    // Smaller class first so it is spread from fold 0 onwards.
    if (ones.size() <= zeros.size()) {
      groups = {std::move(ones), std::move(zeros)};
    } else {
      groups = {std::move(zeros), std::move(ones)};
    }
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    groups = {std::move(all)};
  }
  std::vector<std::vector<std::size_t>> out(folds);
  std::size_t pos = 0;
  for (auto& g : groups) {
    rng.shuffle(g);
    for (auto i : g) out[pos++ % folds].push_back(i);
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

namespace {

VectorXd nnls_unique(const MatrixXd& a, const VectorXd& b) {
  const Index m = a.cols();
  VectorXd w = VectorXd::Zero(m);
  std::vector<bool> passive(static_cast<std::size_t>(m), false);
  const double scale = std::max(1.0, a.norm() * b.norm());
  const double tol = 1e-12 * scale;

  auto solve_passive = [&](VectorXd& z) {
    std::vector<Index> idx;
    for (Index j = 0; j < m; ++j) {
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    MatrixXd ap(a.rows(), static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ap.col(static_cast<Index>(k)) = a.col(idx[k]);
    }
    const VectorXd zp = ap.colPivHouseholderQr().solve(b);
    z = VectorXd::Zero(m);
    for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Index>(k)];
  };

  for (int outer = 0; outer < 3 * static_cast<int>(m) + 10; ++outer) {
    const VectorXd grad = a.transpose() * (b - a * w);
    Index best = -1;
    double best_val = tol;
    for (Index j = 0; j < m; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && grad[j] > best_val) {
        best_val = grad[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    for (int inner = 0; inner < 3 * static_cast<int>(m) + 10; ++inner) {
      VectorXd z;
      solve_passive(z);
      bool feasible = true;
      for (Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) feasible = false;
      }
      if (feasible) {
        w = z;
        break;
      }
      double alpha = 1.0;
      for (Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0) {
          alpha = std::min(alpha, w[j] / (w[j] - z[j]));
        }
      }
      w += alpha * (z - w);
      for (Index j = 0; j < m; ++j) {
        if (passive[static_cast<std::size_t>(j)] && w[j] <= 1e-15) {
          passive[static_cast<std::size_t>(j)] = false;
          w[j] = 0.0;
        }
      }
    }
  }
  return w.cwiseMax(0.0);
}

}  // namespace

VectorXd nnls(const MatrixXd& a, const VectorXd& b) {
  if (a.cols() < 1) throw Error("nnls: need at least one column");
  if (a.rows() != b.size()) throw Error("nnls: dimension mismatch");
  const Index m = a.cols();
  // Group exactly identical columns; solve on representatives.
  std::vector<Index> rep(static_cast<std::size_t>(m));
  std::vector<Index> uniques;
  for (Index j = 0; j < m; ++j) {
    rep[static_cast<std::size_t>(j)] = -1;
    for (std::size_t u = 0; u < uniques.size(); ++u) {
      if (a.col(uniques[u]) == a.col(j)) {
        rep[static_cast<std::size_t>(j)] = static_cast<Index>(u);
        break;
      }
    }
    if (rep[static_cast<std::size_t>(j)] < 0) {
      rep[static_cast<std::size_t>(j)] = static_cast<Index>(uniques.size());
      uniques.push_back(j);
    }
  }
  MatrixXd au(a.rows(), static_cast<Index>(uniques.size()));
  for (std::size_t u = 0; u < uniques.size(); ++u) {
    au.col(static_cast<Index>(u)) = a.col(uniques[u]);
  }
  const VectorXd wu = nnls_unique(au, b);
  std::vector<int> count(uniques.size(), 0);
  for (Index j = 0; j < m; ++j) ++count[static_cast<std::size_t>(rep[static_cast<std::size_t>(j)])];
  VectorXd w(m);
  for (Index j = 0; j < m; ++j) {
    const auto u = static_cast<std::size_t>(rep[static_cast<std::size_t>(j)]);
    w[j] = wu[static_cast<Index>(u)] / count[u];
  }
  return w;
}

std::vector<LearnerSpec> default_library() {
  std::vector<LearnerSpec> lib;
  for (auto k : {LearnerKind::mean, LearnerKind::glm,
                 LearnerKind::glm_interaction, LearnerKind::ridge,
                 LearnerKind::cart, LearnerKind::rf}) {
    LearnerSpec s;
    s.kind = k;
    lib.push_back(s);
  }
  return lib;
}

std::size_t default_fold_count(std::size_t n) { return n < 100 ? 5 : 10; }

VectorXd EnsembleModel::predict(const DesignMatrix& x) const {
  VectorXd out = VectorXd::Zero(x.x.rows());
  for (std::size_t m = 0; m < members_.size(); ++m) {
    const double w = weights_[static_cast<Index>(m)];
    if (w == 0.0) continue;
    out += w * tmlemiss::predict(members_[m], x);
  }
  if (family_ == Family::binomial) {
    out = out.cwiseMax(kProbabilityClamp).cwiseMin(1.0 - kProbabilityClamp);
  }
  return out;
}

EnsembleModel fit_superlearner(const DesignMatrix& x, const VectorXd& y,
                               Family family,
                               const std::vector<LearnerSpec>& library,
                               std::size_t folds, RngStream& rng) {
  if (library.empty()) throw Error("fit_superlearner: empty library");
  const std::size_t n = x.rows();
  const std::size_t v = folds == 0 ? default_fold_count(n) : folds;
  if (n < 2 * v) {
    throw Error("fit_superlearner: " + std::to_string(n) +
                " records is fewer than twice the fold count " +
                std::to_string(v));
  }
  RngStream fold_rng = rng.derive(0);
  const auto partition =
      cv_folds(n, v, fold_rng, family == Family::binomial ? &y : nullptr);

  const auto m = library.size();
  MatrixXd z(static_cast<Index>(n), static_cast<Index>(m));
  std::vector<std::string> warnings;
  std::vector<std::size_t> fold_of(n);
  for (std::size_t f = 0; f < v; ++f) {
    for (auto i : partition[f]) fold_of[i] = f;
  }
  for (std::size_t f = 0; f < v; ++f) {
    std::vector<std::size_t> train;
    train.reserve(n - partition[f].size());
    for (std::size_t i = 0; i < n; ++i) {
      if (fold_of[i] != f) train.push_back(i);
    }
    const DesignMatrix xtr = select_rows(x, train);
    const DesignMatrix xva = select_rows(x, partition[f]);
    VectorXd ytr(static_cast<Index>(train.size()));
    for (std::size_t r = 0; r < train.size(); ++r) {
      ytr[static_cast<Index>(r)] = y[static_cast<Index>(train[r])];
    }
    for (std::size_t j = 0; j < m; ++j) {
      RngStream member_rng = rng.derive(1 + f * m + j);
      VectorXd pred;
      try {
        const auto model = fit_learner(library[j], xtr, ytr, family, member_rng);
        pred = tmlemiss::predict(model, xva);
      } catch (const std::exception& e) {
        pred = VectorXd::Constant(static_cast<Index>(partition[f].size()),
                                  ytr.mean());
        warnings.push_back(to_string(library[j].kind) + " failed on fold " +
                           std::to_string(f) + ": " + e.what());
      }
      for (std::size_t r = 0; r < partition[f].size(); ++r) {
        z(static_cast<Index>(partition[f][r]), static_cast<Index>(j)) =
            pred[static_cast<Index>(r)];
      }
    }
  }

  VectorXd risk(static_cast<Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    risk[static_cast<Index>(j)] =
        (y - z.col(static_cast<Index>(j))).squaredNorm() / static_cast<double>(n);
  }

  VectorXd w = nnls(z, y);
  if (!(w.sum() > 0.0)) {
    w = VectorXd::Constant(static_cast<Index>(m), 1.0 / static_cast<double>(m));
  } else {
    w /= w.sum();
  }

  std::vector<LearnerModel> members;
  members.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    RngStream member_rng = rng.derive(1 + v * m + j);
    try {
      members.push_back(fit_learner(library[j], x, y, family, member_rng));
    } catch (const std::exception& e) {
      warnings.push_back(to_string(library[j].kind) +
                         " failed on the full data: " + e.what());
      members.push_back(fit_mean(x, y, family));
    }
  }
  return EnsembleModel(std::move(members), std::move(w), family,
                       std::move(risk), std::move(z), std::move(warnings));
}

}  // namespace tmlemiss
