#pragma once

// Base prediction algorithms shared by the super learner and the imputers.

#include "tmlemiss/core.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tmlemiss {

enum class Family { gaussian, binomial };

/// Predictor matrix without an intercept column; fitters prepend one.
struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<std::string> names;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
};

/// Gathers the named columns of `d`; throws if any selected cell is masked.
DesignMatrix make_design(const Dataset& d, std::span<const std::string> names);

DesignMatrix select_rows(const DesignMatrix& x,
                         std::span<const std::size_t> rows);

enum class LearnerKind { mean, glm, glm_interaction, ridge, cart, rf };

std::string to_string(LearnerKind k);
LearnerKind learner_kind_from_string(std::string_view s);

struct CartParams {
  std::size_t min_leaf = 5;
  double cp = 1e-4;
  std::size_t max_depth = 10;
};

struct ForestParams {
  std::size_t n_trees = 100;
  std::size_t mtry = 0;  // 0 selects ceil(sqrt(k))
  bool bootstrap = true;
  CartParams tree;
};

struct RidgeParams {
  std::size_t folds = 10;
  std::size_t grid_size = 20;
  double lambda_max = 1e2;
  double lambda_min = 1e-4;
};

struct GlmOptions {
  std::size_t max_iterations = 50;
  double score_tolerance = 1e-8;
  double collinearity_tolerance = 1e-7;
};

struct GlmFit {
  /// Intercept first, then one entry per input column (0 for dropped ones).
  Eigen::VectorXd coefficients;
  std::vector<std::string> dropped;
  /// Inverse Fisher information over the kept terms (intercept first).
  Eigen::MatrixXd covariance;
  std::vector<std::size_t> kept;  // input column indices, excluding intercept
  bool converged = true;
  std::size_t iterations = 0;
  double deviance = 0.0;
  /// Residual sum of squares (gaussian) and its degrees of freedom.
  double rss = 0.0;
  double df_residual = 0.0;
  double lambda = 0.0;  // ridge penalty when fitted by fit_ridge
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  std::size_t depth = 0;
  /// Training rows that ended in this leaf. Forest trees leave it empty.
  std::vector<std::size_t> members;
};

class Tree {
 public:
  Tree() = default;
  explicit Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return nodes_[leaf_for(row)].value;
  }
  std::size_t leaf_count() const;
  std::size_t depth() const;

 private:
  std::vector<TreeNode> nodes_;
};

struct MeanFit {
  double value = 0.0;
};

struct InteractionGlmFit {
  std::vector<std::vector<std::string>> terms;
  GlmFit glm;
};

struct ForestFit {
  std::vector<Tree> trees;
};

class LearnerModel {
 public:
  using Fit = std::variant<MeanFit, GlmFit, InteractionGlmFit, Tree, ForestFit>;

  LearnerModel(LearnerKind kind, Family family,
               std::vector<std::string> feature_names, Fit fit)
      : kind_(kind),
        family_(family),
        names_(std::move(feature_names)),
        fit_(std::move(fit)) {}

  LearnerKind kind() const { return kind_; }
  Family family() const { return family_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  const Fit& fit() const { return fit_; }

  const GlmFit& glm() const;
  const Tree& tree() const { return std::get<Tree>(fit_); }
  const ForestFit& forest() const { return std::get<ForestFit>(fit_); }

 private:
  LearnerKind kind_;
  Family family_;
  std::vector<std::string> names_;
  Fit fit_;
};

LearnerModel fit_mean(const DesignMatrix& x, const Eigen::VectorXd& y,
                      Family family);

/// Least squares (gaussian) or logistic regression by IRLS (binomial).
/// Collinear columns are dropped in input order and listed in `dropped`;
/// non-convergence (e.g. separation) is reported, not thrown.
LearnerModel fit_glm(const DesignMatrix& x, const Eigen::VectorXd& y,
                     Family family, const GlmOptions& opt = {});

/// Appends one product column per term, in order. Throws on duplicate terms
/// or unknown names.
DesignMatrix expand_interactions(
    const DesignMatrix& x, std::span<const std::vector<std::string>> terms);

std::vector<std::vector<std::string>> pairwise_terms(
    std::span<const std::string> names);

LearnerModel fit_glm_interaction(const DesignMatrix& x,
                                 const Eigen::VectorXd& y, Family family);

/// L2-penalized GLM on standardized columns; penalty picked by K-fold CV
/// (squared error) over a log-spaced grid.
LearnerModel fit_ridge(const DesignMatrix& x, const Eigen::VectorXd& y,
                       Family family, RngStream& rng,
                       const RidgeParams& params = {});

LearnerModel fit_cart(const DesignMatrix& x, const Eigen::VectorXd& y,
                      Family family, const CartParams& params = {});

LearnerModel fit_random_forest(const DesignMatrix& x, const Eigen::VectorXd& y,
                               Family family, const ForestParams& params,
                               RngStream& rng);

/// Deterministic; binomial outputs clamped to [1e-6, 1 - 1e-6].
Eigen::VectorXd predict(const LearnerModel& model, const DesignMatrix& x);

/// Per-tree predictions of a forest, before averaging and clamping.
Eigen::MatrixXd predict_trees(const LearnerModel& model, const DesignMatrix& x);

inline constexpr double kProbabilityClamp = 1e-6;

struct LearnerSpec {
  LearnerKind kind = LearnerKind::mean;
  CartParams cart{};
  ForestParams forest{};
  RidgeParams ridge{};
};

LearnerModel fit_learner(const LearnerSpec& spec, const DesignMatrix& x,
                         const Eigen::VectorXd& y, Family family,
                         RngStream& rng);

// Building blocks exposed for the imputers.

/// Weighted IRLS on an explicit design that already contains an intercept.
GlmFit fit_glm_design(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                      Family family, const GlmOptions& opt,
                      std::span<const std::string> names);

/// Grows one tree on `sample` (row indices into x/y, repeats allowed).
/// `mtry` < k draws that many candidate features per split from `rng`.
Tree grow_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
               std::span<const std::size_t> sample, const CartParams& params,
               std::size_t mtry, RngStream* rng);

}  // namespace tmlemiss
