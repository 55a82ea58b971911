#pragma once

// Super learner: V-fold cross-validated convex stacking of base learners.

#include "tmlemiss/learners.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tmlemiss {

/// Random partition of {0..n-1} into V folds whose sizes differ by at most
/// one. With `strata` (a 0/1 response) each class is dealt across folds in
/// turn, so every fold gets a member of each class when counts allow.
std::vector<std::vector<std::size_t>> cv_folds(
    std::size_t n, std::size_t folds, RngStream& rng,
    const Eigen::VectorXd* strata = nullptr);

/// argmin ||A w - b||^2 subject to w >= 0 (Lawson-Hanson active set).
/// Exactly duplicated columns share their weight equally.
Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

/// Default super learner library: mean, glm, glm_interaction, ridge, cart, rf.
std::vector<LearnerSpec> default_library();

/// Fold count rule: 10, or 5 below 100 records.
std::size_t default_fold_count(std::size_t n);

class EnsembleModel {
 public:
  EnsembleModel(std::vector<LearnerModel> members, Eigen::VectorXd weights,
                Family family, Eigen::VectorXd cv_risk,
                Eigen::MatrixXd cv_predictions, std::vector<std::string> warnings)
      : members_(std::move(members)),
        weights_(std::move(weights)),
        family_(family),
        cv_risk_(std::move(cv_risk)),
        cv_predictions_(std::move(cv_predictions)),
        warnings_(std::move(warnings)) {}

  const std::vector<LearnerModel>& members() const { return members_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Family family() const { return family_; }
  const Eigen::VectorXd& cv_risk() const { return cv_risk_; }
  /// n x m matrix of out-of-fold member predictions.
  const Eigen::MatrixXd& cv_predictions() const { return cv_predictions_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  Eigen::VectorXd predict(const DesignMatrix& x) const;

 private:
  std::vector<LearnerModel> members_;
  Eigen::VectorXd weights_;
  Family family_;
  Eigen::VectorXd cv_risk_;
  Eigen::MatrixXd cv_predictions_;
  std::vector<std::string> warnings_;
};

/// `folds` = 0 picks default_fold_count(n).
EnsembleModel fit_superlearner(const DesignMatrix& x, const Eigen::VectorXd& y,
                               Family family,
                               const std::vector<LearnerSpec>& library,
                               std::size_t folds, RngStream& rng);

}  // namespace tmlemiss
