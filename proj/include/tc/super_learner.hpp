#pragma once

// V-fold cross-validated stacking with a non-negative least squares
// meta-learner whose weights are normalized onto the simplex.

#include "tc/core.hpp"
#include "tc/learners.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tc {

struct FoldAssignment {
  int v = 0;
  std::vector<int> fold_of;

  std::vector<Index> validation_rows(int fold) const;
  std::vector<Index> training_rows(int fold) const;
  std::vector<Index> fold_sizes() const;
};

/// Near-equal folds (sizes differ by at most one). With `stratify_on`, the
/// ones are dealt round-robin first, so every fold's count of ones is
/// within one of n1 / v.
FoldAssignment make_folds(Index n, int v, const std::optional<VectorXd>& stratify_on, Rng& rng);

/// A supervised problem handed to the ensemble.
struct LearningTask {
  MatrixXd x;
  VectorXd y;
  Family family = Family::Gaussian;
  std::vector<std::string> columns;
};

/// y on [A, W] (or [A, M, W] with `with_mediator`).
LearningTask outcome_task(const Dataset& d, bool with_mediator = false, Family family = Family::Gaussian);
/// A on W, binomial.
LearningTask propensity_task(const Dataset& d);

struct LevelOne {
  MatrixXd z;                    // n x M', one column per surviving learner
  std::vector<int> kept;         // indices into the learner library
  std::vector<std::string> warnings;
};

LevelOne level_one_matrix(const LearningTask& task, const std::vector<LearnerSpec>& specs,
                          const FoldAssignment& folds, const SeedStream& seed);

/// Lawson-Hanson active-set solution of min ||y - Z w||^2 s.t. w >= 0.
VectorXd nnls(const MatrixXd& z, const VectorXd& y);

struct SimplexWeights {
  VectorXd weights;  // on the probability simplex
  VectorXd raw;      // unnormalized NNLS solution
  bool discrete_fallback = false;
};

/// NNLS followed by normalization. Falls back to the single learner with
/// the smallest `cv_risks` entry when NNLS returns all zeros, and to the
/// best single column on the training criterion when the normalized
/// combination does worse than it.
SimplexWeights solve_simplex_nnls(const MatrixXd& z, const VectorXd& y, const VectorXd* cv_risks = nullptr);

double meta_objective(const MatrixXd& z, const VectorXd& y, const VectorXd& w);

struct SuperLearnerModel {
  std::vector<FittedLearner> base_models;
  std::vector<std::string> learner_names;
  VectorXd weights;
  VectorXd raw_weights;
  VectorXd cv_risks;
  Family family = Family::Gaussian;
  MatrixXd level_one;
  std::vector<std::string> warnings;

  VectorXd predict(const MatrixXd& x) const;
};

SuperLearnerModel fit_super_learner(const LearningTask& task, const std::vector<LearnerSpec>& specs,
                                    const FoldAssignment& folds, const SeedStream& seed);

/// Builds its own folds (stratified on y for binary targets).
SuperLearnerModel fit_super_learner(const LearningTask& task, const std::vector<LearnerSpec>& specs, int v,
                                    const SeedStream& seed);

inline VectorXd predict_sl(const SuperLearnerModel& model, const MatrixXd& x) { return model.predict(x); }

}  // namespace tc
