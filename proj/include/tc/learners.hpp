#pragma once

// Base prediction algorithms with a uniform fit/predict contract.

#include "tc/core.hpp"
#include "tc/tree.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tc {

enum class Family { Gaussian, Binomial };

std::string_view to_string(Family f);

struct MeanOnly {};
struct Glm {};
struct GlmInteraction {};
struct PolyGlm {
  int degree = 3;
};
struct Forest {
  int n_trees = 200;
  int max_depth = 8;
  int min_leaf = 5;
  int mtry = 0;  // 0 selects ceil(p / 3)
};
struct Boost {
  int n_rounds = 200;
  double learning_rate = 0.1;
  int max_depth = 2;
  int min_leaf = 5;
};

using LearnerKind = std::variant<MeanOnly, Glm, GlmInteraction, PolyGlm, Forest, Boost>;

struct LearnerSpec {
  LearnerKind kind = Glm{};
  Family family = Family::Gaussian;

  /// Throws InvalidSpec when a hyperparameter is out of range.
  void validate() const;
  std::string name() const;
};

/// Accepts mean, glm, glm.interaction, gam, poly<d>, forest, boost.
LearnerSpec parse_learner(std::string_view name, Family family);
std::vector<LearnerSpec> parse_library(std::string_view comma_separated, Family family);
std::vector<LearnerSpec> with_family(std::vector<LearnerSpec> specs, Family family);

enum class Expansion { Interactions, Polynomial };

/// Appends generated columns after the originals: all pairwise products
/// x_j * x_k (j < k) for Interactions, or x_j^2 .. x_j^degree per column
/// for Polynomial.
MatrixXd expand_features(const MatrixXd& x, Expansion kind, int degree = 2);

struct GlmFit {
  VectorXd coef;  // intercept first
  Family family = Family::Gaussian;
  bool converged = true;
  bool ridge_used = false;
  int iterations = 0;

  /// Linear predictor for `x` (no intercept column) plus optional offset.
  VectorXd linear_predictor(const MatrixXd& x, const VectorXd* offset = nullptr) const;
  /// Mean response; binomial means are clipped to [1e-6, 1 - 1e-6].
  VectorXd mean(const MatrixXd& x, const VectorXd* offset = nullptr) const;
};

/// Gaussian: weighted least squares. Binomial: IRLS on the Bernoulli
/// likelihood with logit link; fractional responses in [0,1] are allowed.
/// An intercept is always added.
GlmFit fit_glm(const MatrixXd& x, const VectorXd& y, Family family,
               const std::optional<VectorXd>& offset = std::nullopt,
               const std::optional<VectorXd>& weights = std::nullopt);

class FittedLearner {
 public:
  struct MeanState {
    double value;
  };
  struct GlmState {
    std::optional<Expansion> expansion;
    int degree = 1;
    GlmFit fit;
  };
  struct ForestState {
    std::vector<RegressionTree> trees;
  };
  struct BoostState {
    double init = 0.0;
    double learning_rate = 0.1;
    double lower = 0.0;
    double upper = 0.0;
    std::vector<RegressionTree> trees;
  };
  using State = std::variant<MeanState, GlmState, ForestState, BoostState>;

  FittedLearner(LearnerSpec spec, Index input_columns, std::vector<std::string> columns, State state,
                bool converged = true)
      : spec_(std::move(spec)),
        input_columns_(input_columns),
        columns_(std::move(columns)),
        state_(std::move(state)),
        converged_(converged) {}

  const LearnerSpec& spec() const { return spec_; }
  Index input_columns() const { return input_columns_; }
  const std::vector<std::string>& training_columns() const { return columns_; }
  const State& state() const { return state_; }
  bool converged() const { return converged_; }

  /// Throws ColumnMismatch when `x` has a different column count.
  VectorXd predict(const MatrixXd& x) const;

 private:
  LearnerSpec spec_;
  Index input_columns_;
  std::vector<std::string> columns_;
  State state_;
  bool converged_;
};

FittedLearner fit_mean(const VectorXd& y, Family family = Family::Gaussian);
FittedLearner fit_forest(const MatrixXd& x, const VectorXd& y, const LearnerSpec& spec, const SeedStream& seed);
FittedLearner fit_boost(const MatrixXd& x, const VectorXd& y, const LearnerSpec& spec);

/// Dispatches on spec.kind.
FittedLearner fit_learner(const LearnerSpec& spec, const MatrixXd& x, const VectorXd& y, const SeedStream& seed,
                          std::vector<std::string> columns = {});

inline VectorXd predict(const FittedLearner& model, const MatrixXd& x) { return model.predict(x); }

}  // namespace tc
