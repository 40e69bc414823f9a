#pragma once

// Maximum-likelihood path analysis on observed variables: recursive linear
// equations with uncorrelated disturbances.

#include "tc/core.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tc {

enum class ParamKind { Edge, Intercept, Variance };

struct PathParameter {
  std::string name;  // "A->Y", "Y~1", "Y~~Y"
  ParamKind kind = ParamKind::Edge;
  int from = -1;  // edges only
  int to = -1;    // target variable (all kinds)
  std::optional<double> fixed;
};

class PathModel {
 public:
  /// Builds a model from (from, to) edges; every variable gets an intercept
  /// and a disturbance variance. Throws CyclicModel on a directed cycle.
  PathModel(std::vector<std::string> variables, const std::vector<std::pair<std::string, std::string>>& edges,
            const std::map<std::string, double>& fixed_values = {});

  const std::vector<std::string>& variables() const { return variables_; }
  const std::vector<PathParameter>& parameters() const { return params_; }
  Index variable_count() const { return static_cast<Index>(variables_.size()); }
  Index parameter_count() const { return static_cast<Index>(params_.size()); }
  /// Indices of parameters without a fixed value.
  const std::vector<int>& free_parameters() const { return free_; }

  int variable_index(const std::string& name) const;
  /// -1 when absent.
  int parameter_index(const std::string& name) const;
  int edge_parameter(const std::string& from, const std::string& to) const;

  /// Full parameter vector with fixed entries filled in.
  VectorXd expand(const VectorXd& free_values) const;
  VectorXd restrict(const VectorXd& full) const;

  /// Variables in an order where every edge points forward.
  const std::vector<int>& topological_order() const { return order_; }

 private:
  std::vector<std::string> variables_;
  std::vector<PathParameter> params_;
  std::vector<int> free_;
  std::vector<int> order_;
};

/// Line format: `Y ~ A + M + W`, `Y ~~ Y` (optionally `= 1.0` to fix),
/// `A -> Y = 0.5` for a fixed edge. `#` starts a comment.
PathModel parse_path_model(const std::string& text);

struct ImpliedMoments {
  VectorXd mu;
  MatrixXd sigma;
};

/// mu = B mu0, Sigma = B Psi B^T with B = (I - beta)^-1.
ImpliedMoments implied_moments(const PathModel& m, const VectorXd& theta);

struct SampleMoments {
  VectorXd mean;
  MatrixXd cov;  // divisor n
  Index n = 0;
};

SampleMoments sample_moments(const MatrixXd& data);

/// log|Sigma| + tr(Sigma^-1 S) + (ybar - mu)^T Sigma^-1 (ybar - mu); +inf when
/// Sigma is not positive definite.
double fml_objective(const PathModel& m, const VectorXd& theta, const MatrixXd& s, const VectorXd& ybar);

struct PathFit {
  VectorXd theta_hat;  // full parameter vector
  MatrixXd vcov;       // over the full vector; zero rows for fixed entries
  bool vcov_available = false;
  double loglik = 0.0;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  Index n = 0;
  std::vector<std::string> warnings;

  double se(int param) const;
};

struct FitOptions {
  /// Free-parameter start values; equation-wise OLS when empty.
  std::optional<VectorXd> start;
  bool compute_vcov = true;
  int max_iterations = 500;
  double gradient_tol = 1e-6;
};

/// Equation-wise OLS coefficients, intercepts and residual variances (RSS/n)
/// computed from the sample moments, as a full parameter vector.
VectorXd ols_start(const PathModel& m, const SampleMoments& moments);

/// `data` columns follow m.variables().
PathFit fit_path_model(const PathModel& m, const MatrixXd& data, const FitOptions& opts = {});

/// Columns of `d` (A, M, Y and covariates) arranged for `m`.
MatrixXd path_data(const PathModel& m, const Dataset& d);

struct PathEffects {
  double direct = 0.0;  // ATE or NDE
  double se_direct = 0.0;
  std::optional<double> indirect;
  std::optional<double> se_indirect;
  double total = 0.0;
  double se_total = 0.0;
  bool negative_variance = false;
};

/// direct = treatment->outcome; indirect = (treatment->mediator)(mediator->outcome).
/// Throws MissingEdge when a required edge is absent.
PathEffects effects_from_paths(const PathModel& m, const PathFit& fit, const std::string& treatment,
                               const std::optional<std::string>& mediator, const std::string& outcome);

/// sqrt(b^2 v_aa + a^2 v_bb + 2ab v_ab), clamped at zero.
double delta_se_product(double a, double b, const Eigen::Matrix2d& vcov, bool* clamped = nullptr);

using EffectSelector = std::function<double(const PathFit&)>;

struct BootstrapInterval {
  double lower = 0.0;
  double upper = 0.0;
  double se = 0.0;  // standard deviation of the replicates
  int failures = 0;
  int reps = 0;
};

/// Nonparametric case resampling with percentile intervals, one per
/// selector. Requires b_reps >= 100; throws TooManyFailures when more than
/// 10% of the refits fail.
std::vector<BootstrapInterval> bootstrap_ci(const PathModel& m, const MatrixXd& data,
                                            const std::vector<EffectSelector>& effects, int b_reps, Rng& rng);

}  // namespace tc
