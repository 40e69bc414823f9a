#pragma once

// Targeted maximum likelihood estimation of the average treatment effect
// and of stratum-specific (conditional) effects.

#include "tc/core.hpp"
#include "tc/learners.hpp"
#include "tc/super_learner.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tc {

/// glm, glm.interaction, gam, forest, boost.
std::vector<LearnerSpec> default_library();

struct TmleReport {
  double psi_hat = 0.0;  // original outcome units
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  VectorXd eif;                  // original outcome units
  std::vector<double> epsilon;   // one entry per fluctuation parameter
  int g_truncation_count = 0;
  std::optional<ScaleMap> scale;
  double mean_eif = 0.0;
  Index n = 0;
  Index stratum_size = 0;
  bool positivity_warning = false;
  bool converged = true;
  std::vector<std::string> warnings;
};

/// psi +- z * se, with the EIF-based variance (1/n^2) * sum D_i^2.
void finalize_report(TmleReport& report, double z = kZ975);

struct AteOptions {
  double g_min = 0.025;
  int v_folds = 10;
  std::vector<LearnerSpec> q_library = default_library();
  std::vector<LearnerSpec> g_library = default_library();
  int max_target_iters = 1;
  /// Known constant propensity; skips fitting g.
  std::optional<double> known_g;
  double z = kZ975;

  void validate() const;
};

struct AteNuisance {
  VectorXd q0_a;
  VectorXd q0_1;
  VectorXd q0_0;
  VectorXd g1;
  std::optional<ScaleMap> scale;
  VectorXd y_scaled;
  int g_truncation_count = 0;
};

/// H = 1/g1 for treated rows, -1/(1 - g1) for controls.
double clever_covariate_ate(int a, double g1);

/// Clamps into [g_min, 1 - g_min], counting how many entries moved.
VectorXd truncate_propensity(const VectorXd& g1, double g_min, int* truncated = nullptr);

struct Fluctuation {
  double epsilon = 0.0;
  bool converged = true;
  int iterations = 0;
};

/// One-dimensional Bernoulli MLE of eps in logit(Q) = offset + eps * h,
/// optionally with per-row weights. Newton with step halving.
Fluctuation fit_fluctuation(const VectorXd& y_scaled, const VectorXd& offset_logit_q, const VectorXd& h,
                            const VectorXd* weights = nullptr);

/// Cross-entropy of the fluctuated fit at `epsilon`, averaged over rows.
double fluctuation_loss(const VectorXd& y_scaled, const VectorXd& offset_logit_q, const VectorXd& h, double epsilon,
                        const VectorXd* weights = nullptr);

AteNuisance estimate_ate_nuisance(const Dataset& d, const AteOptions& opts, const SeedStream& seed,
                                  std::vector<std::string>* warnings = nullptr);

/// Targeting, substitution estimate and EIF inference from fitted nuisances.
TmleReport target_ate(const Dataset& d, const AteNuisance& nuisance, const AteOptions& opts);

TmleReport estimate_ate(const Dataset& d, const AteOptions& opts, const SeedStream& seed);

using RowPredicate = std::function<bool(const Dataset&, Index)>;

/// "W1=1" style equality on a covariate column.
RowPredicate parse_stratum(const std::string& expr, const Dataset& d);

/// Runs estimate_ate on the rows selected by `stratum`, dropping covariates
/// that are constant inside the stratum.
TmleReport estimate_cate_stratified(const Dataset& d, const RowPredicate& stratum, const AteOptions& opts,
                                    const SeedStream& seed);

using Interaction = std::pair<std::string, std::string>;

/// OLS of Y on (A, W, listed covariate products); psi = coefficient of A.
TmleReport regression_ate(const Dataset& d, const std::vector<Interaction>& interactions = {}, double z = kZ975);

/// OLS with an added A x modifier column; psi = gamma + tau * at_value.
TmleReport regression_cate(const Dataset& d, const std::string& modifier, double at_value,
                           const std::vector<Interaction>& interactions = {}, double z = kZ975);

}  // namespace tc
