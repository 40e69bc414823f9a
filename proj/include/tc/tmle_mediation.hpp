#pragma once

// Two-stage TMLE for the natural direct effect, with the indirect effect
// obtained as total minus direct.

#include "tc/core.hpp"
#include "tc/learners.hpp"
#include "tc/super_learner.hpp"
#include "tc/tmle_ate.hpp"

#include <string>
#include <vector>

namespace tc {

/// glm and forest.
std::vector<LearnerSpec> mediation_library();

struct MediationOptions {
  double g_min = 0.025;
  double a_min = 0.025;  // floor for p(A=1 | M, W)
  int v_folds = 10;
  std::vector<LearnerSpec> q_library = mediation_library();
  std::vector<LearnerSpec> g_library = mediation_library();
  std::vector<LearnerSpec> classifier_library = mediation_library();
  /// Regression of the mapped outcome contrast on W among controls.
  std::vector<LearnerSpec> contrast_library = mediation_library();
  double z = kZ975;

  void validate() const;
};

struct MediationNuisance {
  VectorXd qbar_a;  // Q(A_i, M_i, W_i), scaled outcome
  VectorXd qbar_1;  // Q(1, M_i, W_i)
  VectorXd qbar_0;  // Q(0, M_i, W_i)
  VectorXd g1;
  VectorXd ratio;   // density of M under A=0 over A=1, given W
  VectorXd y_scaled;
  std::optional<ScaleMap> scale;
  int g_truncation_count = 0;
  int classifier_floor_count = 0;
};

/// 1(A=1)/g1 * ratio - 1(A=0)/(1 - g1).
double clever_covariate_y(int a, double g1, double ratio);

/// Bayes-rule density ratio from a classifier of A on (M, W):
/// [(1 - p)/p] * [g1/(1 - g1)] with p floored into [a_min, 1 - a_min].
VectorXd density_ratio_from_classifier(const VectorXd& p_treated, const VectorXd& g1, double a_min,
                                       int* floored = nullptr);

VectorXd mediator_density_ratio(const Dataset& d, const VectorXd& g1, const std::vector<LearnerSpec>& library,
                                const FoldAssignment& folds, const SeedStream& seed, double a_min,
                                int* floored = nullptr);

/// Fluctuation of the outcome regression along the mediation clever covariate.
Fluctuation fluctuate_qbar(const VectorXd& y_scaled, const VectorXd& offset_logit_qbar, const VectorXd& c_y);

/// Fluctuation of the contrast regression on control rows with covariate
/// 1/(1 - g1). Throws NoControls when every row is treated.
Fluctuation fluctuate_em(const VectorXd& qdiff_mapped, const VectorXd& em0_offset_logit, const VectorXd& a,
                         const VectorXd& g1);

struct MediationReport {
  TmleReport nde;
  TmleReport nie;
  TmleReport te;
  double score_y = 0.0;  // mean of C_Y (Y - Q*) after targeting
  double score_m = 0.0;  // mean over controls of C_M (m - E*)
  std::vector<std::string> warnings;
};

MediationReport estimate_nde_nie(const Dataset& d, const MediationOptions& opts, const SeedStream& seed);

}  // namespace tc
