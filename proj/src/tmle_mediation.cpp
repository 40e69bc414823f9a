#include "tc/tmle_mediation.hpp"

#include <cmath>

namespace tc {

std::vector<LearnerSpec> mediation_library() { return {{Glm{}, Family::Gaussian}, {Forest{}, Family::Gaussian}}; }

void MediationOptions::validate() const {
  if (!(g_min > 0.0 && g_min < 0.5)) throw Error(ErrorCode::InvalidSpec, "g_min must be in (0, 0.5)");
  if (!(a_min > 0.0 && a_min < 0.5)) throw Error(ErrorCode::InvalidSpec, "a_min must be in (0, 0.5)");
  if (v_folds < 2) throw Error(ErrorCode::BadFoldCount, "v_folds must be >= 2");
  if (q_library.empty() || g_library.empty() || classifier_library.empty() || contrast_library.empty()) {
    throw Error(ErrorCode::InvalidSpec, "empty learner library");
  }
}

double clever_covariate_y(int a, double g1, double ratio) {
  return a == 1 ? ratio / g1 : -1.0 / (1.0 - g1);
}

VectorXd density_ratio_from_classifier(const VectorXd& p_treated, const VectorXd& g1, double a_min, int* floored) {
  if (p_treated.size() != g1.size()) throw Error(ErrorCode::LengthMismatch, "classifier and propensity lengths");
  int count = 0;
  VectorXd ratio(g1.size());
  for (Index i = 0; i < g1.size(); ++i) {
    const double p = std::clamp(p_treated[i], a_min, 1.0 - a_min);
    if (p != p_treated[i]) ++count;
    ratio[i] = (1.0 - p) / p * g1[i] / (1.0 - g1[i]);
  }
  if (floored) *floored = count;
  return ratio;
}

VectorXd mediator_density_ratio(const Dataset& d, const VectorXd& g1, const std::vector<LearnerSpec>& library,
                                const FoldAssignment& folds, const SeedStream& seed, double a_min, int* floored) {
  validate_dataset(d, {.require_mediator = true});
  LearningTask task;
  task.x.resize(d.size(), d.covariate_count() + 1);
  task.x.col(0) = *d.m;
  task.x.rightCols(d.covariate_count()) = d.w;
  task.columns.push_back("M");
  task.columns.insert(task.columns.end(), d.column_names.begin(), d.column_names.end());
  task.y = d.a;
  task.family = Family::Binomial;
  const SuperLearnerModel model = fit_super_learner(task, library, folds, seed);
  return density_ratio_from_classifier(model.predict(task.x), g1, a_min, floored);
}

Fluctuation fluctuate_qbar(const VectorXd& y_scaled, const VectorXd& offset_logit_qbar, const VectorXd& c_y) {
  return fit_fluctuation(y_scaled, offset_logit_qbar, c_y);
}

Fluctuation fluctuate_em(const VectorXd& qdiff_mapped, const VectorXd& em0_offset_logit, const VectorXd& a,
                         const VectorXd& g1) {
  const Index n = a.size();
  if (qdiff_mapped.size() != n || em0_offset_logit.size() != n || g1.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "contrast fluctuation inputs have different lengths");
  }
  const VectorXd controls = (a.array() == 0.0).cast<double>().matrix();
  if (controls.sum() == 0.0) throw Error(ErrorCode::NoControls, "no control rows");
  const VectorXd c_m = (1.0 - g1.array()).inverse().matrix();
  return fit_fluctuation(qdiff_mapped, em0_offset_logit, c_m, &controls);
}

MediationReport estimate_nde_nie(const Dataset& d, const MediationOptions& opts, const SeedStream& seed) {
  validate_dataset(d, {.require_mediator = true});
  opts.validate();
  const Index n = d.size();
  if (!(d.a.array() == 0.0).any()) {
    throw Error(ErrorCode::NoControls, "no control rows");
  }

  // Total effect on (A, W, Y); its folds and propensity fit are shared below.
  Dataset total = d;
  total.m.reset();
  AteOptions ate;
  ate.g_min = opts.g_min;
  ate.v_folds = opts.v_folds;
  ate.q_library = opts.q_library;
  ate.g_library = opts.g_library;
  ate.z = opts.z;
  MediationReport out;
  const AteNuisance te_nu = estimate_ate_nuisance(total, ate, seed, &out.warnings);
  out.te = target_ate(total, te_nu, ate);

  Rng fold_rng = derive_substream(seed.child(0));
  const FoldAssignment folds = make_folds(n, opts.v_folds, d.a, fold_rng);

  MediationNuisance nu;
  nu.g1 = te_nu.g1;
  nu.g_truncation_count = te_nu.g_truncation_count;
  nu.y_scaled = te_nu.y_scaled;
  nu.scale = te_nu.scale;
  const Family q_family = nu.scale ? Family::Gaussian : Family::Binomial;

  LearningTask q_task = outcome_task(d, true, q_family);
  q_task.y = nu.y_scaled;
  const SuperLearnerModel q_model = fit_super_learner(q_task, opts.q_library, folds, seed.child(3));
  out.warnings.insert(out.warnings.end(), q_model.warnings.begin(), q_model.warnings.end());
  auto clip_all = [](VectorXd v) { return v.unaryExpr([](double p) { return clip_prob(p); }).eval(); };
  MatrixXd x = q_task.x;
  nu.qbar_a = clip_all(q_model.predict(x));
  x.col(0).setOnes();
  nu.qbar_1 = clip_all(q_model.predict(x));
  x.col(0).setZero();
  nu.qbar_0 = clip_all(q_model.predict(x));

  nu.ratio = mediator_density_ratio(d, nu.g1, opts.classifier_library, folds, seed.child(4), opts.a_min,
                                    &nu.classifier_floor_count);

  // Stage one: outcome regression along C_Y.
  VectorXd c_a(n), c_1(n), c_0(n);
  for (Index i = 0; i < n; ++i) {
    c_a[i] = clever_covariate_y(static_cast<int>(d.a[i]), nu.g1[i], nu.ratio[i]);
    c_1[i] = clever_covariate_y(1, nu.g1[i], nu.ratio[i]);
    c_0[i] = clever_covariate_y(0, nu.g1[i], nu.ratio[i]);
  }
  const VectorXd off_a = nu.qbar_a.unaryExpr([](double q) { return logit(q); });
  const Fluctuation f1 = fluctuate_qbar(nu.y_scaled, off_a, c_a);
  VectorXd qs_a(n), mapped(n);
  for (Index i = 0; i < n; ++i) {
    qs_a[i] = expit(off_a[i] + f1.epsilon * c_a[i]);
    const double q1 = expit(logit(nu.qbar_1[i]) + f1.epsilon * c_1[i]);
    const double q0 = expit(logit(nu.qbar_0[i]) + f1.epsilon * c_0[i]);
    mapped[i] = 0.5 * (q1 - q0 + 1.0);
  }

  // Stage two: regress the mapped contrast on W among controls, then target.
  std::vector<Index> controls;
  for (Index i = 0; i < n; ++i) {
    if (d.a[i] == 0.0) controls.push_back(i);
  }
  LearningTask em_task{d.w(controls, Eigen::all), mapped(controls), Family::Gaussian, d.column_names};
  const int em_folds = std::min<int>(opts.v_folds, static_cast<int>(controls.size()));
  const SuperLearnerModel em_model = fit_super_learner(em_task, opts.contrast_library, em_folds, seed.child(5));
  out.warnings.insert(out.warnings.end(), em_model.warnings.begin(), em_model.warnings.end());
  const VectorXd em0 = clip_all(em_model.predict(d.w));
  const VectorXd em_off = em0.unaryExpr([](double q) { return logit(q); });
  const Fluctuation f2 = fluctuate_em(mapped, em_off, d.a, nu.g1);
  VectorXd em_star(n);
  for (Index i = 0; i < n; ++i) em_star[i] = expit(em_off[i] + f2.epsilon / (1.0 - nu.g1[i]));
  const double psi_mapped = em_star.mean();

  // Influence function on the scaled-outcome scale; the contrast carries a
  // factor of two from the mapping.
  VectorXd eif(n);
  double score_y = 0.0, score_m = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double resid_y = c_a[i] * (nu.y_scaled[i] - qs_a[i]);
    const double resid_m = d.a[i] == 0.0 ? (mapped[i] - em_star[i]) / (1.0 - nu.g1[i]) : 0.0;
    score_y += resid_y;
    score_m += resid_m;
    eif[i] = resid_y + 2.0 * (resid_m + em_star[i] - psi_mapped);
  }
  out.score_y = score_y / static_cast<double>(n);
  out.score_m = score_m / static_cast<double>(controls.size());

  const double range = nu.scale ? nu.scale->range() : 1.0;
  out.nde.psi_hat = (2.0 * psi_mapped - 1.0) * range;
  out.nde.eif = eif * range;
  out.nde.epsilon = {f1.epsilon, f2.epsilon};
  out.nde.converged = f1.converged && f2.converged;
  out.nde.scale = nu.scale;
  out.nde.g_truncation_count = nu.g_truncation_count;
  out.nde.stratum_size = n;
  finalize_report(out.nde, opts.z);

  out.nie.psi_hat = out.te.psi_hat - out.nde.psi_hat;
  out.nie.eif = out.te.eif - out.nde.eif;
  out.nie.scale = nu.scale;
  out.nie.converged = out.te.converged && out.nde.converged;
  out.nie.g_truncation_count = nu.g_truncation_count;
  out.nie.stratum_size = n;
  finalize_report(out.nie, opts.z);

  const double limit = 0.05 * static_cast<double>(n);
  if (nu.g_truncation_count > limit || nu.classifier_floor_count > limit) {
    out.nde.positivity_warning = out.nie.positivity_warning = true;
    out.warnings.push_back("PositivityWarning: " + std::to_string(nu.g_truncation_count) + " propensity and " +
                           std::to_string(nu.classifier_floor_count) + " classifier predictions bounded");
  }
  if (!out.nde.converged) out.warnings.push_back("NonConvergence: mediation fluctuation did not converge");
  return out;
}

}  // namespace tc
