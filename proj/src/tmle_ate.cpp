#include "tc/tmle_ate.hpp"

#include <cmath>

namespace tc {

std::vector<LearnerSpec> default_library() {
  return {
      {Glm{}, Family::Gaussian},    {GlmInteraction{}, Family::Gaussian}, {PolyGlm{3}, Family::Gaussian},
      {Forest{}, Family::Gaussian}, {Boost{}, Family::Gaussian},
  };
}

void finalize_report(TmleReport& report, double z) {
  const auto n = static_cast<double>(report.eif.size());
  report.n = report.eif.size();
  report.mean_eif = report.eif.mean();
  report.se = std::sqrt(report.eif.squaredNorm()) / n;
  report.ci_lower = report.psi_hat - z * report.se;
  report.ci_upper = report.psi_hat + z * report.se;
}

void AteOptions::validate() const {
  if (!(g_min > 0.0 && g_min < 0.5)) throw Error(ErrorCode::InvalidSpec, "g_min must be in (0, 0.5)");
  if (v_folds < 2) throw Error(ErrorCode::BadFoldCount, "v_folds must be >= 2");
  if (max_target_iters < 1) throw Error(ErrorCode::InvalidSpec, "max_target_iters must be >= 1");
  if (known_g && !(*known_g > 0.0 && *known_g < 1.0)) throw Error(ErrorCode::InvalidSpec, "known_g must be in (0,1)");
  if (!known_g && g_library.empty()) throw Error(ErrorCode::InvalidSpec, "empty propensity library");
  if (q_library.empty()) throw Error(ErrorCode::InvalidSpec, "empty outcome library");
}

double clever_covariate_ate(int a, double g1) { return a == 1 ? 1.0 / g1 : -1.0 / (1.0 - g1); }

VectorXd truncate_propensity(const VectorXd& g1, double g_min, int* truncated) {
  int count = 0;
  VectorXd out = g1;
  for (Index i = 0; i < out.size(); ++i) {
    const double c = std::clamp(out[i], g_min, 1.0 - g_min);
    if (c != out[i]) ++count;
    out[i] = c;
  }
  if (truncated) *truncated = count;
  return out;
}

namespace {

// log(expit(x)) and log(1 - expit(x)) without overflow.
double log_expit(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double bernoulli_loglik(const VectorXd& y, const VectorXd& off, const VectorXd& h, double eps, const VectorXd* w) {
  double ll = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double eta = off[i] + eps * h[i];
    const double term = y[i] * log_expit(eta) + (1.0 - y[i]) * log_expit(-eta);
    ll += w ? (*w)[i] * term : term;
  }
  return ll;
}

}  // namespace

double fluctuation_loss(const VectorXd& y_scaled, const VectorXd& offset_logit_q, const VectorXd& h, double epsilon,
                        const VectorXd* weights) {
  const double denom = weights ? weights->sum() : static_cast<double>(y_scaled.size());
  return -bernoulli_loglik(y_scaled, offset_logit_q, h, epsilon, weights) / denom;
}

Fluctuation fit_fluctuation(const VectorXd& y_scaled, const VectorXd& offset_logit_q, const VectorXd& h,
                            const VectorXd* weights) {
  const Index n = y_scaled.size();
  if (offset_logit_q.size() != n || h.size() != n || (weights && weights->size() != n)) {
    throw Error(ErrorCode::LengthMismatch, "fluctuation inputs have different lengths");
  }
  if (!offset_logit_q.allFinite() || !h.allFinite()) {
    throw Error(ErrorCode::PreconditionFailed, "non-finite offset or covariate");
  }
  Fluctuation out;
  out.converged = false;
  double eps = 0.0;
  double ll = bernoulli_loglik(y_scaled, offset_logit_q, h, eps, weights);
  double total_weight = 0.0;
  for (Index i = 0; i < n; ++i) total_weight += weights ? (*weights)[i] : 1.0;
  for (int it = 1; it <= 100; ++it) {
    out.iterations = it;
    double score = 0.0, info = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double wi = weights ? (*weights)[i] : 1.0;
      if (wi == 0.0 || h[i] == 0.0) continue;
      const double p = expit(offset_logit_q[i] + eps * h[i]);
      score += wi * h[i] * (y_scaled[i] - p);
      info += wi * h[i] * h[i] * p * (1.0 - p);
    }
    if (info <= 0.0 || std::abs(score) <= 1e-13 * std::max(total_weight, 1.0)) {
      out.converged = true;
      break;
    }
    // Near the optimum log-likelihood differences drown in rounding, so the
    // ascent test allows a relative slack and Newton finishes the job.
    const double slack = 1e-12 * (std::abs(ll) + 1.0);
    double step = score / info;
    double next_ll = bernoulli_loglik(y_scaled, offset_logit_q, h, eps + step, weights);
    for (int halving = 0; halving < 60 && !(next_ll >= ll - slack); ++halving) {
      step *= 0.5;
      next_ll = bernoulli_loglik(y_scaled, offset_logit_q, h, eps + step, weights);
    }
    eps += step;
    ll = next_ll;
    if (std::abs(step) < 1e-15 * (std::abs(eps) + 1.0)) {
      out.converged = true;
      break;
    }
  }
  out.epsilon = eps;
  return out;
}

AteNuisance estimate_ate_nuisance(const Dataset& d, const AteOptions& opts, const SeedStream& seed,
                                  std::vector<std::string>* warnings) {
  validate_dataset(d);
  opts.validate();
  const Index n = d.size();

  AteNuisance nu;
  Family q_family = Family::Gaussian;
  if (is_binary(d.y)) {
    nu.y_scaled = d.y;
    q_family = Family::Binomial;
  } else {
    ScaledOutcome s = scale_outcome(d.y);
    nu.y_scaled = std::move(s.scaled);
    nu.scale = s.map;
  }

  Rng fold_rng = derive_substream(seed.child(0));
  const FoldAssignment folds = make_folds(n, opts.v_folds, d.a, fold_rng);

  LearningTask q_task = outcome_task(d, false, q_family);
  q_task.y = nu.y_scaled;
  const SuperLearnerModel q_model = fit_super_learner(q_task, opts.q_library, folds, seed.child(1));
  MatrixXd x = q_task.x;
  auto clip_all = [](VectorXd v) { return v.unaryExpr([](double p) { return clip_prob(p); }).eval(); };
  nu.q0_a = clip_all(q_model.predict(x));
  x.col(0).setOnes();
  nu.q0_1 = clip_all(q_model.predict(x));
  x.col(0).setZero();
  nu.q0_0 = clip_all(q_model.predict(x));

  VectorXd g1;
  if (opts.known_g) {
    g1 = VectorXd::Constant(n, *opts.known_g);
  } else {
    const SuperLearnerModel g_model = fit_super_learner(propensity_task(d), opts.g_library, folds, seed.child(2));
    g1 = g_model.predict(d.w);
    if (warnings) warnings->insert(warnings->end(), g_model.warnings.begin(), g_model.warnings.end());
  }
  if (warnings) warnings->insert(warnings->end(), q_model.warnings.begin(), q_model.warnings.end());
  nu.g1 = truncate_propensity(g1, opts.g_min, &nu.g_truncation_count);
  return nu;
}

TmleReport target_ate(const Dataset& d, const AteNuisance& nu, const AteOptions& opts) {
  const Index n = d.size();
  VectorXd qa = nu.q0_a, q1 = nu.q0_1, q0 = nu.q0_0;
  VectorXd ha(n), h1(n), h0(n);
  for (Index i = 0; i < n; ++i) {
    ha[i] = clever_covariate_ate(static_cast<int>(d.a[i]), nu.g1[i]);
    h1[i] = 1.0 / nu.g1[i];
    h0[i] = -1.0 / (1.0 - nu.g1[i]);
  }
  const VectorXd& y = nu.y_scaled;

  TmleReport report;
  report.scale = nu.scale;
  report.g_truncation_count = nu.g_truncation_count;
  VectorXd eif(n);
  double psi = 0.0;
  for (int iter = 0; iter < opts.max_target_iters; ++iter) {
    const VectorXd off = qa.unaryExpr([](double q) { return logit(q); });
    const Fluctuation f = fit_fluctuation(y, off, ha);
    report.epsilon.push_back(f.epsilon);
    report.converged = report.converged && f.converged;
    for (Index i = 0; i < n; ++i) {
      qa[i] = expit(off[i] + f.epsilon * ha[i]);
      q1[i] = expit(logit(q1[i]) + f.epsilon * h1[i]);
      q0[i] = expit(logit(q0[i]) + f.epsilon * h0[i]);
    }
    psi = (q1 - q0).mean();
    eif = ha.cwiseProduct(y - qa) + q1 - q0 - VectorXd::Constant(n, psi);
    if (std::abs(eif.mean()) <= 1e-6) break;
  }

  const double range = nu.scale ? nu.scale->range() : 1.0;
  report.psi_hat = psi * range;
  report.eif = eif * range;
  finalize_report(report, opts.z);
  report.stratum_size = n;
  if (report.g_truncation_count > 0.05 * static_cast<double>(n)) {
    report.positivity_warning = true;
    report.warnings.push_back("PositivityWarning: " + std::to_string(report.g_truncation_count) +
                              " propensity scores truncated");
  }
  if (!report.converged) report.warnings.push_back("NonConvergence: fluctuation did not converge");
  return report;
}

TmleReport estimate_ate(const Dataset& d, const AteOptions& opts, const SeedStream& seed) {
  std::vector<std::string> warnings;
  const AteNuisance nu = estimate_ate_nuisance(d, opts, seed, &warnings);
  TmleReport report = target_ate(d, nu, opts);
  report.warnings.insert(report.warnings.begin(), warnings.begin(), warnings.end());
  return report;
}

RowPredicate parse_stratum(const std::string& expr, const Dataset& d) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "stratum must look like 'W1=1'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  const std::string name = trim(expr.substr(0, eq));
  const std::string value_text = trim(expr.substr(eq + 1));
  const Index col = d.column_index(name);
  if (col < 0) throw Error(ErrorCode::UnknownVariable, "stratum column '" + name + "' not found");
  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(value_text, &used);
    if (used != value_text.size()) throw std::invalid_argument(value_text);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad stratum value '" + value_text + "'");
  }
  return [col, value](const Dataset& data, Index row) { return data.w(row, col) == value; };
}

TmleReport estimate_cate_stratified(const Dataset& d, const RowPredicate& stratum, const AteOptions& opts,
                                    const SeedStream& seed) {
  validate_dataset(d);
  std::vector<Index> rows;
  for (Index i = 0; i < d.size(); ++i) {
    if (stratum(d, i)) rows.push_back(i);
  }
  if (rows.size() < 50) {
    throw Error(ErrorCode::StratumTooSmall, "stratum selects " + std::to_string(rows.size()) + " rows, need 50");
  }
  Dataset sub = d.subset(rows);

  std::vector<Index> keep;
  for (Index j = 0; j < sub.w.cols(); ++j) {
    if (sub.w.col(j).maxCoeff() > sub.w.col(j).minCoeff()) keep.push_back(j);
  }
  if (static_cast<Index>(keep.size()) < sub.w.cols()) {
    Dataset reduced = sub;
    reduced.w = sub.w(Eigen::all, keep);
    reduced.column_names.clear();
    for (Index j : keep) reduced.column_names.push_back(sub.column_names[static_cast<std::size_t>(j)]);
    sub = std::move(reduced);
  }
  TmleReport report = estimate_ate(sub, opts, seed);
  report.stratum_size = static_cast<Index>(rows.size());
  return report;
}

namespace {

struct OlsResult {
  VectorXd coef;
  MatrixXd vcov;
};

OlsResult ols(const MatrixXd& x, const VectorXd& y) {
  const Index n = x.rows();
  const Index p = x.cols() + 1;
  if (p >= n) throw Error(ErrorCode::TooManyColumns, "more coefficients than rows");
  MatrixXd design(n, p);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  const MatrixXd xtx = design.transpose() * design;
  Eigen::LLT<MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
    throw Error(ErrorCode::SingularDesign, "regression design is singular");
  }
  OlsResult out;
  out.coef = llt.solve(design.transpose() * y);
  const double sigma2 = (y - design * out.coef).squaredNorm() / static_cast<double>(n - p);
  out.vcov = sigma2 * llt.solve(MatrixXd::Identity(p, p));
  return out;
}

MatrixXd regression_design(const Dataset& d, const std::vector<Interaction>& interactions) {
  MatrixXd x(d.size(), 1 + d.covariate_count() + static_cast<Index>(interactions.size()));
  x.col(0) = d.a;
  x.middleCols(1, d.covariate_count()) = d.w;
  Index c = 1 + d.covariate_count();
  for (const auto& [lhs, rhs] : interactions) {
    const Index i = d.column_index(lhs), j = d.column_index(rhs);
    if (i < 0 || j < 0) throw Error(ErrorCode::UnknownVariable, "interaction " + lhs + ":" + rhs);
    x.col(c++) = d.w.col(i).cwiseProduct(d.w.col(j));
  }
  return x;
}

TmleReport wald_report(double psi, double var, double z) {
  TmleReport r;
  r.psi_hat = psi;
  r.se = std::sqrt(std::max(var, 0.0));
  r.ci_lower = psi - z * r.se;
  r.ci_upper = psi + z * r.se;
  return r;
}

}  // namespace

TmleReport regression_ate(const Dataset& d, const std::vector<Interaction>& interactions, double z) {
  validate_dataset(d);
  const OlsResult fit = ols(regression_design(d, interactions), d.y);
  TmleReport r = wald_report(fit.coef[1], fit.vcov(1, 1), z);
  r.n = r.stratum_size = d.size();
  return r;
}

TmleReport regression_cate(const Dataset& d, const std::string& modifier, double at_value,
                           const std::vector<Interaction>& interactions, double z) {
  validate_dataset(d);
  const Index k = d.column_index(modifier);
  if (k < 0) throw Error(ErrorCode::UnknownVariable, "modifier '" + modifier + "' not found");
  const MatrixXd base = regression_design(d, interactions);
  MatrixXd x(base.rows(), base.cols() + 1);
  x.leftCols(base.cols()) = base;
  x.col(base.cols()) = d.a.cwiseProduct(d.w.col(k));
  const OlsResult fit = ols(x, d.y);
  const Index t = x.cols();  // coefficient index of A x modifier (intercept shifts by one)
  const double psi = fit.coef[1] + at_value * fit.coef[t];
  const double var = fit.vcov(1, 1) + at_value * at_value * fit.vcov(t, t) + 2.0 * at_value * fit.vcov(1, t);
  TmleReport r = wald_report(psi, var, z);
  r.n = r.stratum_size = d.size();
  return r;
}

}  // namespace tc
