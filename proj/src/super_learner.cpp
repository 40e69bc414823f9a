#include "tc/super_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tc {

std::vector<Index> FoldAssignment::validation_rows(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

std::vector<Index> FoldAssignment::training_rows(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

std::vector<Index> FoldAssignment::fold_sizes() const {
  std::vector<Index> sizes(static_cast<std::size_t>(v), 0);
  for (int f : fold_of) ++sizes[f];
  return sizes;
}

FoldAssignment make_folds(Index n, int v, const std::optional<VectorXd>& stratify_on, Rng& rng) {
  if (v < 2 || v > n) {
    throw Error(ErrorCode::BadFoldCount, "need 2 <= v <= n, got v=" + std::to_string(v) + ", n=" + std::to_string(n));
  }
  if (stratify_on && stratify_on->size() != n) throw Error(ErrorCode::LengthMismatch, "stratify_on length");

  std::vector<Index> ones, zeros;
  for (Index i = 0; i < n; ++i) {
    if (stratify_on && (*stratify_on)[i] == 1.0) ones.push_back(i);
    else zeros.push_back(i);
  }
  std::shuffle(ones.begin(), ones.end(), rng);
  std::shuffle(zeros.begin(), zeros.end(), rng);

  FoldAssignment folds;
  folds.v = v;
  folds.fold_of.assign(static_cast<std::size_t>(n), 0);
  int next = 0;
  for (const auto* group : {&ones, &zeros}) {
    for (Index i : *group) {
      folds.fold_of[i] = next;
      next = (next + 1) % v;
    }
  }
  return folds;
}

LearningTask outcome_task(const Dataset& d, bool with_mediator, Family family) {
  LearningTask task;
  const Index extra = with_mediator ? 2 : 1;
  task.x.resize(d.size(), d.covariate_count() + extra);
  task.x.col(0) = d.a;
  task.columns.push_back("A");
  if (with_mediator) {
    if (!d.m) throw Error(ErrorCode::MediatorRequired, "outcome task with mediator");
    task.x.col(1) = *d.m;
    task.columns.push_back("M");
  }
  task.x.rightCols(d.covariate_count()) = d.w;
  task.columns.insert(task.columns.end(), d.column_names.begin(), d.column_names.end());
  task.y = d.y;
  task.family = family;
  return task;
}

LearningTask propensity_task(const Dataset& d) {
  return {d.w, d.a, Family::Binomial, d.column_names};
}

LevelOne level_one_matrix(const LearningTask& task, const std::vector<LearnerSpec>& specs,
                          const FoldAssignment& folds, const SeedStream& seed) {
  if (specs.empty()) throw Error(ErrorCode::InvalidSpec, "learner library is empty");
  const Index n = task.y.size();
  if (static_cast<Index>(folds.fold_of.size()) != n) throw Error(ErrorCode::LengthMismatch, "fold assignment length");

  std::vector<std::vector<Index>> train(folds.v), valid(folds.v);
  for (int k = 0; k < folds.v; ++k) {
    train[k] = folds.training_rows(k);
    valid[k] = folds.validation_rows(k);
  }

  LevelOne out;
  std::vector<VectorXd> columns;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    LearnerSpec spec = specs[m];
    spec.family = task.family;
    VectorXd col(n);
    try {
      for (int k = 0; k < folds.v; ++k) {
        const MatrixXd xtr = task.x(train[k], Eigen::all);
        const VectorXd ytr = task.y(train[k]);
        const FittedLearner fit = fit_learner(spec, xtr, ytr, seed.child(m).child(static_cast<std::uint64_t>(k)));
        const VectorXd pred = fit.predict(task.x(valid[k], Eigen::all));
        if (!pred.allFinite()) throw Error(ErrorCode::InvalidSpec, "non-finite predictions");
        col(valid[k]) = pred;
      }
    } catch (const Error& e) {
      out.warnings.push_back("learner " + spec.name() + " dropped: " + e.what());
      continue;
    }
    out.kept.push_back(static_cast<int>(m));
    columns.push_back(std::move(col));
  }
  out.z.resize(n, static_cast<Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) out.z.col(static_cast<Index>(c)) = columns[c];
  return out;
}

VectorXd nnls(const MatrixXd& z, const VectorXd& y) {
  const Index m = z.cols();
  if (m == 0 || z.rows() == 0) throw Error(ErrorCode::EmptyMatrix, "nnls on an empty matrix");
  if (!z.allFinite() || !y.allFinite()) throw Error(ErrorCode::MissingValues, "nnls input has NaN");

  VectorXd w = VectorXd::Zero(m);
  std::vector<bool> passive(static_cast<std::size_t>(m), false);
  const double tol = 1e-10 * std::max(1.0, (z.transpose() * y).cwiseAbs().maxCoeff());

  auto solve_passive = [&]() {
    std::vector<Index> cols;
    for (Index j = 0; j < m; ++j) {
      if (passive[j]) cols.push_back(j);
    }
    VectorXd s = VectorXd::Zero(m);
    if (cols.empty()) return s;
    const MatrixXd zp = z(Eigen::all, cols);
    const VectorXd sp = zp.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < cols.size(); ++k) s[cols[k]] = sp[static_cast<Index>(k)];
    return s;
  };

  for (int outer = 0; outer < 3 * m + 10; ++outer) {
    const VectorXd grad = z.transpose() * (y - z * w);
    Index best = -1;
    double best_grad = tol;
    for (Index j = 0; j < m; ++j) {
      if (!passive[j] && grad[j] > best_grad) {
        best_grad = grad[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[best] = true;

    for (int inner = 0; inner < 3 * m + 10; ++inner) {
      VectorXd s = solve_passive();
      bool feasible = true;
      for (Index j = 0; j < m; ++j) {
        if (passive[j] && s[j] <= 0.0) feasible = false;
      }
      if (feasible) {
        w = s;
        break;
      }
      double alpha = 1.0;
      for (Index j = 0; j < m; ++j) {
        if (passive[j] && s[j] <= 0.0) alpha = std::min(alpha, w[j] / (w[j] - s[j]));
      }
      w += alpha * (s - w);
      for (Index j = 0; j < m; ++j) {
        if (passive[j] && w[j] <= 1e-15) {
          passive[j] = false;
          w[j] = 0.0;
        }
      }
    }
  }
  return w;
}

double meta_objective(const MatrixXd& z, const VectorXd& y, const VectorXd& w) {
  return (y - z * w).squaredNorm();
}

SimplexWeights solve_simplex_nnls(const MatrixXd& z, const VectorXd& y, const VectorXd* cv_risks) {
  if (z.cols() == 0 || z.rows() == 0) throw Error(ErrorCode::EmptyMatrix, "no level-one columns");
  SimplexWeights out;
  out.raw = nnls(z, y);
  const Index m = z.cols();

  const double total = out.raw.sum();
  if (total > 0.0) {
    out.weights = out.raw / total;
  } else {
    Index best = 0;
    if (cv_risks) {
      cv_risks->minCoeff(&best);
    } else {
      double lo = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < m; ++j) {
        const double r = (y - z.col(j)).squaredNorm();
        if (r < lo) {
          lo = r;
          best = j;
        }
      }
    }
    out.weights = VectorXd::Unit(m, best);
    out.discrete_fallback = true;
    return out;
  }

  // Normalization can move the solution off the NNLS optimum; never return a
  // combination that loses to a single learner on the training criterion.
  const double combined = meta_objective(z, y, out.weights);
  Index best = 0;
  double best_vertex = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < m; ++j) {
    const double r = (y - z.col(j)).squaredNorm();
    if (r < best_vertex) {
      best_vertex = r;
      best = j;
    }
  }
  if (combined > best_vertex) {
    out.weights = VectorXd::Unit(m, best);
    out.discrete_fallback = true;
  }
  return out;
}

namespace {

double cv_risk(const VectorXd& pred, const VectorXd& y, Family family) {
  if (family == Family::Gaussian) return (y - pred).squaredNorm() / static_cast<double>(y.size());
  double loss = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double p = clip_prob(pred[i]);
    loss -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return loss / static_cast<double>(y.size());
}

}  // namespace

VectorXd SuperLearnerModel::predict(const MatrixXd& x) const {
  VectorXd out = VectorXd::Zero(x.rows());
  for (std::size_t m = 0; m < base_models.size(); ++m) {
    const double w = weights[static_cast<Index>(m)];
    if (w != 0.0) out += w * base_models[m].predict(x);
  }
  if (family == Family::Binomial) out = out.unaryExpr([](double p) { return clip_prob(p); });
  return out;
}

SuperLearnerModel fit_super_learner(const LearningTask& task, const std::vector<LearnerSpec>& specs,
                                    const FoldAssignment& folds, const SeedStream& seed) {
  LevelOne l1 = level_one_matrix(task, specs, folds, seed);
  SuperLearnerModel model;
  model.family = task.family;
  model.warnings = l1.warnings;
  if (l1.kept.empty()) throw Error(ErrorCode::AllLearnersFailed, "every learner failed during cross-validation");

  model.cv_risks.resize(static_cast<Index>(l1.kept.size()));
  for (std::size_t c = 0; c < l1.kept.size(); ++c) {
    model.cv_risks[static_cast<Index>(c)] = cv_risk(l1.z.col(static_cast<Index>(c)), task.y, task.family);
  }
  const SimplexWeights sw = solve_simplex_nnls(l1.z, task.y, &model.cv_risks);
  model.weights = sw.weights;
  model.raw_weights = sw.raw;
  if (sw.discrete_fallback) model.warnings.push_back("ensemble fell back to the single best learner");

  for (std::size_t c = 0; c < l1.kept.size(); ++c) {
    LearnerSpec spec = specs[static_cast<std::size_t>(l1.kept[c])];
    spec.family = task.family;
    model.learner_names.push_back(spec.name());
    model.base_models.push_back(
        fit_learner(spec, task.x, task.y, seed.child(static_cast<std::uint64_t>(l1.kept[c])).child(folds.v),
                    task.columns));
  }
  model.level_one = std::move(l1.z);
  return model;
}

SuperLearnerModel fit_super_learner(const LearningTask& task, const std::vector<LearnerSpec>& specs, int v,
                                    const SeedStream& seed) {
  Rng rng = derive_substream(seed.child(0xF01D));
  std::optional<VectorXd> strata;
  if (task.family == Family::Binomial && is_binary(task.y)) strata = task.y;
  const FoldAssignment folds = make_folds(task.y.size(), v, strata, rng);
  return fit_super_learner(task, specs, folds, seed);
}

}  // namespace tc
