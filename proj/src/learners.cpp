#include "tc/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tc {

std::string_view to_string(Family f) { return f == Family::Gaussian ? "gaussian" : "binomial"; }

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

MatrixXd with_intercept(const MatrixXd& x) {
  MatrixXd d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

// Solves the (weighted) normal equations; falls back to a small ridge when
// the cross-product matrix is singular or badly conditioned.
VectorXd solve_normal(const MatrixXd& xtwx, const VectorXd& xtwz, bool& ridge_used) {
  Eigen::LLT<MatrixXd> llt(xtwx);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) {
    VectorXd beta = llt.solve(xtwz);
    if (beta.allFinite()) return beta;
  }
  ridge_used = true;
  const double scale = std::max(1.0, xtwx.diagonal().mean());
  MatrixXd ridged = xtwx;
  ridged.diagonal().array() += 1e-8 * scale;
  Eigen::LLT<MatrixXd> fallback(ridged);
  VectorXd beta = fallback.solve(xtwz);
  if (fallback.info() != Eigen::Success || !beta.allFinite()) {
    throw Error(ErrorCode::SingularDesign, "normal equations are singular even after ridge");
  }
  return beta;
}

double clip_binomial(double p) { return clip_prob(p, kProbFloor); }

}  // namespace

void LearnerSpec::validate() const {
  std::visit(Overloaded{
                 [](const MeanOnly&) {},
                 [](const Glm&) {},
                 [](const GlmInteraction&) {},
                 [](const PolyGlm& s) {
                   if (s.degree < 1 || s.degree > 4) throw Error(ErrorCode::InvalidSpec, "poly degree must be in 1..4");
                 },
                 [](const Forest& s) {
                   if (s.n_trees < 1) throw Error(ErrorCode::InvalidSpec, "n_trees must be >= 1");
                   if (s.max_depth < 1) throw Error(ErrorCode::InvalidSpec, "max_depth must be >= 1");
                   if (s.min_leaf < 1) throw Error(ErrorCode::InvalidSpec, "min_leaf must be >= 1");
                   if (s.mtry < 0) throw Error(ErrorCode::InvalidSpec, "mtry must be >= 0");
                 },
                 [](const Boost& s) {
                   if (s.n_rounds < 1) throw Error(ErrorCode::InvalidSpec, "n_rounds must be >= 1");
                   if (!(s.learning_rate > 0.0 && s.learning_rate <= 1.0)) {
                     throw Error(ErrorCode::InvalidSpec, "learning_rate must be in (0, 1]");
                   }
                   if (s.max_depth < 1) throw Error(ErrorCode::InvalidSpec, "max_depth must be >= 1");
                   if (s.min_leaf < 1) throw Error(ErrorCode::InvalidSpec, "min_leaf must be >= 1");
                 },
             },
             kind);
}

std::string LearnerSpec::name() const {
  return std::visit(Overloaded{
                        [](const MeanOnly&) -> std::string { return "mean"; },
                        [](const Glm&) -> std::string { return "glm"; },
                        [](const GlmInteraction&) -> std::string { return "glm.interaction"; },
                        [](const PolyGlm& s) -> std::string {
                          return s.degree == 3 ? "gam" : "poly" + std::to_string(s.degree);
                        },
                        [](const Forest&) -> std::string { return "forest"; },
                        [](const Boost&) -> std::string { return "boost"; },
                    },
                    kind);
}

LearnerSpec parse_learner(std::string_view name, Family family) {
  LearnerSpec spec;
  spec.family = family;
  if (name == "mean") spec.kind = MeanOnly{};
  else if (name == "glm") spec.kind = Glm{};
  else if (name == "glm.interaction") spec.kind = GlmInteraction{};
  else if (name == "gam") spec.kind = PolyGlm{3};
  else if (name.size() == 5 && name.substr(0, 4) == "poly" && name[4] >= '1' && name[4] <= '4')
    spec.kind = PolyGlm{name[4] - '0'};
  else if (name == "forest") spec.kind = Forest{};
  else if (name == "boost") spec.kind = Boost{};
  else throw Error(ErrorCode::InvalidSpec, "unknown learner '" + std::string(name) + "'");
  return spec;
}

std::vector<LearnerSpec> parse_library(std::string_view csv, Family family) {
  std::vector<LearnerSpec> out;
  std::string item;
  std::istringstream in{std::string(csv)};
  while (std::getline(in, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
               item.end());
    if (!item.empty()) out.push_back(parse_learner(item, family));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidSpec, "empty learner library");
  return out;
}

std::vector<LearnerSpec> with_family(std::vector<LearnerSpec> specs, Family family) {
  for (auto& s : specs) s.family = family;
  return specs;
}

MatrixXd expand_features(const MatrixXd& x, Expansion kind, int degree) {
  const Index p = x.cols();
  if (kind == Expansion::Interactions) {
    MatrixXd out(x.rows(), p + p * (p - 1) / 2);
    out.leftCols(p) = x;
    Index c = p;
    for (Index j = 0; j < p; ++j) {
      for (Index k = j + 1; k < p; ++k) out.col(c++) = x.col(j).cwiseProduct(x.col(k));
    }
    return out;
  }
  if (degree < 1 || degree > 4) throw Error(ErrorCode::TooManyColumns, "polynomial degree must be in 1..4");
  MatrixXd out(x.rows(), p * degree);
  out.leftCols(p) = x;
  Index c = p;
  for (Index j = 0; j < p; ++j) {
    for (int d = 2; d <= degree; ++d) out.col(c++) = x.col(j).array().pow(d).matrix();
  }
  return out;
}

VectorXd GlmFit::linear_predictor(const MatrixXd& x, const VectorXd* offset) const {
  VectorXd eta = (x * coef.tail(coef.size() - 1)).array() + coef[0];
  if (offset) eta += *offset;
  return eta;
}

VectorXd GlmFit::mean(const MatrixXd& x, const VectorXd* offset) const {
  VectorXd eta = linear_predictor(x, offset);
  if (family == Family::Gaussian) return eta;
  return eta.unaryExpr([](double e) { return clip_binomial(expit(e)); });
}

GlmFit fit_glm(const MatrixXd& x, const VectorXd& y, Family family, const std::optional<VectorXd>& offset,
               const std::optional<VectorXd>& weights) {
  const Index n = x.rows();
  if (y.size() != n || (offset && offset->size() != n) || (weights && weights->size() != n)) {
    throw Error(ErrorCode::LengthMismatch, "glm inputs have different lengths");
  }
  if (x.cols() + 1 > n) throw Error(ErrorCode::TooManyColumns, "more coefficients than rows");
  if (family == Family::Binomial && (y.minCoeff() < 0.0 || y.maxCoeff() > 1.0)) {
    throw Error(ErrorCode::PreconditionFailed, "binomial responses must lie in [0,1]");
  }

  const MatrixXd design = with_intercept(x);
  const VectorXd off = offset ? *offset : VectorXd::Zero(n);
  const VectorXd w = weights ? *weights : VectorXd::Ones(n);

  GlmFit fit;
  fit.family = family;
  if (family == Family::Gaussian) {
    const MatrixXd xtw = design.transpose() * w.asDiagonal();
    fit.coef = solve_normal(xtw * design, xtw * (y - off), fit.ridge_used);
    fit.iterations = 1;
    return fit;
  }

  const double ybar = std::clamp(y.dot(w) / w.sum(), 0.01, 0.99);
  VectorXd beta = VectorXd::Zero(design.cols());
  beta[0] = logit(ybar) - (offset ? off.dot(w) / w.sum() : 0.0);
  fit.converged = false;
  for (int it = 1; it <= 100; ++it) {
    fit.iterations = it;
    const VectorXd eta = design * beta + off;
    VectorXd wt(n), z(n);
    for (Index i = 0; i < n; ++i) {
      const double mu = expit(eta[i]);
      const double var = std::max(mu * (1.0 - mu), 1e-10);
      wt[i] = w[i] * var;
      z[i] = eta[i] - off[i] + (y[i] - mu) / var;
    }
    const MatrixXd xtw = design.transpose() * wt.asDiagonal();
    const VectorXd next = solve_normal(xtw * design, xtw * z, fit.ridge_used);
    const double change = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (change < 1e-8) {
      fit.converged = true;
      break;
    }
  }
  fit.coef = beta;
  return fit;
}

VectorXd FittedLearner::predict(const MatrixXd& x) const {
  if (x.cols() != input_columns_) {
    throw Error(ErrorCode::ColumnMismatch, "expected " + std::to_string(input_columns_) + " columns, got " +
                                               std::to_string(x.cols()));
  }
  const bool binomial = spec_.family == Family::Binomial;
  VectorXd out = std::visit(
      Overloaded{
          [&](const MeanState& s) -> VectorXd { return VectorXd::Constant(x.rows(), s.value); },
          [&](const GlmState& s) -> VectorXd {
            if (!s.expansion) return s.fit.mean(x);
            return s.fit.mean(expand_features(x, *s.expansion, s.degree));
          },
          [&](const ForestState& s) -> VectorXd {
            const DistinctRows distinct = DistinctRows::build(x);
            VectorXd p = VectorXd::Zero(distinct.rows.rows());
            for (const auto& t : s.trees) t.accumulate(distinct.rows, 1.0, p);
            p /= static_cast<double>(s.trees.size());
            return p(distinct.index).eval();
          },
          [&](const BoostState& s) -> VectorXd {
            const DistinctRows distinct = DistinctRows::build(x);
            VectorXd fd = VectorXd::Constant(distinct.rows.rows(), s.init);
            for (const auto& t : s.trees) t.accumulate(distinct.rows, s.learning_rate, fd);
            VectorXd f = fd(distinct.index);
            if (binomial) return f.unaryExpr([](double e) { return expit(e); });
            return f.cwiseMax(s.lower).cwiseMin(s.upper);
          },
      },
      state_);
  if (binomial) out = out.unaryExpr([](double p) { return clip_binomial(p); });
  return out;
}

FittedLearner fit_mean(const VectorXd& y, Family family) {
  if (y.size() < 1) throw Error(ErrorCode::InsufficientData, "mean learner needs data");
  LearnerSpec spec{MeanOnly{}, family};
  return FittedLearner(spec, 0, {}, FittedLearner::MeanState{y.mean()});
}

FittedLearner fit_forest(const MatrixXd& x, const VectorXd& y, const LearnerSpec& spec, const SeedStream& seed) {
  spec.validate();
  const auto& params = std::get<Forest>(spec.kind);
  const Index n = x.rows();
  if (n < 2 * params.min_leaf || y.size() != n) {
    throw Error(ErrorCode::InsufficientData, "forest needs at least 2 * min_leaf rows");
  }
  const int p = static_cast<int>(x.cols());
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_leaf = params.min_leaf;
  tp.mtry = params.mtry > 0 ? params.mtry : std::max(1, (p + 2) / 3);

  const FeatureBins bins = FeatureBins::build(x);
  const RowPatterns patterns = RowPatterns::build(bins);
  const auto n_pat = static_cast<std::size_t>(patterns.count);
  Rng rng = derive_substream(seed);
  std::uniform_int_distribution<int> draw(0, static_cast<int>(n) - 1);
  FittedLearner::ForestState state;
  state.trees.reserve(static_cast<std::size_t>(params.n_trees));
  // A bootstrap sample is held as copy counts per distinct pattern.
  std::vector<int> copies(n_pat);
  std::vector<int> rows;
  VectorXd wy(patterns.count), w(patterns.count);
  for (int t = 0; t < params.n_trees; ++t) {
    std::fill(copies.begin(), copies.end(), 0);
    wy.setZero();
    for (Index k = 0; k < n; ++k) {
      const int i = draw(rng);
      const int pat = patterns.pattern_of[static_cast<std::size_t>(i)];
      ++copies[pat];
      wy[pat] += y[i];
    }
    rows.clear();
    for (std::size_t q = 0; q < n_pat; ++q) {
      w[static_cast<Index>(q)] = copies[q];
      if (copies[q] > 0) rows.push_back(static_cast<int>(q));
    }
    state.trees.push_back(RegressionTree::fit(patterns.bins, rows, wy, w, tp, &rng, &copies));
  }
  return FittedLearner(spec, x.cols(), {}, std::move(state));
}

FittedLearner fit_boost(const MatrixXd& x, const VectorXd& y, const LearnerSpec& spec) {
  spec.validate();
  const auto& params = std::get<Boost>(spec.kind);
  const Index n = x.rows();
  if (n < 2 * params.min_leaf || y.size() != n) {
    throw Error(ErrorCode::InsufficientData, "boosting needs at least 2 * min_leaf rows");
  }
  const bool binomial = spec.family == Family::Binomial;
  if (binomial && (y.minCoeff() < 0.0 || y.maxCoeff() > 1.0)) {
    throw Error(ErrorCode::PreconditionFailed, "binomial responses must lie in [0,1]");
  }
  TreeParams tp;
  tp.max_depth = params.max_depth;
  tp.min_leaf = params.min_leaf;
  tp.lambda = binomial ? 1.0 : 0.0;

  // Fitted values are constant within a bin pattern, so rounds run on
  // pattern-level sums.
  const RowPatterns patterns = RowPatterns::build(FeatureBins::build(x));
  const Index n_pat = patterns.count;
  std::vector<int> copies(static_cast<std::size_t>(n_pat), 0);
  VectorXd y_sum = VectorXd::Zero(n_pat);
  for (Index i = 0; i < n; ++i) {
    const int pat = patterns.pattern_of[static_cast<std::size_t>(i)];
    ++copies[pat];
    y_sum[pat] += y[i];
  }
  std::vector<int> rows(static_cast<std::size_t>(n_pat));
  std::iota(rows.begin(), rows.end(), 0);

  FittedLearner::BoostState state;
  state.learning_rate = params.learning_rate;
  state.lower = y.minCoeff();
  state.upper = y.maxCoeff();
  state.init = binomial ? logit(std::clamp(y.mean(), 1e-6, 1.0 - 1e-6)) : y.mean();

  VectorXd f = VectorXd::Constant(n_pat, state.init);
  VectorXd g(n_pat), h(n_pat);
  for (int round = 0; round < params.n_rounds; ++round) {
    for (Index q = 0; q < n_pat; ++q) {
      const double c = copies[static_cast<std::size_t>(q)];
      if (binomial) {
        const double p = expit(f[q]);
        g[q] = y_sum[q] - c * p;
        h[q] = c * std::max(p * (1.0 - p), 1e-12);
      } else {
        g[q] = y_sum[q] - c * f[q];
        h[q] = c;
      }
    }
    RegressionTree tree = RegressionTree::fit(patterns.bins, rows, g, h, tp, nullptr, &copies);
    for (Index q = 0; q < n_pat; ++q) f[q] += params.learning_rate * tree.leaf_value(patterns.bins, static_cast<int>(q));
    state.trees.push_back(std::move(tree));
  }
  return FittedLearner(spec, x.cols(), {}, std::move(state));
}

FittedLearner fit_learner(const LearnerSpec& spec, const MatrixXd& x, const VectorXd& y, const SeedStream& seed,
                          std::vector<std::string> columns) {
  spec.validate();
  if (x.rows() != y.size()) throw Error(ErrorCode::LengthMismatch, "x and y row counts differ");
  auto glm_learner = [&](std::optional<Expansion> expansion, int degree) {
    const MatrixXd design = expansion ? expand_features(x, *expansion, degree) : x;
    GlmFit fit = fit_glm(design, y, spec.family);
    const bool converged = fit.converged;
    return FittedLearner(spec, x.cols(), std::move(columns), FittedLearner::GlmState{expansion, degree, std::move(fit)},
                         converged);
  };
  return std::visit(Overloaded{
                        [&](const MeanOnly&) {
                          FittedLearner m = fit_mean(y, spec.family);
                          return FittedLearner(spec, x.cols(), std::move(columns), m.state());
                        },
                        [&](const Glm&) { return glm_learner(std::nullopt, 1); },
                        [&](const GlmInteraction&) { return glm_learner(Expansion::Interactions, 2); },
                        [&](const PolyGlm& s) { return glm_learner(Expansion::Polynomial, s.degree); },
                        [&](const Forest&) {
                          FittedLearner f = fit_forest(x, y, spec, seed);
                          return FittedLearner(spec, x.cols(), std::move(columns), f.state());
                        },
                        [&](const Boost&) {
                          FittedLearner b = fit_boost(x, y, spec);
                          return FittedLearner(spec, x.cols(), std::move(columns), b.state());
                        },
                    },
                    spec.kind);
}

}  // namespace tc
