#include "tc/learners.hpp"

#include <doctest.h>

#include <cmath>

using namespace tc;

namespace {

MatrixXd grid_column(Index n, double lo, double hi) {
  MatrixXd x(n, 1);
  for (Index i = 0; i < n; ++i) x(i, 0) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return x;
}

double binomial_loss(const MatrixXd& x, const VectorXd& y, const VectorXd& coef) {
  double s = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double eta = coef[0] + x.row(i).dot(coef.tail(coef.size() - 1));
    s += std::log1p(std::exp(eta)) - y[i] * eta;
  }
  return s;
}

}  // namespace

TEST_CASE("expand_features appends products and powers") {
  const MatrixXd x = (MatrixXd(1, 2) << 1, 2).finished();
  const MatrixXd xi = expand_features(x, Expansion::Interactions);
  REQUIRE(xi.cols() == 3);
  CHECK(xi(0, 2) == 2.0);

  const MatrixXd xp = expand_features((MatrixXd(1, 1) << 2).finished(), Expansion::Polynomial, 3);
  REQUIRE(xp.cols() == 3);
  CHECK(xp(0, 0) == 2.0);
  CHECK(xp(0, 1) == 4.0);
  CHECK(xp(0, 2) == 8.0);

  CHECK(expand_features(MatrixXd::Zero(1, 2), Expansion::Interactions).isZero());

  const MatrixXd x3 = (MatrixXd(1, 3) << 2, 3, 5).finished();
  const MatrixXd x3i = expand_features(x3, Expansion::Interactions);
  REQUIRE(x3i.cols() == 6);
  CHECK(x3i(0, 3) == 6.0);
  CHECK(x3i(0, 4) == 10.0);
  CHECK(x3i(0, 5) == 15.0);
}

TEST_CASE("gaussian glm interpolates exact linear data") {
  const MatrixXd x = grid_column(20, -3, 3);
  const VectorXd y = (2.0 + 3.0 * x.col(0).array()).matrix();
  const GlmFit fit = fit_glm(x, y, Family::Gaussian);
  CHECK(std::abs(fit.coef[0] - 2.0) < 1e-10);
  CHECK(std::abs(fit.coef[1] - 3.0) < 1e-10);
  CHECK((fit.mean(x) - y).cwiseAbs().maxCoeff() < 1e-10);

  const GlmFit off = fit_glm(x, y, Family::Gaussian, y);
  CHECK(off.coef.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("binomial glm recovers a fractional logistic curve") {
  const MatrixXd x = grid_column(5, -2, 2);
  VectorXd y(5);
  for (Index i = 0; i < 5; ++i) y[i] = expit(x(i, 0));
  const GlmFit fit = fit_glm(x, y, Family::Binomial);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coef[0]) < 1e-6);
  CHECK(std::abs(fit.coef[1] - 1.0) < 1e-6);
}

TEST_CASE("glm score vanishes and agrees with finite differences") {
  Rng rng(11);
  std::normal_distribution<double> z;
  const Index n = 300;
  MatrixXd x(n, 2);
  VectorXd yg(n), yb(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = z(rng);
    x(i, 1) = z(rng);
    yg[i] = 1.0 + x(i, 0) - 0.5 * x(i, 1) + z(rng);
    yb[i] = std::bernoulli_distribution(expit(0.3 + x(i, 0)))(rng) ? 1.0 : 0.0;
  }
  MatrixXd design(n, 3);
  design << VectorXd::Ones(n), x;

  const GlmFit g = fit_glm(x, yg, Family::Gaussian);
  CHECK((design.transpose() * (yg - g.mean(x))).cwiseAbs().maxCoeff() < 1e-6);

  const GlmFit b = fit_glm(x, yb, Family::Binomial);
  const VectorXd score = design.transpose() * (yb - b.mean(x));
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);

  // Finite-difference gradient of the negative log-likelihood at a point away
  // from the optimum matches the analytic score.
  VectorXd at = b.coef;
  at[1] += 0.3;
  VectorXd p(n);
  for (Index i = 0; i < n; ++i) p[i] = expit(at[0] + x.row(i).dot(at.tail(2)));
  const VectorXd analytic = design.transpose() * (p - yb);
  const double h = 1e-5;
  for (Index k = 0; k < 3; ++k) {
    VectorXd up = at, dn = at;
    up[k] += h;
    dn[k] -= h;
    const double fd = (binomial_loss(x, yb, up) - binomial_loss(x, yb, dn)) / (2 * h);
    CHECK(std::abs(fd - analytic[k]) <= 1e-3 * std::max(1.0, std::abs(analytic[k])));
  }
}

TEST_CASE("binomial predictions are clipped away from 0 and 1") {
  const MatrixXd x = grid_column(10, -1, 1);
  VectorXd y(10);
  for (Index i = 0; i < 10; ++i) y[i] = x(i, 0) > 0 ? 1.0 : 0.0;
  const GlmFit fit = fit_glm(x, y, Family::Binomial);
  const VectorXd p = fit.mean((MatrixXd(2, 1) << 1e6, -1e6).finished());
  CHECK(p[0] == 1.0 - 1e-6);
  CHECK(p[1] == 1e-6);
}

TEST_CASE("constant outcome gives a constant prediction for every learner") {
  const Index n = 60;
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixXd x(n, 2);
  for (Index i = 0; i < n; ++i) x(i, 0) = u(rng), x(i, 1) = u(rng);
  const VectorXd y = VectorXd::Constant(n, 4.25);
  const SeedStream seed{5, 0};
  for (const auto& spec : {LearnerSpec{MeanOnly{}}, LearnerSpec{Forest{}}, LearnerSpec{Boost{}}}) {
    const FittedLearner f = fit_learner(spec, x, y, seed);
    CHECK((f.predict(x).array() - 4.25).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forest learns a step function") {
  const Index n = 500;
  Rng rng(17);
  std::uniform_real_distribution<double> u(-1, 1);
  MatrixXd x(n, 1);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    y[i] = x(i, 0) > 0 ? 1.0 : 0.0;
  }
  const LearnerSpec spec{Forest{.n_trees = 100, .max_depth = 3}};
  const FittedLearner f = fit_forest(x, y, spec, {9, 0});
  const MatrixXd grid = grid_column(201, -1, 1);
  const VectorXd pred = f.predict(grid);
  double mse = 0.0;
  for (Index i = 0; i < grid.rows(); ++i) {
    const double truth = grid(i, 0) > 0 ? 1.0 : 0.0;
    mse += (pred[i] - truth) * (pred[i] - truth);
  }
  CHECK(mse / static_cast<double>(grid.rows()) < 0.05);
}

TEST_CASE("forest prediction is the mean of tree leaf values") {
  const Index n = 100;
  Rng rng(23);
  std::normal_distribution<double> z;
  MatrixXd x(n, 2);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = z(rng);
    x(i, 1) = z(rng);
    y[i] = x(i, 0) + z(rng);
  }
  const FittedLearner f = fit_forest(x, y, LearnerSpec{Forest{.n_trees = 20}}, {1, 2});
  const auto& trees = std::get<FittedLearner::ForestState>(f.state()).trees;
  const MatrixXd row = x.topRows(1);
  double mean = 0.0;
  for (const auto& t : trees) mean += t.predict_row(row, 0);
  mean /= static_cast<double>(trees.size());
  CHECK(f.predict(row)[0] == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("tree ensembles stay inside the outcome range") {
  const Index n = 200;
  Rng rng(29);
  std::normal_distribution<double> z;
  MatrixXd x(n, 3);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 3; ++j) x(i, j) = z(rng);
    y[i] = std::sin(x(i, 0)) + x(i, 1) * x(i, 2) + 0.3 * z(rng);
  }
  MatrixXd far = 10.0 * x;
  for (const auto& spec : {LearnerSpec{Forest{}}, LearnerSpec{Boost{}}}) {
    const FittedLearner f = fit_learner(spec, x, y, {4, 4});
    const VectorXd p = f.predict(far);
    CHECK(p.minCoeff() >= y.minCoeff() - 1e-12);
    CHECK(p.maxCoeff() <= y.maxCoeff() + 1e-12);
  }
}

TEST_CASE("binomial boost predictions lie strictly inside (0,1)") {
  const Index n = 200;
  MatrixXd x = grid_column(n, -3, 3);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y[i] = x(i, 0) > 0 ? 1.0 : 0.0;
  const FittedLearner f = fit_learner({Boost{}, Family::Binomial}, x, y, {0, 0});
  const VectorXd p = f.predict(x);
  CHECK(p.minCoeff() >= 1e-6);
  CHECK(p.maxCoeff() <= 1.0 - 1e-6);
}

TEST_CASE("fits are deterministic for a fixed seed") {
  const Index n = 150;
  Rng rng(31);
  std::normal_distribution<double> z;
  MatrixXd x(n, 2);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = z(rng);
    x(i, 1) = z(rng);
    y[i] = x(i, 0) - x(i, 1) + z(rng);
  }
  const FittedLearner a = fit_forest(x, y, LearnerSpec{Forest{}}, {77, 3});
  const FittedLearner b = fit_forest(x, y, LearnerSpec{Forest{}}, {77, 3});
  CHECK(a.predict(x) == b.predict(x));
}

TEST_CASE("learner spec validation and prediction errors") {
  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ParseError;
  };
  CHECK(code_of([] { LearnerSpec{Boost{.n_rounds = 0}}.validate(); }) == ErrorCode::InvalidSpec);
  CHECK(code_of([] { LearnerSpec{Boost{.learning_rate = 1.5}}.validate(); }) == ErrorCode::InvalidSpec);
  CHECK(code_of([] { LearnerSpec{PolyGlm{0}}.validate(); }) == ErrorCode::InvalidSpec);
  CHECK(code_of([] { LearnerSpec{Forest{.n_trees = 0}}.validate(); }) == ErrorCode::InvalidSpec);

  const MatrixXd x = grid_column(10, 0, 1);
  const VectorXd y = x.col(0);
  const FittedLearner f = fit_learner(LearnerSpec{Glm{}}, x, y, {0, 0});
  CHECK((f.predict(x) - y).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(code_of([&] { f.predict(MatrixXd::Zero(3, 2)); }) == ErrorCode::ColumnMismatch);
  CHECK(code_of([&] { fit_forest(x.topRows(6), y.head(6), LearnerSpec{Forest{}}, {0, 0}); }) ==
        ErrorCode::InsufficientData);
  CHECK(code_of([&] { fit_glm(MatrixXd::Zero(2, 3), VectorXd::Zero(2), Family::Gaussian); }) ==
        ErrorCode::TooManyColumns);
}

TEST_CASE("library parsing") {
  const auto lib = parse_library("glm,glm.interaction,gam,forest,boost", Family::Binomial);
  REQUIRE(lib.size() == 5);
  CHECK(std::holds_alternative<PolyGlm>(lib[2].kind));
  CHECK(std::get<PolyGlm>(lib[2].kind).degree == 3);
  CHECK(lib[4].family == Family::Binomial);
  CHECK_THROWS_AS(parse_learner("svm", Family::Gaussian), Error);
}
