#include "tc/sem_path.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace tc;

namespace {

VectorXd theta_for(const PathModel& m, const std::map<std::string, double>& values) {
  VectorXd t = VectorXd::Zero(m.parameter_count());
  for (const auto& [name, v] : values) {
    const int p = m.parameter_index(name);
    REQUIRE(p >= 0);
    t[p] = v;
  }
  return t;
}

// Simulates the structural equations of `m` at `theta`.
MatrixXd simulate(const PathModel& m, const VectorXd& theta, Index n, Rng& rng) {
  std::normal_distribution<double> z;
  const Index k = m.variable_count();
  MatrixXd out(n, k);
  for (Index i = 0; i < n; ++i) {
    for (int v : m.topological_order()) {
      const std::string& name = m.variables()[static_cast<std::size_t>(v)];
      double x = theta[m.parameter_index(name + "~1")] +
                 std::sqrt(theta[m.parameter_index(name + "~~" + name)]) * z(rng);
      for (const auto& p : m.parameters()) {
        if (p.kind == ParamKind::Edge && p.to == v) x += theta[m.parameter_index(p.name)] * out(i, p.from);
      }
      out(i, v) = x;
    }
  }
  return out;
}

// Least squares of column `target` on the listed columns plus intercept.
VectorXd ols(const MatrixXd& data, int target, const std::vector<int>& preds) {
  MatrixXd x(data.rows(), static_cast<Index>(preds.size()) + 1);
  x.col(0).setOnes();
  for (std::size_t j = 0; j < preds.size(); ++j) x.col(static_cast<Index>(j) + 1) = data.col(preds[j]);
  return x.colPivHouseholderQr().solve(data.col(target));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParseError;
}

PathFit fit_with(const PathModel& m, const std::map<std::string, double>& values, const Eigen::Matrix2d& v,
                 const std::string& pa, const std::string& pb) {
  PathFit f;
  f.theta_hat = theta_for(m, values);
  f.vcov = MatrixXd::Zero(m.parameter_count(), m.parameter_count());
  const int a = m.parameter_index(pa), b = m.parameter_index(pb);
  f.vcov(a, a) = v(0, 0);
  f.vcov(b, b) = v(1, 1);
  f.vcov(a, b) = f.vcov(b, a) = v(0, 1);
  f.vcov_available = true;
  return f;
}

}  // namespace

TEST_CASE("model text parsing") {
  const PathModel m = parse_path_model("# mediation\nM ~ A + W\nY ~ A + M + W\nY ~~ Y\n");
  CHECK(m.variable_count() == 4);
  CHECK(m.edge_parameter("A", "M") >= 0);
  CHECK(m.edge_parameter("M", "Y") >= 0);
  CHECK(m.parameter_index("W~~W") >= 0);
  CHECK(m.parameter_index("A->W") == -1);
  CHECK(m.parameter_count() == 5 + 4 + 4);

  const PathModel f = parse_path_model("Y ~ A\nA -> Y = 0.5\nY ~~ Y = 2");
  CHECK(f.parameters()[f.edge_parameter("A", "Y")].fixed == 0.5);
  CHECK(f.parameters()[f.parameter_index("Y~~Y")].fixed == 2.0);
  CHECK(f.free_parameters().size() == f.parameters().size() - 2);

  CHECK(code_of([] { parse_path_model("Y ~ A\nA ~ Y"); }) == ErrorCode::CyclicModel);
  CHECK(code_of([] { PathModel({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}, {"C", "A"}}); }) == ErrorCode::CyclicModel);
  CHECK(code_of([] { parse_path_model("Y ~ A + 3x"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_path_model("Y ~ A = 1"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_path_model("Y ~ A\nY ~~ A"); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("implied moments by hand") {
  const PathModel m({"A", "Y"}, {{"A", "Y"}});
  const double g = 0.7, s2 = 2.0, psi = 0.5;
  const auto im = implied_moments(m, theta_for(m, {{"A->Y", g}, {"A~~A", s2}, {"Y~~Y", psi}, {"A~1", 1.0}}));
  CHECK(im.sigma(0, 0) == doctest::Approx(s2));
  CHECK(im.sigma(0, 1) == doctest::Approx(g * s2));
  CHECK(im.sigma(1, 0) == doctest::Approx(g * s2));
  CHECK(im.sigma(1, 1) == doctest::Approx(g * g * s2 + psi));
  CHECK(im.mu[1] == doctest::Approx(g));

  const auto zero = implied_moments(m, theta_for(m, {{"A~~A", 3.0}, {"Y~~Y", 4.0}, {"A~1", 1.0}, {"Y~1", 2.0}}));
  CHECK(zero.sigma.isApprox((MatrixXd(2, 2) << 3, 0, 0, 4).finished()));
  CHECK(zero.mu == (VectorXd(2) << 1, 2).finished());

  const PathModel chain({"A", "M", "Y"}, {{"A", "M"}, {"M", "Y"}});
  const auto c = implied_moments(
      chain, theta_for(chain, {{"A->M", 1}, {"M->Y", 1}, {"A~~A", 1}, {"M~~M", 1}, {"Y~~Y", 1}}));
  CHECK(c.sigma(2, 2) == doctest::Approx(3.0));
  CHECK(c.sigma(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("implied moments agree with forward simulation") {
  const PathModel m = parse_path_model("M ~ A + W\nY ~ A + M + W");
  const VectorXd theta = theta_for(m, {{"A->M", 0.8}, {"W->M", -0.5}, {"A->Y", 1.2}, {"M->Y", 0.6}, {"W->Y", 0.3},
                                       {"A~1", 0.2}, {"W~1", -1.0}, {"M~1", 0.5}, {"Y~1", 2.0},
                                       {"A~~A", 1.0}, {"W~~W", 0.5}, {"M~~M", 1.5}, {"Y~~Y", 0.8}});
  const auto im = implied_moments(m, theta);
  Rng rng(123);
  const Index draws = 10'000'000;
  const MatrixXd sim = simulate(m, theta, draws, rng);
  const VectorXd mean = sim.colwise().mean();
  const MatrixXd centered = sim.rowwise() - mean.transpose();
  const double nd = static_cast<double>(draws);
  for (Index i = 0; i < 4; ++i) {
    CHECK(std::abs(mean[i] - im.mu[i]) < 3.0 * std::sqrt(im.sigma(i, i) / nd));
    for (Index j = 0; j <= i; ++j) {
      const VectorXd prod = centered.col(i).cwiseProduct(centered.col(j));
      const double cov = prod.mean();
      const double mc_se = std::sqrt((prod.array() - cov).square().mean() / nd);
      CHECK(std::abs(cov - im.sigma(i, j)) < 3.0 * mc_se);
    }
  }
}

TEST_CASE("fit function at exact moments") {
  const PathModel m({"A", "Y"}, {{"A", "Y"}});
  const VectorXd theta = theta_for(m, {{"A->Y", 0.4}, {"A~~A", 1.5}, {"Y~~Y", 0.7}, {"A~1", 0.3}, {"Y~1", -0.2}});
  const auto im = implied_moments(m, theta);
  CHECK(fml_objective(m, theta, im.sigma, im.mu) == doctest::Approx(std::log(im.sigma.determinant()) + 2.0));

  const PathModel one({"Y"}, {});
  const double s = 2.5, ybar = 1.0, mu = 0.4, var = 1.3;
  const VectorXd t1 = theta_for(one, {{"Y~1", mu}, {"Y~~Y", var}});
  CHECK(fml_objective(one, t1, MatrixXd::Constant(1, 1, s), VectorXd::Constant(1, ybar)) ==
        doctest::Approx(std::log(var) + s / var + (ybar - mu) * (ybar - mu) / var));
  CHECK(std::isinf(fml_objective(one, theta_for(one, {{"Y~~Y", -1.0}}), MatrixXd::Constant(1, 1, s),
                                 VectorXd::Constant(1, ybar))));
}

TEST_CASE("fit function gradient: central differences agree across step sizes") {
  const PathModel m = parse_path_model("M ~ A\nY ~ A + M");
  Rng rng(7);
  const VectorXd truth = theta_for(m, {{"A->M", 1}, {"A->Y", 2}, {"M->Y", 1}, {"A~~A", 1}, {"M~~M", 1}, {"Y~~Y", 1}});
  const MatrixXd data = simulate(m, truth, 500, rng);
  const SampleMoments mom = sample_moments(data);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  VectorXd theta = truth;
  for (Index i = 0; i < theta.size(); ++i) theta[i] += u(rng);
  auto f = [&](const VectorXd& t) { return fml_objective(m, t, mom.cov, mom.mean); };
  for (Index i = 0; i < theta.size(); ++i) {
    auto diff = [&](double h) {
      VectorXd up = theta, dn = theta;
      up[i] += h;
      dn[i] -= h;
      return (f(up) - f(dn)) / (2 * h);
    };
    const double fine = diff(1e-6 * (1.0 + std::abs(theta[i])));
    // Five-point stencil at a coarser step.
    const double h = 1e-3;
    VectorXd p1 = theta, p2 = theta, m1 = theta, m2 = theta;
    p1[i] += h, p2[i] += 2 * h, m1[i] -= h, m2[i] -= 2 * h;
    const double five = (-f(p2) + 8 * f(p1) - 8 * f(m1) + f(m2)) / (12 * h);
    CHECK(std::abs(fine - five) <= 1e-4 * std::max(1.0, std::abs(five)));
  }
}

TEST_CASE("ML path coefficients equal equation-wise OLS") {
  const PathModel m = parse_path_model("A ~ W\nM ~ A + W\nY ~ A + M + W");
  Rng rng(44);
  const VectorXd truth = theta_for(m, {{"W->A", 0.5}, {"A->M", 1}, {"W->M", 0.5}, {"A->Y", 2}, {"M->Y", 1},
                                       {"W->Y", 0.8}, {"W~~W", 1}, {"A~~A", 0.25}, {"M~~M", 1}, {"Y~~Y", 1}});
  const MatrixXd data = simulate(m, truth, 800, rng);
  const PathFit fit = fit_path_model(m, data);
  CHECK(fit.converged);
  const int a = m.variable_index("A"), w = m.variable_index("W"), mm = m.variable_index("M"),
            y = m.variable_index("Y");
  const VectorXd by = ols(data, y, {a, mm, w});
  CHECK(std::abs(fit.theta_hat[m.edge_parameter("A", "Y")] - by[1]) < 1e-6);
  CHECK(std::abs(fit.theta_hat[m.edge_parameter("M", "Y")] - by[2]) < 1e-6);
  CHECK(std::abs(fit.theta_hat[m.edge_parameter("W", "Y")] - by[3]) < 1e-6);
  CHECK(std::abs(fit.theta_hat[m.parameter_index("Y~1")] - by[0]) < 1e-6);
  const VectorXd bm = ols(data, mm, {a, w});
  CHECK(std::abs(fit.theta_hat[m.edge_parameter("A", "M")] - bm[1]) < 1e-6);

  // Observed information is symmetric and positive semidefinite.
  REQUIRE(fit.vcov_available);
  CHECK((fit.vcov - fit.vcov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(fit.vcov);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("saturated model reaches log|S| + k") {
  const PathModel m = parse_path_model("B ~ A\nC ~ A + B");
  Rng rng(3);
  const VectorXd truth =
      theta_for(m, {{"A->B", 0.5}, {"A->C", -1}, {"B->C", 0.3}, {"A~~A", 2}, {"B~~B", 1}, {"C~~C", 0.5}});
  const MatrixXd data = simulate(m, truth, 300, rng);
  const PathFit fit = fit_path_model(m, data);
  const SampleMoments mom = sample_moments(data);
  CHECK(std::abs(fit.objective - (std::log(mom.cov.determinant()) + 3.0)) < 1e-6);
}

TEST_CASE("estimates fall within three standard errors of the truth") {
  const PathModel m = parse_path_model("M ~ A + W\nY ~ A + M + W");
  const VectorXd truth = theta_for(m, {{"A->M", 1}, {"W->M", 0.5}, {"A->Y", 2}, {"M->Y", 1}, {"W->Y", 0.8},
                                       {"A~1", 0.5}, {"W~~W", 1}, {"A~~A", 0.25}, {"M~~M", 1}, {"Y~~Y", 1}});
  int inside = 0, total = 0;
  for (std::uint64_t r = 0; r < 30; ++r) {
    Rng rng = derive_substream({500, r});
    const MatrixXd data = simulate(m, truth, 5000, rng);
    const PathFit fit = fit_path_model(m, data);
    REQUIRE(fit.vcov_available);
    for (int p : m.free_parameters()) {
      ++total;
      if (std::abs(fit.theta_hat[p] - truth[p]) <= 3.0 * fit.se(p)) ++inside;
    }
  }
  CHECK(static_cast<double>(inside) / total >= 0.99);
}

TEST_CASE("fixed edges are honoured") {
  const PathModel m = parse_path_model("Y ~ A + W\nA -> Y = 2");
  Rng rng(8);
  const VectorXd truth = theta_for(m, {{"A->Y", 2}, {"W->Y", 0.7}, {"A~~A", 1}, {"W~~W", 1}, {"Y~~Y", 1}});
  const MatrixXd data = simulate(m, truth, 1000, rng);
  const PathFit fit = fit_path_model(m, data);
  const int g = m.edge_parameter("A", "Y");
  CHECK(fit.theta_hat[g] == 2.0);
  CHECK(fit.se(g) == 0.0);
  // With A fixed, W's coefficient is the OLS of (Y - 2A) on W.
  MatrixXd z(data.rows(), 2);
  z.col(0) = data.col(m.variable_index("Y")) - 2.0 * data.col(m.variable_index("A"));
  z.col(1) = data.col(m.variable_index("W"));
  CHECK(std::abs(fit.theta_hat[m.edge_parameter("W", "Y")] - ols(z, 0, {1})[1]) < 1e-6);
}

TEST_CASE("effects from path coefficients") {
  const PathModel m = parse_path_model("M ~ A\nY ~ A + M");
  const Eigen::Matrix2d zero = Eigen::Matrix2d::Zero();
  PathFit f = fit_with(m, {{"A->M", 1}, {"M->Y", 1}, {"A->Y", 2}}, zero, "A->M", "M->Y");
  PathEffects e = effects_from_paths(m, f, "A", std::string("M"), "Y");
  CHECK(e.direct == 2.0);
  CHECK(*e.indirect == 1.0);
  CHECK(e.total == 3.0);

  f = fit_with(m, {{"A->M", 0}, {"M->Y", 5}, {"A->Y", 2}}, zero, "A->M", "M->Y");
  CHECK(*effects_from_paths(m, f, "A", std::string("M"), "Y").indirect == 0.0);

  f = fit_with(m, {{"A->M", 2}, {"M->Y", 1.5}, {"A->Y", 0}}, zero, "A->M", "M->Y");
  e = effects_from_paths(m, f, "A", std::string("M"), "Y");
  CHECK(e.total == *e.indirect);

  const PathModel no_direct = parse_path_model("M ~ A\nY ~ M");
  CHECK(code_of([&] {
          effects_from_paths(no_direct, fit_with(no_direct, {}, zero, "A->M", "M->Y"), "A", std::string("M"), "Y");
        }) == ErrorCode::MissingEdge);
}

TEST_CASE("delta method standard error") {
  Eigen::Matrix2d v;
  v << 0.01, 0, 0, 0.04;
  CHECK(delta_se_product(1, 1, v) == doctest::Approx(std::sqrt(0.05)));
  CHECK(delta_se_product(0, -3, v) == doctest::Approx(3 * 0.1));
  CHECK(delta_se_product(2, 3, Eigen::Matrix2d::Zero()) == 0.0);
  bool clamped = false;
  v << 1, -5, -5, 1;
  CHECK(delta_se_product(1, 1, v, &clamped) == 0.0);
  CHECK(clamped);
}

TEST_CASE("bootstrap preconditions and degenerate data") {
  const PathModel m = parse_path_model("Y ~ A");
  const int a = m.variable_index("A"), y = m.variable_index("Y");
  MatrixXd data(100, 2);
  for (Index i = 0; i < 100; ++i) {
    data(i, a) = static_cast<double>(i % 7);
    data(i, y) = 1.0 + 2.0 * data(i, a);
  }
  const int g = m.edge_parameter("A", "Y");
  const std::vector<EffectSelector> sel{[g](const PathFit& f) { return f.theta_hat[g]; }};
  Rng rng(1);
  CHECK(code_of([&] { bootstrap_ci(m, data, sel, 50, rng); }) == ErrorCode::PreconditionFailed);

  const auto ci = bootstrap_ci(m, data, sel, 200, rng);
  CHECK(ci[0].lower == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(ci[0].upper == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(ci[0].reps == 200);
}

TEST_CASE("delta and bootstrap standard errors agree for the indirect effect") {
  const PathModel m = parse_path_model("A ~ W\nM ~ A + W\nY ~ A + M + W");
  const VectorXd truth = theta_for(m, {{"W->A", 0.5}, {"A->M", 1}, {"W->M", 0.5}, {"A->Y", 2}, {"M->Y", 1},
                                       {"W->Y", 0.8}, {"W~~W", 1}, {"A~~A", 0.25}, {"M~~M", 1}, {"Y~~Y", 1}});
  Rng rng(17);
  const MatrixXd data = simulate(m, truth, 5000, rng);
  const PathFit fit = fit_path_model(m, data);
  const PathEffects fx = effects_from_paths(m, fit, "A", std::string("M"), "Y");
  const int a = m.edge_parameter("A", "M"), b = m.edge_parameter("M", "Y");
  const auto ci =
      bootstrap_ci(m, data, {[a, b](const PathFit& f) { return f.theta_hat[a] * f.theta_hat[b]; }}, 1000, rng);
  CHECK(std::abs(ci[0].se - *fx.se_indirect) / *fx.se_indirect < 0.15);
  CHECK(ci[0].lower < *fx.indirect);
  CHECK(ci[0].upper > *fx.indirect);
}

TEST_CASE("path data maps dataset columns") {
  Dataset d;
  d.w = (MatrixXd(2, 1) << 5, 6).finished();
  d.a = (VectorXd(2) << 0, 1).finished();
  d.y = (VectorXd(2) << 7, 8).finished();
  d.m = (VectorXd(2) << 9, 10).finished();
  d.column_names = {"W"};
  const PathModel m = parse_path_model("M ~ A + W\nY ~ A + M + W");
  const MatrixXd x = path_data(m, d);
  CHECK(x(1, m.variable_index("A")) == 1.0);
  CHECK(x(0, m.variable_index("M")) == 9.0);
  CHECK(x(1, m.variable_index("Y")) == 8.0);
  CHECK(x(0, m.variable_index("W")) == 5.0);
  CHECK_THROWS_AS(path_data(parse_path_model("Y ~ Z"), d), Error);
}
