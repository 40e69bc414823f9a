#include "tc/sim.hpp"
#include "tc/tmle_mediation.hpp"

#include <doctest.h>

#include <cmath>

using namespace tc;

namespace {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

MediationOptions glm_options() {
  MediationOptions o;
  o.v_folds = 5;
  o.q_library = o.g_library = o.classifier_library = o.contrast_library = {LearnerSpec{Glm{}}};
  return o;
}

// W ~ N(0,1), A ~ Bern(expit(0.5 W)), M = alpha A + 0.5 W + e, Y = gamma A + beta M + 0.8 W + e.
Dataset mediation_data(Index n, std::uint64_t seed, double alpha, double beta, double gamma, bool constant_m = false) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  Dataset d;
  d.w.resize(n, 1);
  d.a.resize(n);
  d.y.resize(n);
  d.m = VectorXd(n);
  d.column_names = {"W"};
  for (Index i = 0; i < n; ++i) {
    const double w = z(rng);
    const double a = std::bernoulli_distribution(expit(0.5 * w))(rng) ? 1.0 : 0.0;
    const double m = constant_m ? 0.0 : alpha * a + 0.5 * w + z(rng);
    d.w(i, 0) = w;
    d.a[i] = a;
    (*d.m)[i] = m;
    d.y[i] = gamma * a + beta * m + 0.8 * w + z(rng);
  }
  return d;
}

double grid_argmin(const VectorXd& y, const VectorXd& off, const VectorXd& h, const VectorXd* w = nullptr) {
  double best = 0.0, best_loss = INFINITY;
  for (int k = -50000; k <= 50000; ++k) {
    const double loss = fluctuation_loss(y, off, h, k * 1e-4, w);
    if (loss < best_loss) {
      best_loss = loss;
      best = k * 1e-4;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("mediation clever covariate") {
  CHECK(clever_covariate_y(1, 0.5, 1.0) == 2.0);
  CHECK(clever_covariate_y(0, 0.5, 123.0) == -2.0);
  CHECK(clever_covariate_y(1, 0.25, 0.5) == 2.0);
}

TEST_CASE("density ratio by Bayes rule") {
  const VectorXd g = (VectorXd(3) << 0.2, 0.5, 0.7).finished();
  CHECK((density_ratio_from_classifier(g, g, 0.025).array() - 1.0).abs().maxCoeff() < 1e-12);

  // M | A, W ~ N(A + 0.5 W, 1): the classifier implied by Bayes' rule recovers the density ratio.
  for (auto [m, w, g1] : {std::tuple{0.5, 0.0, 0.5}, std::tuple{1.3, 0.2, 0.3}, std::tuple{-0.4, -1.0, 0.6}}) {
    const double f1 = normal_pdf(m - 1.0 - 0.5 * w), f0 = normal_pdf(m - 0.5 * w);
    const double p = g1 * f1 / (g1 * f1 + (1.0 - g1) * f0);
    const VectorXd r =
        density_ratio_from_classifier(VectorXd::Constant(1, p), VectorXd::Constant(1, g1), 0.025);
    CHECK(r[0] == doctest::Approx(f0 / f1).epsilon(1e-12));
  }
  const VectorXd at_half = density_ratio_from_classifier(VectorXd::Constant(1, 0.5), VectorXd::Constant(1, 0.5), 0.025);
  CHECK(at_half[0] == doctest::Approx(1.0));

  int floored = 0;
  const VectorXd r = density_ratio_from_classifier((VectorXd(2) << 0.001, 0.5).finished(),
                                                   (VectorXd(2) << 0.5, 0.5).finished(), 0.025, &floored);
  CHECK(r[0] == doctest::Approx(0.975 / 0.025));
  CHECK(floored == 1);
}

TEST_CASE("outcome fluctuation") {
  const VectorXd off = VectorXd::Zero(4);
  const VectorXd y = (VectorXd(4) << 0.7, 0.3, 0.6, 0.4).finished();
  CHECK(fluctuate_qbar(y, off, VectorXd::Zero(4)).epsilon == 0.0);
  CHECK(std::abs(fluctuate_qbar(y, off, (VectorXd(4) << 1, 1, 2, 2).finished()).epsilon) < 1e-8);

  Rng rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  const Index n = 200;
  VectorXd ys(n), o(n), c(n);
  for (Index i = 0; i < n; ++i) {
    ys[i] = u(rng);
    o[i] = logit(0.2 + 0.6 * u(rng));
    c[i] = u(rng) < 0.5 ? 2.0 * u(rng) / 0.4 : -1.0 / 0.6;
  }
  CHECK(std::abs(fluctuate_qbar(ys, o, c).epsilon - grid_argmin(ys, o, c)) < 1e-3);
}

TEST_CASE("contrast fluctuation on control rows") {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  const Index n = 200;
  VectorXd m(n), off(n), a(n), g1(n);
  for (Index i = 0; i < n; ++i) {
    m[i] = 0.3 + 0.4 * u(rng);
    off[i] = logit(0.3 + 0.4 * u(rng));
    a[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    g1[i] = 0.2 + 0.6 * u(rng);
  }
  const VectorXd h = (1.0 - g1.array()).inverse().matrix();
  const VectorXd w = (1.0 - a.array()).matrix();
  CHECK(std::abs(fluctuate_em(m, off, a, g1).epsilon - grid_argmin(m, off, h, &w)) < 1e-3);

  // Offsets already at the targeted fit.
  const Fluctuation f = fluctuate_em(m, off, a, g1);
  VectorXd updated(n);
  for (Index i = 0; i < n; ++i) updated[i] = off[i] + f.epsilon * h[i];
  CHECK(std::abs(fluctuate_em(m, updated, a, g1).epsilon) < 1e-8);

  CHECK_THROWS_AS(fluctuate_em(m, off, VectorXd::Ones(n), g1), Error);
  try {
    fluctuate_em(m, off, VectorXd::Ones(n), g1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoControls);
  }
}

TEST_CASE("estimates satisfy the decomposition and score equations") {
  const Dataset d = mediation_data(800, 11, 1.0, 1.0, 2.0);
  const MediationReport r = estimate_nde_nie(d, glm_options(), {3, 0});
  CHECK(r.nde.psi_hat + r.nie.psi_hat == doctest::Approx(r.te.psi_hat).epsilon(1e-12));
  CHECK(std::abs(r.score_y) <= 1e-6);
  CHECK(std::abs(r.score_m) <= 1e-6);
  CHECK((r.nie.eif - (r.te.eif - r.nde.eif)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(r.nde.psi_hat - 2.0) < 0.4);
  CHECK(std::abs(r.nie.psi_hat - 1.0) < 0.4);
  CHECK(r.nde.ci_lower < r.nde.psi_hat);
  CHECK(r.nde.se > 0.0);
}

TEST_CASE("a treatment without effect gives effects centred at zero") {
  const int reps = 10;
  double nde = 0.0, nie = 0.0, te = 0.0;
  for (int k = 0; k < reps; ++k) {
    const Dataset d = mediation_data(1000, 100 + static_cast<std::uint64_t>(k), 0.0, 1.0, 0.0);
    const MediationReport r = estimate_nde_nie(d, glm_options(), {4, static_cast<std::uint64_t>(k)});
    nde += r.nde.psi_hat / reps;
    nie += r.nie.psi_hat / reps;
    te += r.te.psi_hat / reps;
  }
  CHECK(std::abs(nde) < 0.1);
  CHECK(std::abs(nie) < 0.1);
  CHECK(std::abs(te) < 0.1);
}

TEST_CASE("a constant mediator carries no indirect effect") {
  const Dataset d = mediation_data(1000, 55, 1.0, 1.0, 2.0, true);
  const auto lib = with_family({LearnerSpec{Glm{}}}, Family::Binomial);
  Rng rng(1);
  const FoldAssignment folds = make_folds(d.size(), 5, d.a, rng);
  const SuperLearnerModel g = fit_super_learner(propensity_task(d), lib, folds, {7, 2});
  const VectorXd g1 = truncate_propensity(g.predict(d.w), 0.025);
  const VectorXd ratio = mediator_density_ratio(d, g1, lib, folds, {7, 4}, 0.025);
  CHECK((ratio.array() - 1.0).abs().maxCoeff() < 1e-6);

  double nie = 0.0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const MediationReport r = estimate_nde_nie(mediation_data(1000, 200 + k, 1.0, 1.0, 2.0, true), glm_options(), {8, k});
    nie += r.nie.psi_hat / 5.0;
  }
  CHECK(std::abs(nie) < 0.1);
}

TEST_CASE("mediation estimation needs a mediator and controls") {
  Dataset d = mediation_data(200, 1, 1.0, 1.0, 2.0);
  Dataset no_m = d;
  no_m.m.reset();
  CHECK_THROWS_AS(estimate_nde_nie(no_m, glm_options(), {1, 1}), Error);
  MediationOptions bad = glm_options();
  bad.a_min = 0.7;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("default library runs on the simulation design") {
  Rng rng = derive_substream({31, 0});
  const Dataset d = dgp_sample({ScenarioId::MedCorrect}, 1000, rng);
  MediationOptions o;
  o.v_folds = 5;
  const MediationReport r = estimate_nde_nie(d, o, {32, 0});
  CHECK(std::isfinite(r.nde.psi_hat));
  CHECK(std::abs(r.nde.psi_hat - 2.0) < 0.5);
  CHECK(std::abs(r.nie.psi_hat - 1.0) < 0.5);
  CHECK(std::abs(r.nde.mean_eif) <= 1e-6);
}
