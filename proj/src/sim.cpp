#include "tc/sim.hpp"

#include "tc/sem_path.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <tuple>

namespace tc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ScenarioName {
  ScenarioId id;
  std::string_view name;
};

constexpr ScenarioName kScenarioNames[] = {
    {ScenarioId::AteCorrect, "AteCorrect"},     {ScenarioId::AteNoInteraction, "AteNoInteraction"},
    {ScenarioId::AteNonLinear, "AteNonLinear"}, {ScenarioId::AteNonNormal, "AteNonNormal"},
    {ScenarioId::Cate, "Cate"},                 {ScenarioId::MedCorrect, "MedCorrect"},
    {ScenarioId::MedMisspecYW, "MedMisspecYW"}, {ScenarioId::MedMisspecMWYW, "MedMisspecMWYW"},
};

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double_field(const std::string& s) {
  if (s == "NA" || s == "nan" || s == "NaN") return kNaN;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, "bad number '" + s + "'");
  }
  return v;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Covariates of the treatment-effect scenarios.
struct AteCovariates {
  double w1, w2, w3, w4;
};

AteCovariates draw_ate_covariates(Rng& rng) {
  std::bernoulli_distribution b1(0.5), b2(0.65);
  std::uniform_int_distribution<int> u3(0, 4), u4(0, 5);
  AteCovariates w;
  w.w1 = b1(rng) ? 1.0 : 0.0;
  w.w2 = b2(rng) ? 1.0 : 0.0;
  w.w3 = u3(rng);
  w.w4 = u4(rng);
  return w;
}

double ate_propensity(const AteCovariates& w) {
  return expit(-2.5 + 0.05 * w.w2 + 0.25 * w.w3 + 0.6 * w.w4 + 0.4 * w.w2 * w.w4);
}

double ate_outcome_mean(const Scenario& s, double a, const AteCovariates& w) {
  const bool nonlinear = s.id == ScenarioId::AteNonLinear;
  const double w3 = nonlinear ? std::pow(w.w3, 4) : w.w3;
  const double w4 = nonlinear ? std::pow(w.w4, 4) : w.w4;
  double mean = -1.0 + s.psi * a + 0.1 * w.w1 + 0.35 * w.w2 + 0.25 * w3 + 0.2 * w4 + 3.0 * w.w2 * w.w4;
  if (s.id == ScenarioId::Cate) mean += 0.5 * a * w.w1;
  return mean;
}

double ate_noise(const Scenario& s, Rng& rng) {
  if (s.id == ScenarioId::AteNonNormal) return std::student_t_distribution<double>(2.0)(rng);
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

double mediator_mean(const Scenario& s, double a, double w) {
  return a + 0.5 * (s.id == ScenarioId::MedMisspecMWYW ? w * w : w);
}

double med_outcome_mean(const Scenario& s, double a, double m, double w) {
  const bool misspec = s.id == ScenarioId::MedMisspecYW || s.id == ScenarioId::MedMisspecMWYW;
  return 2.0 * a + m + 0.8 * (misspec ? std::pow(w, 4) : w);
}

SimulationRecord failed_record(const std::string& what) {
  SimulationRecord r;
  r.estimate = r.se = r.ci_lower = r.ci_upper = kNaN;
  r.mean_eif = kNaN;
  r.failed = true;
  r.error = what;
  return r;
}

SimulationRecord from_report(const TmleReport& rep) {
  SimulationRecord r;
  r.estimate = rep.psi_hat;
  r.se = rep.se;
  r.ci_lower = rep.ci_lower;
  r.ci_upper = rep.ci_upper;
  r.mean_eif = rep.mean_eif;
  return r;
}

SimulationRecord wald(double estimate, double se) {
  SimulationRecord r;
  r.estimate = estimate;
  r.se = se;
  r.ci_lower = estimate - kZ975 * se;
  r.ci_upper = estimate + kZ975 * se;
  r.mean_eif = kNaN;
  return r;
}

// Treatment-effect data plus the derived columns the path models use.
Dataset with_products(const Dataset& d) {
  Dataset out = d;
  const Index w1 = d.column_index("W1"), w2 = d.column_index("W2"), w4 = d.column_index("W4");
  out.w.conservativeResize(Eigen::NoChange, d.w.cols() + 2);
  out.w.col(d.w.cols()) = d.w.col(w2).cwiseProduct(d.w.col(w4));
  out.w.col(d.w.cols() + 1) = d.a.cwiseProduct(d.w.col(w1));
  out.column_names.push_back("W2W4");
  out.column_names.push_back("AW1");
  return out;
}

std::vector<SimulationRecord> ate_family_method(const Scenario& s, const Dataset& d, Method method,
                                                const SeedStream& seed, const EstimatorSettings& est) {
  const bool cate = s.id == ScenarioId::Cate;
  const bool interaction = s.id != ScenarioId::AteNoInteraction;
  std::vector<Interaction> products;
  if (interaction) products.emplace_back("W2", "W4");
  switch (method) {
    case Method::Tmle: {
      AteOptions opts;
      opts.v_folds = est.v_folds;
      opts.q_library = est.ate_library;
      opts.g_library = est.ate_library;
      if (cate) return {from_report(estimate_cate_stratified(d, parse_stratum("W1=1", d), opts, seed))};
      return {from_report(estimate_ate(d, opts, seed))};
    }
    case Method::Regression: {
      if (cate) {
        SimulationRecord r = from_report(regression_cate(d, "W1", 1.0, products));
        r.mean_eif = kNaN;
        return {r};
      }
      SimulationRecord r = from_report(regression_ate(d, products));
      r.mean_eif = kNaN;
      return {r};
    }
    case Method::Sem: {
      std::string rhs = "A + W1 + W2 + W3 + W4";
      if (interaction) rhs += " + W2W4";
      if (cate) rhs += " + AW1";
      const PathModel model = parse_path_model("Y ~ " + rhs);
      const PathFit fit = fit_path_model(model, path_data(model, with_products(d)));
      if (!fit.vcov_available) throw Error(ErrorCode::PreconditionFailed, "path model vcov unavailable");
      const int g = model.edge_parameter("A", "Y");
      if (!cate) return {wald(fit.theta_hat[g], fit.se(g))};
      const int t = model.edge_parameter("AW1", "Y");
      const double var = fit.vcov(g, g) + fit.vcov(t, t) + 2.0 * fit.vcov(g, t);
      return {wald(fit.theta_hat[g] + fit.theta_hat[t], std::sqrt(std::max(var, 0.0)))};
    }
  }
  return {};
}

std::vector<SimulationRecord> mediation_method(const Dataset& d, Method method, const SeedStream& seed,
                                               const EstimatorSettings& est) {
  switch (method) {
    case Method::Tmle: {
      MediationOptions opts;
      opts.v_folds = est.v_folds;
      opts.q_library = opts.g_library = opts.classifier_library = opts.contrast_library = est.mediation_library;
      const MediationReport rep = estimate_nde_nie(d, opts, seed);
      return {from_report(rep.nde), from_report(rep.nie), from_report(rep.te)};
    }
    case Method::Regression:
    case Method::Sem: {
      const PathModel model = parse_path_model("A ~ W\nM ~ A + W\nY ~ A + M + W");
      const MatrixXd data = path_data(model, d);
      const PathFit fit = fit_path_model(model, data);
      if (!fit.vcov_available) throw Error(ErrorCode::PreconditionFailed, "path model vcov unavailable");
      const PathEffects fx = effects_from_paths(model, fit, "A", std::string("M"), "Y");
      std::vector<SimulationRecord> out = {wald(fx.direct, fx.se_direct), wald(*fx.indirect, *fx.se_indirect),
                                           wald(fx.total, fx.se_total)};
      if (method == Method::Regression) return out;

      const int g = model.edge_parameter("A", "Y");
      const int a = model.edge_parameter("A", "M");
      const int b = model.edge_parameter("M", "Y");
      std::vector<EffectSelector> selectors = {
          [g](const PathFit& f) { return f.theta_hat[g]; },
          [a, b](const PathFit& f) { return f.theta_hat[a] * f.theta_hat[b]; },
          [g, a, b](const PathFit& f) { return f.theta_hat[g] + f.theta_hat[a] * f.theta_hat[b]; },
      };
      Rng rng = derive_substream(seed.child(0));
      const auto intervals = bootstrap_ci(model, data, selectors, est.bootstrap_reps, rng);
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].ci_lower = intervals[k].lower;
        out[k].ci_upper = intervals[k].upper;
      }
      return out;
    }
  }
  return {};
}

}  // namespace

std::string_view to_string(ScenarioId id) {
  for (const auto& s : kScenarioNames) {
    if (s.id == id) return s.name;
  }
  return "?";
}

bool Scenario::is_mediation() const {
  return id == ScenarioId::MedCorrect || id == ScenarioId::MedMisspecYW || id == ScenarioId::MedMisspecMWYW;
}

std::string Scenario::label() const {
  std::string out(to_string(id));
  if (!is_mediation()) out += ":" + format_double(psi);
  return out;
}

Scenario parse_scenario(std::string_view text, double psi) {
  const auto colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  Scenario s;
  s.psi = psi;
  bool found = false;
  for (const auto& entry : kScenarioNames) {
    if (entry.name == name) {
      s.id = entry.id;
      found = true;
    }
  }
  if (!found) throw Error(ErrorCode::UnknownScenario, "unknown scenario '" + std::string(text) + "'");
  if (colon != std::string_view::npos) {
    if (s.is_mediation()) throw Error(ErrorCode::UnknownScenario, "mediation scenarios take no effect size");
    s.psi = parse_double_field(std::string(text.substr(colon + 1)));
  }
  return s;
}

std::string_view to_string(Effect e) {
  switch (e) {
    case Effect::Ate: return "ate";
    case Effect::Cate: return "cate";
    case Effect::Nde: return "nde";
    case Effect::Nie: return "nie";
    case Effect::Te: return "te";
  }
  return "?";
}

Effect parse_effect(std::string_view text) {
  for (Effect e : {Effect::Ate, Effect::Cate, Effect::Nde, Effect::Nie, Effect::Te}) {
    if (to_string(e) == text) return e;
  }
  throw Error(ErrorCode::ParseError, "unknown effect '" + std::string(text) + "'");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Tmle: return "tmle";
    case Method::Regression: return "regression";
    case Method::Sem: return "sem";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::Tmle, Method::Regression, Method::Sem}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::ParseError, "unknown method '" + std::string(text) + "'");
}

std::vector<Effect> scenario_effects(const Scenario& s) {
  if (s.is_mediation()) return {Effect::Nde, Effect::Nie, Effect::Te};
  if (s.id == ScenarioId::Cate) return {Effect::Cate};
  return {Effect::Ate};
}

Dataset dgp_sample(const Scenario& s, Index n, Rng& rng) {
  if (n < 50) throw Error(ErrorCode::InsufficientData, "simulated datasets need n >= 50");
  Dataset d;
  d.a.resize(n);
  d.y.resize(n);
  if (s.is_mediation()) {
    std::normal_distribution<double> normal(0.0, 1.0);
    d.w.resize(n, 1);
    d.m = VectorXd(n);
    d.column_names = {"W"};
    for (Index i = 0; i < n; ++i) {
      const double w = normal(rng);
      const double a = std::bernoulli_distribution(expit(0.5 * w))(rng) ? 1.0 : 0.0;
      const double m = mediator_mean(s, a, w) + normal(rng);
      d.w(i, 0) = w;
      d.a[i] = a;
      (*d.m)[i] = m;
      d.y[i] = med_outcome_mean(s, a, m, w) + normal(rng);
    }
    return d;
  }
  d.w.resize(n, 4);
  d.column_names = {"W1", "W2", "W3", "W4"};
  for (Index i = 0; i < n; ++i) {
    const AteCovariates w = draw_ate_covariates(rng);
    const double a = std::bernoulli_distribution(ate_propensity(w))(rng) ? 1.0 : 0.0;
    d.w.row(i) << w.w1, w.w2, w.w3, w.w4;
    d.a[i] = a;
    d.y[i] = ate_outcome_mean(s, a, w) + ate_noise(s, rng);
  }
  return d;
}

double true_value(const Scenario& s, Effect e) {
  const auto effects = scenario_effects(s);
  if (std::find(effects.begin(), effects.end(), e) == effects.end()) {
    throw Error(ErrorCode::UnknownScenario,
                std::string(to_string(e)) + " is not defined for scenario " + std::string(to_string(s.id)));
  }
  switch (e) {
    case Effect::Ate: return s.psi;
    case Effect::Cate: return s.psi + 0.5;
    case Effect::Nde: return 2.0;
    case Effect::Nie: return 1.0;
    case Effect::Te: return 3.0;
  }
  return kNaN;
}

OracleEstimate brute_force_truth(const Scenario& s, Effect e, Index draws, Rng& rng) {
  true_value(s, e);  // validates the pair
  if (draws < 2) throw Error(ErrorCode::InsufficientData, "need at least two draws");
  std::normal_distribution<double> normal(0.0, 1.0);
  // Welford accumulation of the per-draw contrast.
  double mean = 0.0, m2 = 0.0;
  for (Index i = 0; i < draws; ++i) {
    double contrast = 0.0;
    if (s.is_mediation()) {
      const double w = normal(rng);
      const double m0 = mediator_mean(s, 0.0, w) + normal(rng);
      const double m1 = mediator_mean(s, 1.0, w) + normal(rng);
      auto y = [&](double a, double m) { return med_outcome_mean(s, a, m, w) + normal(rng); };
      switch (e) {
        case Effect::Nde: contrast = y(1.0, m0) - y(0.0, m0); break;
        case Effect::Nie: contrast = y(1.0, m1) - y(1.0, m0); break;
        default: contrast = y(1.0, m1) - y(0.0, m0); break;
      }
    } else {
      AteCovariates w = draw_ate_covariates(rng);
      if (e == Effect::Cate) w.w1 = 1.0;
      const double y1 = ate_outcome_mean(s, 1.0, w) + ate_noise(s, rng);
      const double y0 = ate_outcome_mean(s, 0.0, w) + ate_noise(s, rng);
      contrast = y1 - y0;
    }
    const double delta = contrast - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (contrast - mean);
  }
  OracleEstimate out;
  out.mean = mean;
  out.mc_se = std::sqrt(m2 / static_cast<double>(draws - 1) / static_cast<double>(draws));
  out.draws = draws;
  return out;
}

MetricRow metrics(const std::vector<SimulationRecord>& records, double truth) {
  if (records.empty()) throw Error(ErrorCode::InsufficientData, "no records to summarize");
  MetricRow row;
  row.scenario = records.front().scenario;
  row.method = records.front().method;
  row.effect = records.front().effect;
  row.n = records.front().n;
  row.absolute = truth == 0.0;
  const double denom = row.absolute ? 1.0 : truth;
  double bias = 0.0, sq = 0.0, covered = 0.0, rejected = 0.0;
  for (const auto& r : records) {
    if (r.scenario != row.scenario || r.method != row.method || r.effect != row.effect || r.n != row.n) {
      throw Error(ErrorCode::PreconditionFailed, "records from different cells");
    }
    if (r.failed) {
      ++row.failures;
      continue;
    }
    ++row.n_sim;
    const double err = (r.estimate - truth) / denom;
    bias += err;
    sq += err * err;
    if (r.ci_lower < truth && truth < r.ci_upper) covered += 1.0;
    if (r.ci_lower > 0.0 || r.ci_upper < 0.0) rejected += 1.0;
  }
  if (row.n_sim == 0) {
    row.relative_bias = row.coverage = row.power = row.std_rmse = kNaN;
    return row;
  }
  const auto k = static_cast<double>(row.n_sim);
  row.relative_bias = bias / k;
  row.coverage = covered / k;
  row.power = rejected / k;
  row.std_rmse = std::sqrt(sq / k);
  return row;
}

std::vector<MetricRow> aggregate(const std::vector<SimulationRecord>& records) {
  using Key = std::tuple<std::string, Method, Effect, Index>;
  std::vector<Key> order;
  std::map<Key, std::vector<SimulationRecord>> groups;
  for (const auto& r : records) {
    Key key{r.scenario, r.method, r.effect, r.n};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(r);
  }
  std::vector<MetricRow> rows;
  for (const auto& key : order) {
    const Scenario s = parse_scenario(std::get<0>(key));
    rows.push_back(metrics(groups[key], true_value(s, std::get<2>(key))));
  }
  return rows;
}

SeedStream replication_seed(std::uint64_t master_seed, const Scenario& s, Index n, int rep) {
  std::uint64_t h = fnv1a(s.label());
  h = splitmix64(h ^ static_cast<std::uint64_t>(n));
  h = splitmix64(h ^ static_cast<std::uint64_t>(rep));
  return SeedStream{master_seed, h};
}

std::vector<SimulationRecord> run_replication(const Scenario& s, Index n, int rep, const GridOptions& opts) {
  const SeedStream seed = replication_seed(opts.master_seed, s, n, rep);
  Rng data_rng = derive_substream(seed.child(0));
  const Dataset d = dgp_sample(s, n, data_rng);
  const auto effects = scenario_effects(s);

  std::vector<SimulationRecord> out;
  for (Method method : opts.methods) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<SimulationRecord> recs;
    const SeedStream method_seed = seed.child(1 + static_cast<std::uint64_t>(method));
    try {
      recs = s.is_mediation() ? mediation_method(d, method, method_seed, opts.estimators)
                              : ate_family_method(s, d, method, method_seed, opts.estimators);
      for (const auto& r : recs) {
        if (!std::isfinite(r.estimate) || !std::isfinite(r.se)) throw Error(ErrorCode::PreconditionFailed, "non-finite estimate");
      }
    } catch (const std::exception& e) {
      recs.assign(effects.size(), failed_record(e.what()));
    }
    const double ms =
        opts.record_timing
            ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()
            : 0.0;
    for (std::size_t k = 0; k < recs.size(); ++k) {
      SimulationRecord& r = recs[k];
      r.scenario = s.label();
      r.method = method;
      r.effect = effects[k];
      r.n = n;
      r.rep = rep;
      r.seed = seed.seed();
      r.wall_ms = ms;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<SimulationRecord> run_grid(const GridOptions& opts) {
  if (opts.n_sim < 1) throw Error(ErrorCode::PreconditionFailed, "n_sim must be >= 1");
  struct Task {
    std::size_t scenario;
    Index n;
    int rep;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < opts.scenarios.size(); ++s) {
    for (Index n : opts.ns) {
      for (int r = 0; r < opts.n_sim; ++r) tasks.push_back({s, n, r});
    }
  }
  std::vector<std::vector<SimulationRecord>> slots(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      slots[t] = run_replication(opts.scenarios[tasks[t].scenario], tasks[t].n, tasks[t].rep, opts);
    }
  };
  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<SimulationRecord> out;
  for (auto& slot : slots) {
    for (auto& r : slot) out.push_back(std::move(r));
  }
  return out;
}

Profile profile(std::string_view name) {
  if (name == "desk") return {{200, 500, 1000, 2000, 3000}, 200, {500, 1000, 2000}, 100};
  if (name == "paper") return {{200, 500, 1000, 2000, 3000}, 1000, {500, 1000, 2000}, 200};
  throw Error(ErrorCode::InvalidSpec, "unknown profile '" + std::string(name) + "'");
}

void write_records_csv(std::ostream& out, const std::vector<SimulationRecord>& records) {
  out << "scenario,method,effect,n,rep,seed,estimate,se,ci_lower,ci_upper,failed,wall_ms\n";
  for (const auto& r : records) {
    out << r.scenario << ',' << to_string(r.method) << ',' << to_string(r.effect) << ',' << r.n << ',' << r.rep << ','
        << r.seed << ',' << format_double(r.estimate) << ',' << format_double(r.se) << ','
        << format_double(r.ci_lower) << ',' << format_double(r.ci_upper) << ',' << (r.failed ? 1 : 0) << ','
        << format_double(r.wall_ms) << '\n';
  }
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
T parse_integer(const std::string& s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, "bad integer '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<SimulationRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "records file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected = "scenario,method,effect,n,rep,seed,estimate,se,ci_lower,ci_upper,failed,wall_ms";
  if (line != expected) throw Error(ErrorCode::ParseError, "unexpected records header");
  std::vector<SimulationRecord> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != 12) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 12 fields");
    SimulationRecord r;
    r.scenario = parse_scenario(f[0]).label();
    r.method = parse_method(f[1]);
    r.effect = parse_effect(f[2]);
    r.n = parse_integer<Index>(f[3]);
    r.rep = parse_integer<int>(f[4]);
    r.seed = parse_integer<std::uint64_t>(f[5]);
    r.estimate = parse_double_field(f[6]);
    r.se = parse_double_field(f[7]);
    r.ci_lower = parse_double_field(f[8]);
    r.ci_upper = parse_double_field(f[9]);
    if (f[10] != "0" && f[10] != "1") throw Error(ErrorCode::ParseError, "failed flag must be 0 or 1");
    r.failed = f[10] == "1";
    r.wall_ms = parse_double_field(f[11]);
    r.mean_eif = kNaN;
    out.push_back(std::move(r));
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "scenario,method,effect,n,n_sim,relative_bias,coverage,power,std_rmse\n";
  for (const auto& m : rows) {
    out << m.scenario << ',' << to_string(m.method) << ',' << to_string(m.effect) << ',' << m.n << ',' << m.n_sim
        << ',' << format_double(m.relative_bias) << ',' << format_double(m.coverage) << ','
        << format_double(m.power) << ',' << format_double(m.std_rmse) << '\n';
  }
}

void write_plot_data_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "metric,scenario,effect,series,x,value\n";
  const std::pair<std::string_view, double MetricRow::*> columns[] = {
      {"relative_bias", &MetricRow::relative_bias},
      {"coverage", &MetricRow::coverage},
      {"power", &MetricRow::power},
      {"std_rmse", &MetricRow::std_rmse},
  };
  for (const auto& [name, member] : columns) {
    for (const auto& m : rows) {
      out << name << ',' << m.scenario << ',' << to_string(m.effect) << ',' << to_string(m.method) << ',' << m.n
          << ',' << format_double(m.*member) << '\n';
    }
  }
}

}  // namespace tc
