#pragma once

// Simulation scenarios, true values, the Monte Carlo runner and the
// bias / coverage / power / RMSE summaries.

#include "tc/core.hpp"
#include "tc/learners.hpp"
#include "tc/tmle_ate.hpp"
#include "tc/tmle_mediation.hpp"

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace tc {

enum class ScenarioId {
  AteCorrect,
  AteNoInteraction,
  AteNonLinear,
  AteNonNormal,
  Cate,
  MedCorrect,
  MedMisspecYW,
  MedMisspecMWYW,
};

std::string_view to_string(ScenarioId id);

struct Scenario {
  ScenarioId id = ScenarioId::AteCorrect;
  double psi = 0.5;  // ATE family and Cate only

  bool is_mediation() const;
  /// "AteCorrect:0.5" for the ATE family, "MedCorrect" for mediation.
  std::string label() const;
};

/// Accepts "AteCorrect", "AteCorrect:1.5"; `psi` applies when no suffix is given.
Scenario parse_scenario(std::string_view text, double psi = 0.5);

enum class Effect { Ate, Cate, Nde, Nie, Te };
std::string_view to_string(Effect e);
Effect parse_effect(std::string_view text);

enum class Method { Tmle, Regression, Sem };
std::string_view to_string(Method m);
Method parse_method(std::string_view text);

/// Effects estimated for a scenario, in output order.
std::vector<Effect> scenario_effects(const Scenario& s);

Dataset dgp_sample(const Scenario& s, Index n, Rng& rng);

double true_value(const Scenario& s, Effect e);

struct OracleEstimate {
  double mean = 0.0;
  double mc_se = 0.0;
  Index draws = 0;
};

/// Monte Carlo evaluation of the counterfactual contrast defining `e`, with
/// independent noise in each counterfactual world.
OracleEstimate brute_force_truth(const Scenario& s, Effect e, Index draws, Rng& rng);

struct SimulationRecord {
  std::string scenario;
  Method method = Method::Tmle;
  Effect effect = Effect::Ate;
  Index n = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  bool failed = false;
  double wall_ms = 0.0;
  // In-memory diagnostics, not written to CSV.
  double mean_eif = 0.0;
  std::string error;
};

struct MetricRow {
  std::string scenario;
  Method method = Method::Tmle;
  Effect effect = Effect::Ate;
  Index n = 0;
  Index n_sim = 0;
  Index failures = 0;
  double relative_bias = 0.0;
  double coverage = 0.0;
  double power = 0.0;
  double std_rmse = 0.0;
  /// Truth is zero: bias and RMSE are reported on the absolute scale.
  bool absolute = false;
};

/// Summaries over the non-failed records; all records must share a cell.
MetricRow metrics(const std::vector<SimulationRecord>& records, double truth);

/// One metric row per (scenario, method, effect, n), in first-seen order.
std::vector<MetricRow> aggregate(const std::vector<SimulationRecord>& records);

struct EstimatorSettings {
  int v_folds = 10;
  std::vector<LearnerSpec> ate_library = default_library();
  std::vector<LearnerSpec> mediation_library = tc::mediation_library();
  int bootstrap_reps = 1000;
};

struct GridOptions {
  std::vector<Scenario> scenarios;
  std::vector<Method> methods;
  std::vector<Index> ns;
  int n_sim = 1;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  bool record_timing = false;
  EstimatorSettings estimators;
};

/// Substream of replication `rep` in the (scenario, n) cell; independent of
/// which other cells are in the grid.
SeedStream replication_seed(std::uint64_t master_seed, const Scenario& s, Index n, int rep);

/// Runs every method on one simulated dataset.
std::vector<SimulationRecord> run_replication(const Scenario& s, Index n, int rep, const GridOptions& opts);

/// Records ordered by scenario, n, replication, method, effect.
std::vector<SimulationRecord> run_grid(const GridOptions& opts);

struct Profile {
  std::vector<Index> ate_ns;
  int ate_n_sim = 0;
  std::vector<Index> mediation_ns;
  int mediation_n_sim = 0;
};

/// "desk" or "paper".
Profile profile(std::string_view name);

void write_records_csv(std::ostream& out, const std::vector<SimulationRecord>& records);
std::vector<SimulationRecord> read_records_csv(std::istream& in);
void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);
/// Long format: metric,scenario,effect,series,x,value.
void write_plot_data_csv(std::ostream& out, const std::vector<MetricRow>& rows);

}  // namespace tc
