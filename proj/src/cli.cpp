#include "tc/cli.hpp"

#include "tc/core.hpp"
#include "tc/sem_path.hpp"
#include "tc/sim.hpp"
#include "tc/tmle_ate.hpp"
#include "tc/tmle_mediation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

namespace tc::cli {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonBinaryTreatment:
    case ErrorCode::LengthMismatch:
    case ErrorCode::MissingValues:
    case ErrorCode::MediatorRequired:
    case ErrorCode::DegenerateOutcome:
    case ErrorCode::InvalidSpec:
    case ErrorCode::InsufficientData:
    case ErrorCode::ColumnMismatch:
    case ErrorCode::BadFoldCount:
    case ErrorCode::StratumTooSmall:
    case ErrorCode::NoControls:
    case ErrorCode::CyclicModel:
    case ErrorCode::UnknownVariable:
    case ErrorCode::MissingEdge:
    case ErrorCode::UnknownScenario:
    case ErrorCode::ParseError:
      return true;
    default:
      return false;
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidSpec, "cannot write " + path.string());
  return out;
}

struct ResultRow {
  std::string effect;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  Index n = 0;
  double mean_eif = std::numeric_limits<double>::quiet_NaN();
  int g_truncated = 0;
  bool positivity_warning = false;
};

ResultRow row_from(const std::string& effect, const TmleReport& r) {
  return {effect, r.psi_hat, r.se, r.ci_lower, r.ci_upper, r.stratum_size, r.mean_eif, r.g_truncation_count,
          r.positivity_warning};
}

void write_results(const fs::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream f = open_output(path);
  f << "effect,estimate,se,ci_lower,ci_upper,n,mean_eif,g_truncated,positivity_warning\n";
  for (const auto& r : rows) {
    f << r.effect << ',' << fmt(r.estimate) << ',' << fmt(r.se) << ',' << fmt(r.ci_lower) << ',' << fmt(r.ci_upper)
      << ',' << r.n << ',' << fmt(r.mean_eif) << ',' << r.g_truncated << ',' << (r.positivity_warning ? 1 : 0) << '\n';
  }
}

void print_summary(std::ostream& out, const std::vector<ResultRow>& rows, const std::vector<std::string>& warnings) {
  out << std::left << std::setw(12) << "effect" << std::right << std::setw(12) << "estimate" << std::setw(12) << "se"
      << std::setw(12) << "ci_lower" << std::setw(12) << "ci_upper" << std::setw(8) << "n" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << r.effect << std::right << std::setw(12) << r.estimate << std::setw(12)
        << r.se << std::setw(12) << r.ci_lower << std::setw(12) << r.ci_upper << std::setw(8) << r.n << '\n';
  }
  out << std::defaultfloat;
  for (const auto& w : warnings) out << "warning: " << w << '\n';
}

struct EstimateArgs {
  std::string input;
  std::string effect = "ate";
  std::string stratum;
  std::string model;
  std::string out = "result.csv";
  std::uint64_t seed = 1;
  int folds = 10;
  double g_min = 0.025;
  std::string q_library;
  std::string g_library;
};

int cmd_estimate(const EstimateArgs& a, std::ostream& out) {
  const Dataset d = read_dataset_csv(a.input);
  const SeedStream seed{a.seed, 0};
  std::vector<ResultRow> rows;
  std::vector<std::string> warnings;

  if (a.effect == "ate" || a.effect == "cate") {
    validate_dataset(d);
    AteOptions opts;
    opts.v_folds = a.folds;
    opts.g_min = a.g_min;
    if (!a.q_library.empty()) opts.q_library = parse_library(a.q_library, Family::Gaussian);
    if (!a.g_library.empty()) opts.g_library = parse_library(a.g_library, Family::Binomial);
    TmleReport r;
    if (a.effect == "ate") {
      r = estimate_ate(d, opts, seed);
    } else {
      if (a.stratum.empty()) throw Error(ErrorCode::InvalidSpec, "--stratum is required for cate");
      r = estimate_cate_stratified(d, parse_stratum(a.stratum, d), opts, seed);
    }
    rows.push_back(row_from(a.effect, r));
    warnings = r.warnings;
  } else if (a.effect == "mediation") {
    validate_dataset(d, {.require_mediator = true});
    MediationOptions opts;
    opts.v_folds = a.folds;
    opts.g_min = a.g_min;
    if (!a.q_library.empty()) opts.q_library = opts.contrast_library = parse_library(a.q_library, Family::Gaussian);
    if (!a.g_library.empty()) {
      opts.g_library = opts.classifier_library = parse_library(a.g_library, Family::Binomial);
    }
    const MediationReport r = estimate_nde_nie(d, opts, seed);
    rows = {row_from("nde", r.nde), row_from("nie", r.nie), row_from("te", r.te)};
    warnings = r.warnings;
  } else if (a.effect == "sem-paths") {
    if (a.model.empty()) throw Error(ErrorCode::InvalidSpec, "--model is required for sem-paths");
    std::ifstream in(a.model);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open model file " + a.model);
    std::stringstream text;
    text << in.rdbuf();
    const PathModel model = parse_path_model(text.str());
    const PathFit fit = fit_path_model(model, path_data(model, d));
    warnings = fit.warnings;
    for (int p : model.free_parameters()) {
      const double est = fit.theta_hat[p], se = fit.se(p);
      rows.push_back({model.parameters()[p].name, est, se, est - kZ975 * se, est + kZ975 * se, fit.n});
    }
    if (model.edge_parameter("A", "Y") >= 0) {
      const bool mediated = model.edge_parameter("A", "M") >= 0 && model.edge_parameter("M", "Y") >= 0;
      const PathEffects fx = effects_from_paths(model, fit, "A", mediated ? std::optional<std::string>("M") : std::nullopt, "Y");
      auto wald = [&](const std::string& name, double est, double se) {
        rows.push_back({name, est, se, est - kZ975 * se, est + kZ975 * se, fit.n});
      };
      if (mediated) {
        wald("nde", fx.direct, fx.se_direct);
        wald("nie", *fx.indirect, *fx.se_indirect);
        wald("te", fx.total, fx.se_total);
      } else {
        wald("ate", fx.direct, fx.se_direct);
      }
    }
  } else {
    throw Error(ErrorCode::InvalidSpec, "unknown effect '" + a.effect + "'");
  }
  write_results(a.out, rows);
  print_summary(out, rows, warnings);
  return kOk;
}

struct SimulateArgs {
  std::vector<std::string> scenarios;
  double psi = 0.5;
  std::string methods = "tmle,regression";
  std::vector<Index> ns;
  int nsim = 0;
  std::uint64_t seed = 1;
  std::string out = ".";
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string profile = "desk";
  bool record_timing = false;
  int bootstrap = 1000;
  int folds = 10;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_metrics(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << std::left << std::setw(20) << "scenario" << std::setw(11) << "method" << std::setw(7) << "effect"
      << std::right << std::setw(6) << "n" << std::setw(7) << "n_sim" << std::setw(10) << "rel_bias" << std::setw(10)
      << "coverage" << std::setw(8) << "power" << std::setw(10) << "std_rmse" << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& m : rows) {
    out << std::left << std::setw(20) << m.scenario << std::setw(11) << to_string(m.method) << std::setw(7)
        << to_string(m.effect) << std::right << std::setw(6) << m.n << std::setw(7) << m.n_sim << std::setw(10)
        << m.relative_bias << std::setw(10) << m.coverage << std::setw(8) << m.power << std::setw(10) << m.std_rmse
        << (m.absolute ? "  (absolute)" : "") << '\n';
  }
  out << std::defaultfloat;
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  GridOptions grid;
  for (const auto& name : a.scenarios) {
    for (const auto& s : split_list(name)) grid.scenarios.push_back(parse_scenario(s, a.psi));
  }
  if (grid.scenarios.empty()) throw Error(ErrorCode::UnknownScenario, "no scenario given");
  for (const auto& m : split_list(a.methods)) grid.methods.push_back(parse_method(m));
  if (grid.methods.empty()) throw Error(ErrorCode::InvalidSpec, "no method given");

  const Profile prof = profile(a.profile);
  const bool mediation_only =
      std::all_of(grid.scenarios.begin(), grid.scenarios.end(), [](const Scenario& s) { return s.is_mediation(); });
  grid.ns = a.ns.empty() ? (mediation_only ? prof.mediation_ns : prof.ate_ns) : a.ns;
  grid.n_sim = a.nsim > 0 ? a.nsim : (mediation_only ? prof.mediation_n_sim : prof.ate_n_sim);
  grid.master_seed = a.seed;
  grid.jobs = a.jobs;
  grid.record_timing = a.record_timing;
  grid.estimators.bootstrap_reps = a.bootstrap;
  grid.estimators.v_folds = a.folds;

  const auto records = run_grid(grid);
  const auto rows = aggregate(records);
  const fs::path dir(a.out);
  {
    std::ofstream f = open_output(dir / "records.csv");
    write_records_csv(f, records);
  }
  {
    std::ofstream f = open_output(dir / "metrics.csv");
    write_metrics_csv(f, rows);
  }
  print_metrics(out, rows);
  return kOk;
}

int cmd_report(const std::string& records_path, const std::string& out_dir, std::ostream& out) {
  std::ifstream in(records_path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + records_path);
  const auto records = read_records_csv(in);
  if (records.empty()) throw Error(ErrorCode::ParseError, "records file has no rows");
  const auto rows = aggregate(records);
  const fs::path dir(out_dir);
  {
    std::ofstream f = open_output(dir / "metrics.csv");
    write_metrics_csv(f, rows);
  }
  {
    std::ofstream f = open_output(dir / "plot_data.csv");
    write_plot_data_csv(f, rows);
  }
  print_metrics(out, rows);
  return kOk;
}

}  // namespace

std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open config file " + path);
  std::map<std::string, std::string> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": empty key");
    values[key] = trim(line.substr(eq + 1));
  }
  return values;
}

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Targeted learning and path-model estimators for causal effects", "tc"};
  app.require_subcommand(1);

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "Estimate an effect from a CSV dataset");
  estimate->add_option("--input,-i", est.input, "CSV with columns A, Y, optional M, covariates")->required();
  estimate->add_option("--effect", est.effect, "ate | cate | mediation | sem-paths")
      ->check(CLI::IsMember({"ate", "cate", "mediation", "sem-paths"}));
  estimate->add_option("--stratum", est.stratum, "Covariate equality such as W1=1 (cate)");
  estimate->add_option("--model", est.model, "Path model file (sem-paths)");
  estimate->add_option("--out,-o", est.out, "Result CSV path");
  estimate->add_option("--seed", est.seed, "Master seed")->envname("TC_SEED");
  estimate->add_option("--folds", est.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  estimate->add_option("--g-min", est.g_min, "Propensity truncation level");
  estimate->add_option("--q-library", est.q_library, "Outcome learners, comma separated");
  estimate->add_option("--g-library", est.g_library, "Propensity learners, comma separated");
  estimate->add_option("--config", "Flat key = value file with defaults for these flags");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo grid");
  simulate->add_option("--scenario", sim.scenarios, "Scenario names, e.g. AteCorrect or Cate:1.5")->required();
  simulate->add_option("--psi", sim.psi, "Effect size for treatment-effect scenarios");
  simulate->add_option("--methods", sim.methods, "tmle, regression, sem (comma separated)");
  simulate->add_option("--ns", sim.ns, "Sample sizes")->delimiter(',');
  simulate->add_option("--nsim", sim.nsim, "Replications per cell")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "Master seed")->envname("TC_SEED");
  simulate->add_option("--out,-o", sim.out, "Output directory");
  simulate->add_option("--jobs,-j", sim.jobs, "Worker threads")->check(CLI::PositiveNumber);
  simulate->add_option("--profile", sim.profile, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  simulate->add_flag("--record-timing", sim.record_timing, "Fill wall_ms (makes output run-dependent)");
  simulate->add_option("--bootstrap", sim.bootstrap, "Bootstrap replicates for sem")->check(CLI::Range(100, 100000));
  simulate->add_option("--folds", sim.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  simulate->add_option("--config", "Flat key = value file with defaults for these flags");

  std::string records_path;
  std::string report_out = ".";
  auto* report = app.add_subcommand("report", "Aggregate a records CSV into metrics and plot data");
  report->add_option("--records", records_path, "records.csv from simulate")->required();
  report->add_option("--out,-o", report_out, "Output directory");
  report->add_option("--config", "Flat key = value file with defaults for these flags");

  try {
    // Config values become flags placed before the real ones, skipping any
    // key the command line sets itself.
    std::vector<std::string> args = args_in;
    if (!args.empty()) {
      CLI::App* sub = app.get_subcommand_no_throw(args.front());
      std::string config_path;
      for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      }
      if (sub && !config_path.empty()) {
        std::vector<std::string> extra;
        for (const auto& [key, value] : read_config(config_path)) {
          CLI::Option* opt = sub->get_option_no_throw("--" + key);
          if (!opt || key == "config") throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
          const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& s) {
            return s == "--" + key || s.rfind("--" + key + "=", 0) == 0;
          });
          if (given) continue;
          if (opt->get_expected_min() == 0) {
            if (value == "true" || value == "1") extra.push_back("--" + key);
          } else {
            extra.push_back("--" + key);
            extra.push_back(value);
          }
        }
        args.insert(args.begin() + 1, extra.begin(), extra.end());
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  } catch (const Error& e) {
    err << "tc: " << e.what() << '\n';
    return kInputError;
  }

  try {
    if (*estimate) return cmd_estimate(est, out);
    if (*simulate) return cmd_simulate(sim, out);
    if (*report) return cmd_report(records_path, report_out, out);
  } catch (const Error& e) {
    err << "tc: " << to_string(e.code()) << ": " << e.what() << '\n';
    return is_input_error(e.code()) ? kInputError : kEstimationError;
  } catch (const std::exception& e) {
    err << "tc: " << e.what() << '\n';
    return kEstimationError;
  }
  return kInputError;
}

}  // namespace tc::cli
