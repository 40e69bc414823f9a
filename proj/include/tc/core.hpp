#pragma once

// Shared data model: datasets, outcome scaling, errors and seed streams.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ErrorCode {
  NonBinaryTreatment,
  LengthMismatch,
  MissingValues,
  MediatorRequired,
  DegenerateOutcome,
  InvalidSpec,
  TooManyColumns,
  SingularDesign,
  InsufficientData,
  ColumnMismatch,
  BadFoldCount,
  EmptyMatrix,
  AllLearnersFailed,
  StratumTooSmall,
  NoControls,
  CyclicModel,
  UnknownVariable,
  MissingEdge,
  PreconditionFailed,
  TooManyFailures,
  UnknownScenario,
  ParseError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Columnar sample of covariates W, binary treatment A, outcome Y and an
/// optional mediator M.
struct Dataset {
  MatrixXd w;
  VectorXd a;
  VectorXd y;
  std::optional<VectorXd> m;
  std::vector<std::string> column_names;

  Index size() const { return y.size(); }
  Index covariate_count() const { return w.cols(); }
  bool has_mediator() const { return m.has_value(); }

  Dataset subset(std::span<const Index> rows) const;
  Index column_index(std::string_view name) const;  // -1 when absent
};

struct ValidationOptions {
  bool require_mediator = false;
};

/// Returns `d` unchanged when every invariant holds; throws otherwise.
const Dataset& validate_dataset(const Dataset& d, ValidationOptions opts = {});

/// Reads a header-first CSV. Column `A` is the treatment, `Y` the outcome,
/// optional `M` the mediator and every other column a covariate.
Dataset read_dataset_csv(const std::string& path);
Dataset parse_dataset_csv(std::istream& in);

struct ScaleMap {
  double y_min = 0.0;
  double y_max = 1.0;

  double range() const { return y_max - y_min; }
};

struct ScaledOutcome {
  VectorXd scaled;
  ScaleMap map;
};

ScaledOutcome scale_outcome(const VectorXd& y);

struct ScaledDifference {
  double psi;
  double se;
};

/// Difference-type estimands carry no additive shift.
ScaledDifference unscale_difference(double psi_scaled, double se_scaled, const ScaleMap& map);

bool is_binary(const VectorXd& v);

inline constexpr double kZ975 = 1.959964;
inline constexpr double kProbFloor = 1e-6;

double expit(double x);
double logit(double p);
double clip_prob(double p, double floor = kProbFloor);

/// 64-bit generator used throughout. Seeded only through SeedStream.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Pure function of (master_seed, stream_index) naming an independent
/// random substream. Children are derived the same way, so a tree of
/// substreams can be built without any shared mutable state.
struct SeedStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_index = 0;

  std::uint64_t seed() const;
  SeedStream child(std::uint64_t index) const { return {seed(), index}; }
};

Rng derive_substream(const SeedStream& s);

}  // namespace tc
