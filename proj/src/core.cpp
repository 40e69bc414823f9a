#include "tc/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingValues: return "MissingValues";
    case ErrorCode::MediatorRequired: return "MediatorRequired";
    case ErrorCode::DegenerateOutcome: return "DegenerateOutcome";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::TooManyColumns: return "TooManyColumns";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ColumnMismatch: return "ColumnMismatch";
    case ErrorCode::BadFoldCount: return "BadFoldCount";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::AllLearnersFailed: return "AllLearnersFailed";
    case ErrorCode::StratumTooSmall: return "StratumTooSmall";
    case ErrorCode::NoControls: return "NoControls";
    case ErrorCode::CyclicModel: return "CyclicModel";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::MissingEdge: return "MissingEdge";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::TooManyFailures: return "TooManyFailures";
    case ErrorCode::UnknownScenario: return "UnknownScenario";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  std::vector<Index> idx(rows.begin(), rows.end());
  Dataset out;
  out.w = w(idx, Eigen::all);
  out.a = a(idx);
  out.y = y(idx);
  if (m) out.m = VectorXd((*m)(idx));
  out.column_names = column_names;
  return out;
}

Index Dataset::column_index(std::string_view name) const {
  auto it = std::find(column_names.begin(), column_names.end(), name);
  return it == column_names.end() ? -1 : static_cast<Index>(it - column_names.begin());
}

const Dataset& validate_dataset(const Dataset& d, ValidationOptions opts) {
  const Index n = d.y.size();
  if (d.a.size() != n || d.w.rows() != n || (d.m && d.m->size() != n)) {
    throw Error(ErrorCode::LengthMismatch, "columns have different lengths");
  }
  if (static_cast<Index>(d.column_names.size()) != d.w.cols()) {
    throw Error(ErrorCode::LengthMismatch, "column_names does not match covariate count");
  }
  if (n < 2) throw Error(ErrorCode::InsufficientData, "need at least 2 rows");
  auto finite = [](const auto& x) { return x.allFinite(); };
  if (!finite(d.w) || !finite(d.a) || !finite(d.y) || (d.m && !finite(*d.m))) {
    throw Error(ErrorCode::MissingValues, "missing or non-finite entries");
  }
  for (Index i = 0; i < n; ++i) {
    if (d.a[i] != 0.0 && d.a[i] != 1.0) {
      throw Error(ErrorCode::NonBinaryTreatment,
                  "treatment value " + std::to_string(d.a[i]) + " at row " + std::to_string(i));
    }
  }
  if (opts.require_mediator && !d.m) {
    throw Error(ErrorCode::MediatorRequired, "mediation requested without an M column");
  }
  return d;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  for (auto& s : out) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan") {
    throw Error(ErrorCode::MissingValues,
                "missing value in column " + column + " at data row " + std::to_string(row));
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::ParseError,
                "cannot parse '" + cell + "' in column " + column + " at data row " + std::to_string(row));
  }
  return v;
}

}  // namespace

Dataset parse_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "empty CSV");
  const auto header = split_csv_line(line);

  int col_a = -1, col_y = -1, col_m = -1;
  std::vector<int> covariates;
  for (int j = 0; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == "A") col_a = j;
    else if (header[j] == "Y") col_y = j;
    else if (header[j] == "M") col_m = j;
    else covariates.push_back(j);
  }
  if (col_a < 0) throw Error(ErrorCode::ParseError, "missing treatment column 'A'");
  if (col_y < 0) throw Error(ErrorCode::ParseError, "missing outcome column 'Y'");

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::LengthMismatch, "data row " + std::to_string(row) + " has " +
                                                 std::to_string(cells.size()) + " fields, header has " +
                                                 std::to_string(header.size()));
    }
    std::vector<double> values(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) values[j] = parse_cell(cells[j], row, header[j]);
    rows.push_back(std::move(values));
  }

  const Index n = static_cast<Index>(rows.size());
  Dataset d;
  d.w.resize(n, static_cast<Index>(covariates.size()));
  d.a.resize(n);
  d.y.resize(n);
  if (col_m >= 0) d.m = VectorXd(n);
  for (int j : covariates) d.column_names.push_back(header[j]);
  for (Index i = 0; i < n; ++i) {
    d.a[i] = rows[i][col_a];
    d.y[i] = rows[i][col_y];
    if (col_m >= 0) (*d.m)[i] = rows[i][col_m];
    for (std::size_t k = 0; k < covariates.size(); ++k) d.w(i, static_cast<Index>(k)) = rows[i][covariates[k]];
  }
  return d;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  return parse_dataset_csv(in);
}

ScaledOutcome scale_outcome(const VectorXd& y) {
  if (y.size() == 0) throw Error(ErrorCode::DegenerateOutcome, "empty outcome");
  const double lo = y.minCoeff();
  const double hi = y.maxCoeff();
  if (!(hi > lo)) throw Error(ErrorCode::DegenerateOutcome, "outcome is constant");
  ScaledOutcome out;
  out.map = {lo, hi};
  out.scaled = ((y.array() - lo) / (hi - lo)).matrix();
  return out;
}

ScaledDifference unscale_difference(double psi_scaled, double se_scaled, const ScaleMap& map) {
  return {psi_scaled * map.range(), se_scaled * map.range()};
}

bool is_binary(const VectorXd& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0 || x == 1.0; });
}

double expit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double clip_prob(double p, double floor) { return std::clamp(p, floor, 1.0 - floor); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t SeedStream::seed() const {
  return splitmix64(splitmix64(master_seed) ^ splitmix64(stream_index * 0xD1B54A32D192ED03ULL + 1));
}

Rng derive_substream(const SeedStream& s) { return Rng(s.seed()); }

}  // namespace tc
