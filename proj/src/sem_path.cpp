#include "tc/sem_path.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace tc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

PathModel::PathModel(std::vector<std::string> variables, const std::vector<std::pair<std::string, std::string>>& edges,
                     const std::map<std::string, double>& fixed_values)
    : variables_(std::move(variables)) {
  const int k = static_cast<int>(variables_.size());
  if (k == 0) throw Error(ErrorCode::InvalidSpec, "path model has no variables");
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < i; ++j) {
      if (variables_[i] == variables_[j]) throw Error(ErrorCode::InvalidSpec, "duplicate variable " + variables_[i]);
    }
  }

  for (const auto& [from, to] : edges) {
    const int f = variable_index(from), t = variable_index(to);
    if (f < 0) throw Error(ErrorCode::UnknownVariable, "unknown variable '" + from + "'");
    if (t < 0) throw Error(ErrorCode::UnknownVariable, "unknown variable '" + to + "'");
    const std::string name = from + "->" + to;
    if (parameter_index(name) >= 0) throw Error(ErrorCode::InvalidSpec, "duplicate edge " + name);
    params_.push_back({name, ParamKind::Edge, f, t, std::nullopt});
  }
  for (int v = 0; v < k; ++v) params_.push_back({variables_[v] + "~1", ParamKind::Intercept, -1, v, std::nullopt});
  for (int v = 0; v < k; ++v) {
    params_.push_back({variables_[v] + "~~" + variables_[v], ParamKind::Variance, -1, v, std::nullopt});
  }

  for (const auto& [name, value] : fixed_values) {
    const int p = parameter_index(name);
    if (p < 0) throw Error(ErrorCode::UnknownVariable, "fixed value for unknown parameter '" + name + "'");
    if (params_[p].kind == ParamKind::Variance && !(value > 0.0)) {
      throw Error(ErrorCode::InvalidSpec, "fixed variance must be positive");
    }
    params_[p].fixed = value;
  }
  for (int p = 0; p < static_cast<int>(params_.size()); ++p) {
    if (!params_[p].fixed) free_.push_back(p);
  }

  // Kahn's algorithm; leftover nodes mean a cycle.
  std::vector<int> indegree(k, 0);
  for (const auto& p : params_) {
    if (p.kind == ParamKind::Edge) ++indegree[p.to];
  }
  std::vector<int> ready;
  for (int v = 0; v < k; ++v) {
    if (indegree[v] == 0) ready.push_back(v);
  }
  while (!ready.empty()) {
    const int v = ready.front();
    ready.erase(ready.begin());
    order_.push_back(v);
    for (const auto& p : params_) {
      if (p.kind == ParamKind::Edge && p.from == v && --indegree[p.to] == 0) ready.push_back(p.to);
    }
  }
  if (static_cast<int>(order_.size()) != k) throw Error(ErrorCode::CyclicModel, "path model contains a cycle");
}

int PathModel::variable_index(const std::string& name) const {
  const auto it = std::find(variables_.begin(), variables_.end(), name);
  return it == variables_.end() ? -1 : static_cast<int>(it - variables_.begin());
}

int PathModel::parameter_index(const std::string& name) const {
  for (int p = 0; p < static_cast<int>(params_.size()); ++p) {
    if (params_[p].name == name) return p;
  }
  return -1;
}

int PathModel::edge_parameter(const std::string& from, const std::string& to) const {
  return parameter_index(from + "->" + to);
}

VectorXd PathModel::expand(const VectorXd& free_values) const {
  if (free_values.size() != static_cast<Index>(free_.size())) {
    throw Error(ErrorCode::LengthMismatch, "free parameter vector has the wrong length");
  }
  VectorXd full(parameter_count());
  for (int p = 0; p < static_cast<int>(params_.size()); ++p) full[p] = params_[p].fixed.value_or(0.0);
  for (std::size_t i = 0; i < free_.size(); ++i) full[free_[i]] = free_values[static_cast<Index>(i)];
  return full;
}

VectorXd PathModel::restrict(const VectorXd& full) const {
  VectorXd out(static_cast<Index>(free_.size()));
  for (std::size_t i = 0; i < free_.size(); ++i) out[static_cast<Index>(i)] = full[free_[i]];
  return out;
}

PathModel parse_path_model(const std::string& text) {
  std::vector<std::string> variables;
  std::vector<std::pair<std::string, std::string>> edges;
  std::map<std::string, double> fixed;
  auto note = [&](const std::string& v) {
    if (v.empty()) throw Error(ErrorCode::ParseError, "empty variable name");
    if (std::isdigit(static_cast<unsigned char>(v[0]))) throw Error(ErrorCode::ParseError, "bad variable name '" + v + "'");
    for (char c : v) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) {
        throw Error(ErrorCode::ParseError, "bad variable name '" + v + "'");
      }
    }
    if (std::find(variables.begin(), variables.end(), v) == variables.end()) variables.push_back(v);
  };
  auto add_edge = [&](const std::string& from, const std::string& to) {
    if (std::find(edges.begin(), edges.end(), std::make_pair(from, to)) == edges.end()) edges.emplace_back(from, to);
  };
  auto parse_value = [](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ParseError, "bad numeric value '" + s + "'");
  };

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    std::optional<double> value;
    if (const auto eq = line.find('='); eq != std::string::npos) {
      value = parse_value(trim(line.substr(eq + 1)));
      line = trim(line.substr(0, eq));
    }
    if (const auto pos = line.find("~~"); pos != std::string::npos) {
      const std::string lhs = trim(line.substr(0, pos)), rhs = trim(line.substr(pos + 2));
      if (lhs != rhs) throw Error(ErrorCode::InvalidSpec, "line " + std::to_string(line_no) + ": covariances are not supported");
      note(lhs);
      if (value) fixed[lhs + "~~" + lhs] = *value;
    } else if (const auto arrow = line.find("->"); arrow != std::string::npos) {
      const std::string from = trim(line.substr(0, arrow)), to = trim(line.substr(arrow + 2));
      note(from);
      note(to);
      add_edge(from, to);
      if (value) fixed[from + "->" + to] = *value;
    } else if (const auto tilde = line.find('~'); tilde != std::string::npos) {
      if (value) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": use 'X -> Y = v' to fix an edge");
      const std::string lhs = trim(line.substr(0, tilde));
      note(lhs);
      std::istringstream rhs(line.substr(tilde + 1));
      std::string term;
      while (std::getline(rhs, term, '+')) {
        term = trim(term);
        note(term);
        add_edge(term, lhs);
      }
    } else {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": cannot parse '" + line + "'");
    }
  }
  return PathModel(std::move(variables), edges, fixed);
}

ImpliedMoments implied_moments(const PathModel& m, const VectorXd& theta) {
  const Index k = m.variable_count();
  MatrixXd beta = MatrixXd::Zero(k, k);
  VectorXd mu0(k);
  VectorXd psi(k);
  const auto& params = m.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const double v = theta[static_cast<Index>(p)];
    switch (params[p].kind) {
      case ParamKind::Edge: beta(params[p].to, params[p].from) = v; break;
      case ParamKind::Intercept: mu0[params[p].to] = v; break;
      case ParamKind::Variance: psi[params[p].to] = v; break;
    }
  }
  const MatrixXd b = (MatrixXd::Identity(k, k) - beta).partialPivLu().inverse();
  ImpliedMoments out;
  out.mu = b * mu0;
  out.sigma = b * psi.asDiagonal() * b.transpose();
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
  return out;
}

SampleMoments sample_moments(const MatrixXd& data) {
  SampleMoments out;
  out.n = data.rows();
  out.mean = data.colwise().mean().transpose();
  const MatrixXd centred = data.rowwise() - out.mean.transpose();
  out.cov = centred.transpose() * centred / static_cast<double>(out.n);
  return out;
}

double fml_objective(const PathModel& m, const VectorXd& theta, const MatrixXd& s, const VectorXd& ybar) {
  if (!theta.allFinite()) return kInf;
  const ImpliedMoments im = implied_moments(m, theta);
  Eigen::LLT<MatrixXd> llt(im.sigma);
  if (llt.info() != Eigen::Success) return kInf;
  const MatrixXd l = llt.matrixL();
  double logdet = 0.0;
  for (Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0)) return kInf;
    logdet += 2.0 * std::log(l(i, i));
  }
  const VectorXd diff = ybar - im.mu;
  const double value = logdet + llt.solve(s).trace() + diff.dot(llt.solve(diff));
  return std::isfinite(value) ? value : kInf;
}

double PathFit::se(int param) const {
  if (!vcov_available) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(std::max(0.0, vcov(param, param)));
}

VectorXd ols_start(const PathModel& m, const SampleMoments& mom) {
  const auto& params = m.parameters();
  VectorXd theta(m.parameter_count());
  for (std::size_t p = 0; p < params.size(); ++p) theta[static_cast<Index>(p)] = params[p].fixed.value_or(0.0);

  for (int v = 0; v < static_cast<int>(m.variable_count()); ++v) {
    std::vector<int> free_par, free_pid;
    VectorXd c_fixed = VectorXd::Zero(mom.mean.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (params[p].kind != ParamKind::Edge || params[p].to != v) continue;
      if (params[p].fixed) {
        c_fixed[params[p].from] += *params[p].fixed;
      } else {
        free_par.push_back(params[p].from);
        free_pid.push_back(static_cast<int>(p));
      }
    }
    // Regress z = y_v - sum(fixed * parent) on the free parents.
    VectorXd e_v = VectorXd::Unit(mom.mean.size(), v) - c_fixed;
    const double mean_z = e_v.dot(mom.mean);
    const double var_z = e_v.dot(mom.cov * e_v);
    double intercept = mean_z;
    double resid = var_z;
    if (!free_par.empty()) {
      const MatrixXd sff = mom.cov(free_par, free_par);
      const VectorXd sfz = mom.cov(free_par, Eigen::all) * e_v;
      const VectorXd b = sff.ldlt().solve(sfz);
      for (std::size_t i = 0; i < free_pid.size(); ++i) theta[free_pid[i]] = b[static_cast<Index>(i)];
      intercept -= b.dot(mom.mean(free_par));
      resid -= sfz.dot(b);
    }
    const int ip = m.parameter_index(m.variables()[v] + "~1");
    const int vp = m.parameter_index(m.variables()[v] + "~~" + m.variables()[v]);
    if (!params[ip].fixed) theta[ip] = intercept;
    if (!params[vp].fixed) theta[vp] = std::max(resid, 1e-12 * std::max(1.0, mom.cov(v, v)));
  }
  return theta;
}

namespace {

// Optimizer coordinates: free parameters, variances on the log scale.
struct Reparam {
  const PathModel& m;
  std::vector<bool> is_var;

  explicit Reparam(const PathModel& model) : m(model) {
    for (int p : m.free_parameters()) is_var.push_back(m.parameters()[p].kind == ParamKind::Variance);
  }
  VectorXd to_opt(const VectorXd& free) const {
    VectorXd x = free;
    for (Index i = 0; i < x.size(); ++i) {
      if (is_var[i]) x[i] = std::log(free[i]);
    }
    return x;
  }
  VectorXd to_full(const VectorXd& x) const {
    VectorXd free = x;
    for (Index i = 0; i < x.size(); ++i) {
      if (is_var[i]) free[i] = std::exp(x[i]);
    }
    return m.expand(free);
  }
};

template <class F>
VectorXd central_gradient(const F& f, const VectorXd& x) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + h;
    const double up = f(xp);
    xp[i] = x[i] - h;
    const double down = f(xp);
    xp[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

PathFit fit_path_model(const PathModel& m, const MatrixXd& data, const FitOptions& opts) {
  if (data.cols() != m.variable_count()) throw Error(ErrorCode::ColumnMismatch, "data columns do not match the model");
  const auto n_free = static_cast<Index>(m.free_parameters().size());
  if (data.rows() <= n_free) throw Error(ErrorCode::InsufficientData, "need more rows than free parameters");
  if (!data.allFinite()) throw Error(ErrorCode::MissingValues, "path data contains NaN");

  const SampleMoments mom = sample_moments(data);
  const Reparam rp(m);
  auto objective = [&](const VectorXd& x) { return fml_objective(m, rp.to_full(x), mom.cov, mom.mean); };

  VectorXd start_free = opts.start ? *opts.start : m.restrict(ols_start(m, mom));
  if (start_free.size() != n_free) throw Error(ErrorCode::LengthMismatch, "start vector has the wrong length");
  for (Index i = 0; i < n_free; ++i) {
    if (rp.is_var[i] && !(start_free[i] > 0.0)) throw Error(ErrorCode::InvalidSpec, "start variance must be positive");
  }

  VectorXd x = rp.to_opt(start_free);
  double fx = objective(x);
  if (!std::isfinite(fx)) throw Error(ErrorCode::PreconditionFailed, "implied covariance not positive definite at start");

  PathFit fit;
  fit.n = mom.n;
  VectorXd g = central_gradient(objective, x);
  MatrixXd hinv = MatrixXd::Identity(n_free, n_free);
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (g.cwiseAbs().maxCoeff() < opts.gradient_tol) {
      fit.converged = true;
      break;
    }
    VectorXd dir = -hinv * g;
    if (dir.dot(g) >= 0.0) {
      hinv.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    VectorXd x_new;
    double f_new = kInf;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = objective(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * g.dot(dir)) break;
      step *= 0.5;
    }
    if (!(std::isfinite(f_new) && f_new <= fx)) break;
    const VectorXd g_new = central_gradient(objective, x_new);
    const VectorXd s = x_new - x;
    const VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-14) {
      const double rho = 1.0 / sy;
      const MatrixXd id = MatrixXd::Identity(n_free, n_free);
      hinv = (id - rho * s * yv.transpose()) * hinv * (id - rho * yv * s.transpose()) + rho * s * s.transpose();
    }
    x = x_new;
    fx = f_new;
    g = g_new;
  }
  if (!fit.converged && g.cwiseAbs().maxCoeff() < opts.gradient_tol) fit.converged = true;
  fit.iterations = it;
  fit.theta_hat = rp.to_full(x);
  fit.objective = fx;
  const double k = static_cast<double>(m.variable_count());
  fit.loglik = -0.5 * static_cast<double>(mom.n) * (k * std::log(2.0 * M_PI) + fx);
  if (!fit.converged) fit.warnings.push_back("NonConvergence: BFGS stopped before the gradient tolerance");

  fit.vcov = MatrixXd::Zero(m.parameter_count(), m.parameter_count());
  if (opts.compute_vcov) {
    // Observed information: numerical Hessian of (n/2) F in natural units.
    const VectorXd theta_free = m.restrict(fit.theta_hat);
    const double half_n = 0.5 * static_cast<double>(mom.n);
    auto f = [&](const VectorXd& t) { return half_n * fml_objective(m, m.expand(t), mom.cov, mom.mean); };
    MatrixXd hess(n_free, n_free);
    VectorXd h(n_free);
    for (Index i = 0; i < n_free; ++i) h[i] = 1e-4 * (1.0 + std::abs(theta_free[i]));
    const double f0 = f(theta_free);
    VectorXd t = theta_free;
    for (Index i = 0; i < n_free; ++i) {
      t[i] = theta_free[i] + h[i];
      const double fp = f(t);
      t[i] = theta_free[i] - h[i];
      const double fm = f(t);
      t[i] = theta_free[i];
      hess(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
      for (Index j = 0; j < i; ++j) {
        auto at = [&](double si, double sj) {
          t[i] = theta_free[i] + si * h[i];
          t[j] = theta_free[j] + sj * h[j];
          const double v = f(t);
          t[i] = theta_free[i];
          t[j] = theta_free[j];
          return v;
        };
        hess(i, j) = hess(j, i) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[i] * h[j]);
      }
    }
    Eigen::LLT<MatrixXd> llt(hess);
    if (hess.allFinite() && llt.info() == Eigen::Success) {
      const MatrixXd v = llt.solve(MatrixXd::Identity(n_free, n_free));
      const auto& fp = m.free_parameters();
      for (Index i = 0; i < n_free; ++i) {
        for (Index j = 0; j < n_free; ++j) fit.vcov(fp[i], fp[j]) = v(i, j);
      }
      fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose());
      fit.vcov_available = true;
    } else {
      fit.warnings.push_back("NonPDHessian: standard errors unavailable");
    }
  }
  return fit;
}

MatrixXd path_data(const PathModel& m, const Dataset& d) {
  MatrixXd out(d.size(), m.variable_count());
  for (Index v = 0; v < m.variable_count(); ++v) {
    const std::string& name = m.variables()[static_cast<std::size_t>(v)];
    if (name == "A") {
      out.col(v) = d.a;
    } else if (name == "Y") {
      out.col(v) = d.y;
    } else if (name == "M") {
      if (!d.m) throw Error(ErrorCode::MediatorRequired, "model uses M but the data has no mediator");
      out.col(v) = *d.m;
    } else {
      const Index c = d.column_index(name);
      if (c < 0) throw Error(ErrorCode::UnknownVariable, "variable '" + name + "' not in data");
      out.col(v) = d.w.col(c);
    }
  }
  return out;
}

double delta_se_product(double a, double b, const Eigen::Matrix2d& v, bool* clamped) {
  const double var = b * b * v(0, 0) + a * a * v(1, 1) + 2.0 * a * b * v(0, 1);
  if (clamped) *clamped = var < 0.0;
  return std::sqrt(std::max(var, 0.0));
}

PathEffects effects_from_paths(const PathModel& m, const PathFit& fit, const std::string& treatment,
                               const std::optional<std::string>& mediator, const std::string& outcome) {
  auto edge = [&](const std::string& from, const std::string& to) {
    const int p = m.edge_parameter(from, to);
    if (p < 0) throw Error(ErrorCode::MissingEdge, "model has no edge " + from + "->" + to);
    return p;
  };
  const int pg = edge(treatment, outcome);
  PathEffects out;
  out.direct = fit.theta_hat[pg];
  out.se_direct = fit.se(pg);
  out.total = out.direct;
  out.se_total = out.se_direct;
  if (mediator) {
    const int pa = edge(treatment, *mediator);
    const int pb = edge(*mediator, outcome);
    const double a = fit.theta_hat[pa], b = fit.theta_hat[pb];
    out.indirect = a * b;
    out.total = out.direct + a * b;
    if (fit.vcov_available) {
      Eigen::Matrix2d v;
      v << fit.vcov(pa, pa), fit.vcov(pa, pb), fit.vcov(pb, pa), fit.vcov(pb, pb);
      bool clamped = false;
      out.se_indirect = delta_se_product(a, b, v, &clamped);
      VectorXd grad = VectorXd::Zero(m.parameter_count());
      grad[pg] = 1.0;
      grad[pa] += b;
      grad[pb] += a;
      const double var_total = grad.dot(fit.vcov * grad);
      out.negative_variance = clamped || var_total < 0.0;
      out.se_total = std::sqrt(std::max(var_total, 0.0));
    } else {
      out.se_indirect = std::numeric_limits<double>::quiet_NaN();
      out.se_total = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

namespace {

// Linear interpolation between order statistics.
double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<BootstrapInterval> bootstrap_ci(const PathModel& m, const MatrixXd& data,
                                            const std::vector<EffectSelector>& effects, int b_reps, Rng& rng) {
  if (b_reps < 100) throw Error(ErrorCode::PreconditionFailed, "bootstrap needs at least 100 replicates");
  if (effects.empty()) throw Error(ErrorCode::InvalidSpec, "no effects to bootstrap");
  const Index n = data.rows();
  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::vector<std::vector<double>> draws(effects.size());
  FitOptions opts;
  opts.compute_vcov = false;
  int failures = 0;
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (int b = 0; b < b_reps; ++b) {
    for (auto& r : rows) r = pick(rng);
    try {
      const PathFit fit = fit_path_model(m, data(rows, Eigen::all), opts);
      std::vector<double> values;
      for (const auto& e : effects) values.push_back(e(fit));
      if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
        throw Error(ErrorCode::PreconditionFailed, "non-finite effect");
      }
      for (std::size_t e = 0; e < effects.size(); ++e) draws[e].push_back(values[e]);
    } catch (const Error&) {
      ++failures;
    }
  }
  if (failures > b_reps / 10) {
    throw Error(ErrorCode::TooManyFailures, std::to_string(failures) + " of " + std::to_string(b_reps) +
                                                " bootstrap refits failed");
  }
  std::vector<BootstrapInterval> out;
  for (auto& v : draws) {
    std::sort(v.begin(), v.end());
    BootstrapInterval bi;
    bi.lower = quantile_sorted(v, 0.025);
    bi.upper = quantile_sorted(v, 0.975);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    bi.se = std::sqrt(ss / static_cast<double>(v.size() - 1));
    bi.failures = failures;
    bi.reps = b_reps;
    out.push_back(bi);
  }
  return out;
}

}  // namespace tc
