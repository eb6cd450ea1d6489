#include "pdcl/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pdcl/errors.hpp"
#include "pdcl/random.hpp"

namespace pdcl::lab {

double ConvexProblem::objective(const Vec& x) const {
  const Vec d = x - a;
  return d.dot(A * d) + offset;
}

double ConvexProblem::constraint_value(std::size_t j, const Vec& x) const {
  const auto& c = constraints.at(j);
  const Vec d = x - c.center;
  return d.dot(c.B * d);
}

void ConvexProblem::validate() const {
  const auto n = a.size();
  if (n < 1) throw std::invalid_argument("problem dimension must be at least 1");
  if (A.rows() != n || A.cols() != n) throw DimensionError("objective matrix has the wrong shape");
  if (A.llt().info() != Eigen::Success) throw std::invalid_argument("objective matrix must be positive definite");
  for (const auto& c : constraints) {
    if (c.B.rows() != n || c.B.cols() != n || c.center.size() != n)
      throw DimensionError("constraint has the wrong shape");
    const Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (c.B + c.B.transpose()));
    if (eig.eigenvalues().minCoeff() < -1e-12) throw std::invalid_argument("constraint matrix must be PSD");
  }
}

ConvexProblem ConvexProblem::with_epsilon(std::size_t j, double eps) const {
  ConvexProblem p = *this;
  p.constraints.at(j).eps = eps;
  return p;
}

double KktResiduals::max() const {
  return std::max({stationarity, primal_feasibility, dual_feasibility, complementarity});
}

namespace {

struct Inner {
  Vec x;
  Eigen::LDLT<Mat> factor;
};

// argmin_x of the Lagrangian; A + sum lambda_j B_j is positive definite for lambda >= 0.
Inner minimize_lagrangian(const ConvexProblem& p, const Vec& lambda) {
  Mat Q = p.A;
  Vec rhs = p.A * p.a;
  for (std::size_t j = 0; j < p.constraints.size(); ++j) {
    const auto& c = p.constraints[j];
    Q += lambda[static_cast<Eigen::Index>(j)] * c.B;
    rhs += lambda[static_cast<Eigen::Index>(j)] * (c.B * c.center);
  }
  Inner in{Vec(), Eigen::LDLT<Mat>(Q)};
  in.x = in.factor.solve(rhs);
  return in;
}

Vec dual_gradient(const ConvexProblem& p, const Vec& x) {
  Vec g(static_cast<Eigen::Index>(p.constraints.size()));
  for (std::size_t j = 0; j < p.constraints.size(); ++j)
    g[static_cast<Eigen::Index>(j)] = p.constraint_value(j, x) - p.constraints[j].eps;
  return g;
}

constexpr double kUnbounded = 1e10;

// Exact maximization of the dual along coordinate j by bisection on its
// derivative, which is nonincreasing in lambda_j.
double coordinate_maximizer(const ConvexProblem& p, Vec lambda, std::size_t j) {
  const auto jj = static_cast<Eigen::Index>(j);
  auto slope = [&](double v) {
    lambda[jj] = v;
    const Vec x = minimize_lagrangian(p, lambda).x;
    return p.constraint_value(j, x) - p.constraints[j].eps;
  };
  if (slope(0.0) <= 0.0) return 0.0;
  double lo = 0.0;
  double hi = std::max(1.0, 2.0 * lambda[jj]);
  while (slope(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > kUnbounded) throw InfeasibleError("dual unbounded: constraint " + std::to_string(j) + " cannot be met");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-16 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void coordinate_ascent(const ConvexProblem& p, Vec& lambda, int max_sweeps) {
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
      const double v = coordinate_maximizer(p, lambda, j);
      change = std::max(change, std::abs(v - lambda[static_cast<Eigen::Index>(j)]));
      lambda[static_cast<Eigen::Index>(j)] = v;
    }
    if (lambda.size() > 0 && lambda.maxCoeff() > kUnbounded) throw InfeasibleError("dual unbounded");
    if (change < 1e-13) break;
  }
}

// Newton on grad_S g = 0 for the current active set S. Multipliers that turn
// negative are clipped to zero and leave the set. The Hessian is
// -2 U^T Q^{-1} U with U_j = B_j (x - center_j); duplicated constraints make
// it singular, so the step is the minimum-norm least-squares solution.
void newton_polish(const ConvexProblem& p, Vec& lambda) {
  for (int it = 0; it < 60; ++it) {
    std::vector<Eigen::Index> S;
    for (Eigen::Index j = 0; j < lambda.size(); ++j)
      if (lambda[j] > 0.0) S.push_back(j);
    if (S.empty()) return;
    const auto inner = minimize_lagrangian(p, lambda);
    const Vec grad = dual_gradient(p, inner.x);
    const auto s = static_cast<Eigen::Index>(S.size());
    Vec r(s);
    Mat U(static_cast<Eigen::Index>(p.dim()), s);
    for (Eigen::Index i = 0; i < s; ++i) {
      r[i] = grad[S[static_cast<std::size_t>(i)]];
      const auto& c = p.constraints[static_cast<std::size_t>(S[static_cast<std::size_t>(i)])];
      U.col(i) = c.B * (inner.x - c.center);
    }
    const double r_norm = r.lpNorm<Eigen::Infinity>();
    if (r_norm < 1e-15) return;
    const Mat H = -2.0 * U.transpose() * inner.factor.solve(U);
    const Vec step = H.completeOrthogonalDecomposition().solve(-r);

    // Backtrack on the residual norm, projecting onto lambda >= 0.
    double t = 1.0;
    bool improved = false;
    for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
      Vec trial = lambda;
      for (Eigen::Index i = 0; i < s; ++i) trial[S[static_cast<std::size_t>(i)]] =
          std::max(0.0, lambda[S[static_cast<std::size_t>(i)]] + t * step[i]);
      const Vec g = dual_gradient(p, minimize_lagrangian(p, trial).x);
      double res = 0.0;
      for (Eigen::Index i = 0; i < s; ++i) {
        const auto j = S[static_cast<std::size_t>(i)];
        res = std::max(res, trial[j] > 0.0 ? std::abs(g[j]) : std::max(0.0, g[j]));
      }
      if (res < r_norm) {
        lambda = trial;
        improved = true;
        break;
      }
    }
    if (!improved) return;
  }
}

}  // namespace

double dual_function(const ConvexProblem& problem, const Vec& lambda) {
  if (lambda.size() != static_cast<Eigen::Index>(problem.constraints.size()))
    throw DimensionError("multiplier count does not match constraints");
  if (lambda.size() > 0 && lambda.minCoeff() < 0.0) throw std::invalid_argument("multipliers must be nonnegative");
  const Vec x = minimize_lagrangian(problem, lambda).x;
  double v = problem.objective(x);
  for (std::size_t j = 0; j < problem.constraints.size(); ++j)
    v += lambda[static_cast<Eigen::Index>(j)] * (problem.constraint_value(j, x) - problem.constraints[j].eps);
  return v;
}

KktResiduals kkt_residuals(const ConvexProblem& p, const Vec& x, const Vec& lambda) {
  KktResiduals r;
  Vec grad = 2.0 * p.A * (x - p.a);
  for (std::size_t j = 0; j < p.constraints.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto& c = p.constraints[j];
    grad += 2.0 * lambda[jj] * (c.B * (x - c.center));
    const double s = p.constraint_value(j, x) - c.eps;
    r.primal_feasibility = std::max(r.primal_feasibility, s);
    r.dual_feasibility = std::max(r.dual_feasibility, -lambda[jj]);
    r.complementarity = std::max(r.complementarity, std::abs(lambda[jj] * s));
  }
  r.stationarity = grad.lpNorm<Eigen::Infinity>();
  return r;
}

OracleSolution solve_oracle(const ConvexProblem& problem) {
  problem.validate();
  const auto m = static_cast<Eigen::Index>(problem.constraints.size());
  for (const auto& c : problem.constraints)
    if (!(c.eps > 0.0)) throw InfeasibleError("constraint level must be positive for a strictly feasible point");
  Vec lambda = Vec::Zero(m);
  for (int round = 0; round < 20; ++round) {
    coordinate_ascent(problem, lambda, round == 0 ? 5000 : 200);
    newton_polish(problem, lambda);
    const Vec g = dual_gradient(problem, minimize_lagrangian(problem, lambda).x);
    bool optimal = true;
    for (Eigen::Index j = 0; j < m; ++j)
      if (lambda[j] == 0.0 && g[j] > 1e-13) optimal = false;
    if (optimal) break;
  }
  OracleSolution sol;
  sol.lambda = lambda;
  sol.x = minimize_lagrangian(problem, lambda).x;
  sol.value = problem.objective(sol.x);
  sol.residuals = kkt_residuals(problem, sol.x, lambda);
  if (sol.residuals.primal_feasibility > 1e-6) throw InfeasibleError("no feasible point found");
  return sol;
}

std::vector<std::size_t> active_set(const Vec& lambda, double tol) {
  std::vector<std::size_t> s;
  for (Eigen::Index j = 0; j < lambda.size(); ++j)
    if (lambda[j] > tol) s.push_back(static_cast<std::size_t>(j));
  return s;
}

bool SensitivityReport::passed() const {
  return slope_pass && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
}

SensitivityReport check_sensitivity(const ConvexProblem& problem, std::size_t k, std::span<const double> gamma_grid,
                                    std::size_t problem_id) {
  if (k >= problem.constraints.size()) throw std::out_of_range("constraint index out of range");
  const auto base = solve_oracle(problem);
  const double eps_k = problem.constraints[k].eps;
  SensitivityReport report;
  report.lambda_k = base.lambda[static_cast<Eigen::Index>(k)];
  for (double gamma : gamma_grid) {
    double value = 0.0;
    try {
      value = solve_oracle(problem.with_epsilon(k, eps_k + gamma)).value;
    } catch (const InfeasibleError&) {
      ++report.skipped;
      continue;
    }
    SensitivityRow row;
    row.problem_id = problem_id;
    row.k = k;
    row.gamma = gamma;
    row.lhs = value - base.value;
    row.rhs = -report.lambda_k * gamma;
    row.pass = row.lhs >= row.rhs - kUnderestimatorSlack;
    report.rows.push_back(row);
  }

  const double h = kSlopeStep;
  try {
    const auto up = solve_oracle(problem.with_epsilon(k, eps_k + h));
    const auto down = solve_oracle(problem.with_epsilon(k, eps_k - h));
    const auto s0 = active_set(base.lambda);
    if (active_set(up.lambda) == s0 && active_set(down.lambda) == s0) {
      report.slope_checked = true;
      report.slope = (up.value - down.value) / (2.0 * h);
      report.slope_pass = std::abs(report.slope + report.lambda_k) < kSlopeTolerance;
    }
  } catch (const InfeasibleError&) {
    report.slope_checked = false;
  }
  return report;
}

bool SampleSensitivityReport::passed() const {
  return inactive_flat &&
         std::all_of(per_constraint.begin(), per_constraint.end(), [](const auto& r) { return r.passed(); });
}

SampleSensitivityReport check_sample_sensitivity(const ConvexProblem& problem, std::size_t problem_id) {
  static constexpr double kGrid[] = {-0.1, -0.01, 0.0, 0.01, 0.1, 0.5};
  SampleSensitivityReport report;
  const auto base = solve_oracle(problem);
  for (std::size_t j = 0; j < problem.constraints.size(); ++j) {
    report.per_constraint.push_back(check_sensitivity(problem, j, kGrid, problem_id));
    const auto jj = static_cast<Eigen::Index>(j);
    const double s = problem.constraint_value(j, base.x) - problem.constraints[j].eps;
    if (base.lambda[jj] == 0.0 && s < -1e-6) {
      const double delta = std::min(0.5 * -s, 0.1);
      for (double sign : {-1.0, 1.0}) {
        const double v = solve_oracle(problem.with_epsilon(j, problem.constraints[j].eps + sign * delta)).value;
        report.max_inactive_shift = std::max(report.max_inactive_shift, std::abs(v - base.value));
      }
    }
  }
  report.inactive_flat = report.max_inactive_shift <= 1e-9;
  return report;
}

void write_sensitivity_csv(std::ostream& out, std::span<const SensitivityRow> rows, bool header) {
  if (header) out << "problem_id,k,gamma,lhs,rhs,pass\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%d\n", r.problem_id, r.k + 1, r.gamma, r.lhs, r.rhs,
                  r.pass ? 1 : 0);
    out << buf;
  }
}

ConvexProblem random_problem(std::mt19937_64& rng, std::size_t max_dim, std::size_t max_constraints) {
  std::uniform_int_distribution<std::size_t> dim_dist(1, std::max<std::size_t>(1, max_dim));
  std::uniform_int_distribution<std::size_t> m_dist(1, std::max<std::size_t>(1, max_constraints));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> box(-2.0, 2.0);
  std::uniform_real_distribution<double> margin(0.2, 1.5);
  const auto d = static_cast<Eigen::Index>(dim_dist(rng));
  const std::size_t m = m_dist(rng);

  auto random_matrix = [&](double scale) {
    Mat R(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) R(i, j) = scale * normal(rng);
    return R;
  };
  auto random_vector = [&]() {
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = box(rng);
    return v;
  };

  ConvexProblem p;
  const Mat R = random_matrix(0.8);
  p.A = R * R.transpose() + 0.5 * Mat::Identity(d, d);
  p.a = random_vector();
  Vec strictly_feasible = 0.5 * random_vector();
  for (std::size_t j = 0; j < m; ++j) {
    QuadraticConstraint c;
    const Mat S = random_matrix(0.8);
    c.B = S * S.transpose() + 0.2 * Mat::Identity(d, d);
    c.center = random_vector();
    const Vec diff = strictly_feasible - c.center;
    c.eps = diff.dot(c.B * diff) + margin(rng);
    p.constraints.push_back(std::move(c));
  }
  return p;
}

ConvexProblem one_dimensional_example(double eps) {
  ConvexProblem p;
  p.A = Mat::Identity(1, 1);
  p.a = Vec::Constant(1, 1.0);
  p.constraints.push_back({Mat::Identity(1, 1), Vec::Constant(1, -1.0), eps});
  return p;
}

namespace {

// E[(y - w^T x)^2] = (w - w_task)^T Sigma (w - w_task) + noise^2
struct Quadratic {
  Mat M;
  Vec center;
  double constant = 0.0;
};

Quadratic population_quadratic(const RegressionTask& t) {
  Quadratic q;
  q.M = t.input_scales.array().square().matrix().asDiagonal();
  q.center = t.weights;
  q.constant = t.noise * t.noise;
  return q;
}

Quadratic empirical_quadratic(const RegressionTask& t, std::size_t n, std::mt19937_64& rng) {
  const auto d = t.weights.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat X(static_cast<Eigen::Index>(n), d);
  Vec y(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (Eigen::Index c = 0; c < d; ++c) X(i, c) = t.input_scales[c] * normal(rng);
    y[i] = X.row(i).dot(t.weights) + t.noise * normal(rng);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Quadratic q;
  q.M = inv_n * X.transpose() * X;
  const Vec xy = inv_n * X.transpose() * y;
  q.center = q.M.ldlt().solve(xy);
  q.constant = inv_n * y.squaredNorm() - q.center.dot(q.M * q.center);
  return q;
}

ConvexProblem assemble(const Quadratic& obj, const std::vector<Quadratic>& cons, const std::vector<double>& eps) {
  ConvexProblem p;
  p.A = obj.M;
  p.a = obj.center;
  p.offset = obj.constant;
  for (std::size_t j = 0; j < cons.size(); ++j) p.constraints.push_back({cons[j].M, cons[j].center, eps[j] - cons[j].constant});
  return p;
}

}  // namespace

ConvexProblem population_problem(const LeastSquaresFamily& family) {
  std::vector<Quadratic> cons;
  for (const auto& t : family.constraints) cons.push_back(population_quadratic(t));
  return assemble(population_quadratic(family.objective), cons, family.eps);
}

ConvexProblem empirical_problem(const LeastSquaresFamily& family, std::size_t n, std::mt19937_64& rng) {
  const auto obj = empirical_quadratic(family.objective, n, rng);
  std::vector<Quadratic> cons;
  for (const auto& t : family.constraints) cons.push_back(empirical_quadratic(t, n, rng));
  return assemble(obj, cons, family.eps);
}

LeastSquaresFamily default_family() {
  // Population optimum: |w - w1|^2 <= 0.5 binds with lambda* = 1.
  LeastSquaresFamily f;
  f.objective = {Vec::Unit(2, 0), Vec::Ones(2), 0.5};
  f.constraints.push_back({Vec::Unit(2, 1), Vec::Ones(2), 0.5});
  f.eps = {0.75};
  return f;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs two equal-length samples");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

DualStudy empirical_dual_study(const LeastSquaresFamily& family, std::span<const std::size_t> n_grid,
                               std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("need at least one trial");
  DualStudy study;
  study.lambda_population = solve_oracle(population_problem(family)).lambda;
  std::vector<double> ns, means;
  for (std::size_t n : n_grid) {
    StudyRow row;
    row.n = n;
    row.trials = trials;
    std::vector<double> dist;
    dist.reserve(trials);
    for (std::size_t trial = 0; trial < trials; ++trial) {
      std::mt19937_64 rng(derive_seed(seed, n, trial));
      const auto sol = solve_oracle(empirical_problem(family, n, rng));
      dist.push_back((sol.lambda - study.lambda_population).norm());
    }
    row.mean_distance = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(trials);
    double ss = 0.0;
    for (double v : dist) ss += (v - row.mean_distance) * (v - row.mean_distance);
    row.stddev_distance = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
    study.rows.push_back(row);
    ns.push_back(static_cast<double>(n));
    means.push_back(row.mean_distance);
  }
  study.spearman = ns.size() >= 2 ? spearman(ns, means) : 0.0;
  return study;
}

}  // namespace pdcl::lab
