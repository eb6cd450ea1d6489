#pragma once

// Small convex quadratic programs with an exact dual-based oracle, used to
// check that optimal multipliers behave as sensitivities of the optimal value.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <vector>

namespace pdcl::lab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// (x - center)^T B (x - center) <= eps, B positive semi-definite.
struct QuadraticConstraint {
  Mat B;
  Vec center;
  double eps = 0.0;
};

// minimize (x - a)^T A (x - a) + offset subject to the constraints; A positive definite.
struct ConvexProblem {
  Mat A;
  Vec a;
  double offset = 0.0;
  std::vector<QuadraticConstraint> constraints;

  std::size_t dim() const { return static_cast<std::size_t>(a.size()); }
  double objective(const Vec& x) const;
  double constraint_value(std::size_t j, const Vec& x) const;  // left-hand side, without eps
  void validate() const;
  ConvexProblem with_epsilon(std::size_t j, double eps) const;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal_feasibility = 0.0;
  double dual_feasibility = 0.0;
  double complementarity = 0.0;

  double max() const;
};

struct OracleSolution {
  Vec x;
  double value = 0.0;
  Vec lambda;
  KktResiduals residuals;
};

inline constexpr double kKktTolerance = 1e-8;

// Maximizes the concave dual (coordinate bisection, then Newton on the active
// set) with the inner quadratic minimized in closed form. Throws
// InfeasibleError if the dual is unbounded.
OracleSolution solve_oracle(const ConvexProblem& problem);

// Dual function g(lambda) = min_x L(x, lambda); requires lambda >= 0.
double dual_function(const ConvexProblem& problem, const Vec& lambda);

KktResiduals kkt_residuals(const ConvexProblem& problem, const Vec& x, const Vec& lambda);

// Indices with lambda_j above `tol`.
std::vector<std::size_t> active_set(const Vec& lambda, double tol = 1e-7);

struct SensitivityRow {
  std::size_t problem_id = 0;
  std::size_t k = 0;
  double gamma = 0.0;
  double lhs = 0.0;  // P*(eps_k + gamma) - P*(eps_k)
  double rhs = 0.0;  // -lambda*_k gamma
  bool pass = false;
};

struct SensitivityReport {
  std::vector<SensitivityRow> rows;
  double lambda_k = 0.0;
  bool slope_checked = false;  // false when the active set changes within +-h
  double slope = 0.0;          // central difference of P* in eps_k
  bool slope_pass = true;
  std::size_t skipped = 0;     // gamma values that made the problem infeasible

  bool passed() const;
};

inline constexpr double kUnderestimatorSlack = 1e-8;
inline constexpr double kSlopeStep = 1e-4;
inline constexpr double kSlopeTolerance = 1e-3;

// Checks P*(eps_k + gamma) - P*(eps_k) >= -lambda*_k gamma - 1e-8 over the
// grid, and |dP*/deps_k + lambda*_k| < 1e-3 where P* is differentiable.
SensitivityReport check_sensitivity(const ConvexProblem& problem, std::size_t k, std::span<const double> gamma_grid,
                                    std::size_t problem_id = 0);

struct SampleSensitivityReport {
  std::vector<SensitivityReport> per_constraint;
  // For constraints with lambda = 0 and strictly negative slack, the largest
  // change of P* under a perturbation smaller than the slack.
  double max_inactive_shift = 0.0;
  bool inactive_flat = true;

  bool passed() const;
};

// One constraint per sample: the under-estimator check for each, plus
// flatness of P* in the tolerance of every inactive sample.
SampleSensitivityReport check_sample_sensitivity(const ConvexProblem& problem, std::size_t problem_id = 0);

void write_sensitivity_csv(std::ostream& out, std::span<const SensitivityRow> rows, bool header = true);

// Random strictly feasible instance with dimension <= 3.
ConvexProblem random_problem(std::mt19937_64& rng, std::size_t max_dim = 3, std::size_t max_constraints = 3);

// 1-D: min (x-1)^2 s.t. (x+1)^2 <= eps.
ConvexProblem one_dimensional_example(double eps = 1.0);

// Least squares on an objective distribution subject to mean squared error
// bounds on constraint distributions. Inputs x ~ N(0, diag(scales^2)),
// targets y = w^T x + N(0, noise^2).
struct RegressionTask {
  Vec weights;
  Vec input_scales;
  double noise = 0.1;
};

struct LeastSquaresFamily {
  RegressionTask objective;
  std::vector<RegressionTask> constraints;
  std::vector<double> eps;  // bound on the expected squared error per constraint task
};

// Problem built from population moments.
ConvexProblem population_problem(const LeastSquaresFamily& family);
// Problem built from n samples per task.
ConvexProblem empirical_problem(const LeastSquaresFamily& family, std::size_t n, std::mt19937_64& rng);

// A family whose constraint is active at the population optimum.
LeastSquaresFamily default_family();

struct StudyRow {
  std::size_t n = 0;
  std::size_t trials = 0;
  double mean_distance = 0.0;
  double stddev_distance = 0.0;
};

struct DualStudy {
  Vec lambda_population;
  std::vector<StudyRow> rows;
  double spearman = 0.0;  // between n and mean distance
};

DualStudy empirical_dual_study(const LeastSquaresFamily& family, std::span<const std::size_t> n_grid,
                               std::size_t trials, std::uint64_t seed);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace pdcl::lab
