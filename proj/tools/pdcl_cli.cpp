#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "pdcl/buffer.hpp"
#include "pdcl/errors.hpp"
#include "pdcl/experiment.hpp"
#include "pdcl/oracles.hpp"
#include "pdcl/sensitivity.hpp"

using namespace pdcl;

namespace {

int cmd_run(const std::string& path, const std::optional<std::uint64_t>& seed, const std::string& out) {
  auto cfg = load_config(path);
  if (seed) cfg.seeds = {*seed};
  if (!out.empty()) cfg.out_dir = out;
  const auto summary = run_experiment(cfg);
  for (const auto& r : summary.seeds) {
    if (r.failure) {
      std::printf("seed %llu failed: %s\n", static_cast<unsigned long long>(r.seed), r.failure->c_str());
      continue;
    }
    const auto cil = final_metrics(r.accuracy.cil), til = final_metrics(r.accuracy.til);
    std::printf("seed %llu  CIL acc %.4f forget %.4f  TIL acc %.4f forget %.4f\n",
                static_cast<unsigned long long>(r.seed), cil.average_accuracy, cil.average_forgetting,
                til.average_accuracy, til.average_forgetting);
    for (const auto& w : r.warnings) std::printf("  warning: %s\n", w.c_str());
  }
  for (const auto& v : summary.violations) std::printf("violation: %s\n", v.c_str());
  std::printf("artifacts in %s\n", summary.directory.string().c_str());
  return summary.ok() ? 0 : 1;
}

int cmd_ablate(const std::string& path, const std::vector<double>& factors) {
  const auto cfg = load_config(path);
  const auto rows = tolerance_ablation(cfg, factors);
  std::printf("factor,seed,cil_error,til_error\n");
  for (const auto& r : rows)
    std::printf("%.10g,%llu,%.6f,%.6f\n", r.factor, static_cast<unsigned long long>(r.seed), r.final_error_cil,
                r.final_error_til);
  return 0;
}

int cmd_sensitivity(std::size_t problems, std::uint64_t seed, const std::string& csv_path) {
  using namespace pdcl::lab;
  static constexpr double kGrid[] = {-0.5, -0.2, -0.05, -0.01, 0.0, 0.01, 0.05, 0.2, 0.5, 1.0, 2.0};
  std::vector<SensitivityRow> rows;
  std::size_t failures = 0;
  auto check = [&](const ConvexProblem& p, std::size_t id) {
    const auto sol = solve_oracle(p);
    if (sol.residuals.max() >= kKktTolerance) {
      std::printf("problem %zu: KKT residual %.3g\n", id, sol.residuals.max());
      ++failures;
    }
    for (std::size_t k = 0; k < p.constraints.size(); ++k) {
      const auto rep = check_sensitivity(p, k, kGrid, id);
      if (!rep.passed()) {
        std::printf("problem %zu constraint %zu: under-estimator or slope check failed\n", id, k + 1);
        ++failures;
      }
      rows.insert(rows.end(), rep.rows.begin(), rep.rows.end());
    }
  };

  const auto one_d = solve_oracle(one_dimensional_example());
  std::printf("1-D case: x* = %.9f, P* = %.9f, lambda* = %.9f\n", one_d.x[0], one_d.value, one_d.lambda[0]);
  if (std::abs(one_d.lambda[0] - 1.0) > 1e-6) ++failures;
  check(one_dimensional_example(), 0);

  std::mt19937_64 rng(seed);
  for (std::size_t i = 1; i <= problems; ++i) {
    const auto p = random_problem(rng);
    check(p, i);
    // duplicated constraint: the multipliers split the merged one
    auto dup = p;
    dup.constraints.push_back(p.constraints[0]);
    const auto split = solve_oracle(dup);
    const double merged = solve_oracle(p).lambda[0];
    if (std::abs(split.lambda[0] + split.lambda[static_cast<Eigen::Index>(dup.constraints.size()) - 1] - merged) > 1e-6 ||
        !check_sample_sensitivity(dup, i).passed()) {
      std::printf("problem %zu: duplicated-constraint check failed\n", i);
      ++failures;
    }
  }

  const std::size_t ns[] = {20, 40, 80, 160, 320};
  const auto study = empirical_dual_study(default_family(), ns, 200, seed);
  std::printf("n,trials,mean_distance,stddev_distance\n");
  for (const auto& r : study.rows)
    std::printf("%zu,%zu,%.6f,%.6f\n", r.n, r.trials, r.mean_distance, r.stddev_distance);
  std::printf("spearman(n, mean distance) = %.4f\n", study.spearman);
  if (study.spearman > -0.8) ++failures;

  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + csv_path);
    write_sensitivity_csv(out, rows);
  }
  std::printf("%zu grid rows checked, %zu failures\n", rows.size(), failures);
  return failures == 0 ? 0 : 1;
}

int cmd_bench_partition(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lam(0.0, 5.0);
  std::uniform_int_distribution<std::size_t> tasks(1, 4);
  std::size_t failures = 0;
  double worst = -1.0, solver_s = 0.0, brute_s = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t t = tasks(rng);
    const std::size_t capacity = std::uniform_int_distribution<std::size_t>(3 * t, 60)(rng);
    std::vector<double> lambda(t);
    for (auto& l : lambda) l = lam(rng);
    auto t0 = std::chrono::steady_clock::now();
    const auto sol = solve_partition(lambda, capacity, 3);
    auto t1 = std::chrono::steady_clock::now();
    std::vector<double> w = lambda;
    w.back() += 1.0;
    const auto ref = oracle::brute_force_partition(w, capacity, 3);
    auto t2 = std::chrono::steady_clock::now();
    solver_s += std::chrono::duration<double>(t1 - t0).count();
    brute_s += std::chrono::duration<double>(t2 - t1).count();
    const double gap = sol.objective - ref.objective;
    worst = std::max(worst, gap);
    bool monotone = true;
    for (std::size_t a = 0; a < t; ++a)
      for (std::size_t b = 0; b < t; ++b) monotone = monotone && !(w[a] > w[b] && sol.n[a] < sol.n[b]);
    if (gap > 1e-9 || !monotone) {
      std::printf("instance %zu: gap %.3g monotone %d\n", i, gap, monotone ? 1 : 0);
      ++failures;
    }
  }
  std::printf("%zu instances, worst gap %.3g, solver %.3f ms total, enumeration %.3f ms total, %zu failures\n",
              instances, worst, 1e3 * solver_s, 1e3 * brute_s, failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"primal-dual continual learning experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, csv_path;
  std::optional<std::uint64_t> seed;
  std::vector<double> factors;
  std::size_t problems = 50, instances = 200;
  std::uint64_t lab_seed = 1;

  auto* run = app.add_subcommand("run", "run one experiment config");
  run->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "run only this seed");
  run->add_option("--out", out_dir, "output directory (overrides out_dir)");

  auto* ablate = app.add_subcommand("ablate-eps", "tolerance factor ablation");
  ablate->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--factors", factors, "comma separated factors")->required()->delimiter(',');

  auto* sens = app.add_subcommand("verify-sensitivity", "oracle checks on small convex programs");
  sens->add_option("--problems", problems, "random problems")->capture_default_str();
  sens->add_option("--seed", lab_seed, "random seed")->capture_default_str();
  sens->add_option("--csv", csv_path, "write the under-estimator rows here");

  auto* bench = app.add_subcommand("bench-partition", "partition solver against exhaustive enumeration");
  bench->add_option("--instances", instances, "random instances")->capture_default_str();
  bench->add_option("--seed", lab_seed, "random seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed, out_dir);
    if (ablate->parsed()) return cmd_ablate(config_path, factors);
    if (sens->parsed()) return cmd_sensitivity(problems, lab_seed, csv_path);
    if (bench->parsed()) return cmd_bench_partition(instances, lab_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
