#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "pdcl/errors.hpp"
#include "pdcl/experiment.hpp"

using namespace pdcl;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(Method m) {
  ExperimentConfig cfg;
  cfg.stream.tasks = 2;
  cfg.stream.input_dim = 10;
  cfg.stream.samples_per_task = 400;
  cfg.stream.separation = {4.0};
  cfg.hidden = {8};
  cfg.method = m;
  cfg.buffer_size = 60;
  cfg.trainer.primal_lr = 0.05;
  cfg.trainer.dual_iters = 40;
  cfg.seeds = {3};
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("pdcl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("final metrics") {
  const auto m = final_metrics({{0.9}, {0.5, 0.8}});
  CHECK(m.average_accuracy == doctest::Approx(0.65));
  CHECK(m.average_forgetting == doctest::Approx(0.4));
  const auto flat = final_metrics({{0.5}, {0.5, 0.5}, {0.5, 0.5, 0.5}});
  CHECK(flat.average_forgetting == 0.0);
  const auto rising = final_metrics({{0.6}, {0.7, 0.6}, {0.8, 0.9, 0.7}});
  CHECK(rising.average_forgetting == 0.0);
  CHECK(final_metrics({{0.7}}).average_forgetting == 0.0);
}

TEST_CASE("method names") {
  for (auto m : {Method::finetune, Method::er_ring, Method::er_reservoir, Method::pdcl, Method::pdcl_s})
    CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("gem"), ConfigError);
}

TEST_CASE("config parsing") {
  const auto cfg = parse_config(R"({"tasks": 3, "method": "er_ring", "separation": [2, 3, 4], "seeds": [7],
                                    "buffer_size": 90, "primal_lr": 0.01, "per_class_cap": null})");
  CHECK(cfg.stream.tasks == 3);
  CHECK(cfg.method == Method::er_ring);
  CHECK(cfg.stream.separation == std::vector<double>{2, 3, 4});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7});
  CHECK(cfg.trainer.primal_lr == 0.01);

  const auto again = parse_config(config_to_json(cfg));
  CHECK(config_to_json(again) == config_to_json(cfg));

  CHECK_THROWS_AS(parse_config(R"({"taks": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"method": "pdcl", "tasks": 5, "buffer_size": 10})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"tolerance_factor": 1.0})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"tasks": 3, "separation": [2, 3]})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"stream": "csv"})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("single task: every method gives the same accuracy") {
  std::optional<std::vector<std::vector<double>>> first;
  for (auto m : {Method::finetune, Method::er_ring, Method::er_reservoir, Method::pdcl, Method::pdcl_s}) {
    auto cfg = small_config(m);
    cfg.stream.tasks = 1;
    const auto r = run_seed(cfg, 3);
    REQUIRE_FALSE(r.failure.has_value());
    if (!first) first = r.accuracy.cil;
    CHECK(r.accuracy.cil == *first);
  }
}

TEST_CASE("finetune forgets the first task") {
  auto cfg = small_config(Method::finetune);
  cfg.buffer_size = 0;
  const auto r = run_seed(cfg, 1);
  REQUIRE_FALSE(r.failure.has_value());
  const auto& a = r.accuracy.cil;
  REQUIRE(a.size() == 2);
  CHECK(a[1][0] <= a[0][0] - 0.3);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t k = 0; k <= t; ++k) CHECK(r.accuracy.til[t][k] >= a[t][k]);
}

TEST_CASE("huge tolerance keeps duals at zero and matches finetune") {
  auto cfg = small_config(Method::pdcl);
  cfg.tolerance_factor = 1e12;
  const auto pd = run_seed(cfg, 2);
  REQUIRE_FALSE(pd.failure.has_value());
  for (const auto& tr : pd.traces)
    for (double l : tr.lambda) CHECK(l == 0.0);
  cfg.method = Method::finetune;
  const auto ft = run_seed(cfg, 2);
  CHECK(pd.accuracy.cil == ft.accuracy.cil);
}

TEST_CASE("unequal difficulty: pdcl partition is uneven, ring is even") {
  auto cfg = small_config(Method::pdcl);
  cfg.stream.tasks = 3;
  cfg.stream.separation = {1.0, 6.0, 6.0};
  cfg.buffer_size = 90;
  cfg.trainer.dual_iters = 60;
  const auto pd = run_seed(cfg, 0);
  REQUIRE_FALSE(pd.failure.has_value());
  REQUIRE(pd.partitions.size() == 3);
  const auto& n = pd.partitions.back().n;
  CHECK(std::accumulate(n.begin(), n.end(), std::size_t{0}) == 90);
  CHECK(*std::max_element(n.begin(), n.end()) > *std::min_element(n.begin(), n.end()));

  cfg.method = Method::er_ring;
  const auto ring = run_seed(cfg, 0);
  REQUIRE_FALSE(ring.failure.has_value());
  CHECK(ring.buffer_counts == std::vector<std::size_t>{30, 30, 30});
}

TEST_CASE("label noise flips exact counts inside the task") {
  auto s = build_stream(small_config(Method::pdcl).stream, 4);
  const auto before = s.tasks[1].train;
  const auto flipped = inject_label_noise(s, 1, 0.05, 9);
  CHECK(std::is_sorted(flipped.begin(), flipped.end()));
  const std::set<std::uint64_t> ids(flipped.begin(), flipped.end());
  std::map<int, std::size_t> per_class, flips;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& a = before[i];
    const auto& b = s.tasks[1].train[i];
    REQUIRE(a.id == b.id);
    ++per_class[a.y];
    if (a.y != b.y) {
      ++flips[a.y];
      CHECK(ids.count(a.id) == 1);
      CHECK(s.tasks[1].has_class(b.y));
    }
  }
  for (const auto& [c, size] : per_class) CHECK(flips[c] == static_cast<std::size_t>(std::llround(0.05 * size)));
  CHECK(ids.size() == flipped.size());
  CHECK_THROWS_AS(inject_label_noise(s, 2, 0.05, 1), ConfigError);
}

TEST_CASE("run_experiment writes reproducible artifacts") {
  auto cfg = small_config(Method::pdcl_s);
  cfg.seeds = {0, 1};
  cfg.trainer.dual_iters = 20;
  const auto dir = scratch("run");
  cfg.out_dir = dir.string();
  cfg.run_id = "a";
  const auto first = run_experiment(cfg);
  CHECK(first.ok());
  for (const char* f : {"accuracy.csv", "duals.csv", "partition.csv", "config.json"}) CHECK(fs::exists(dir / "a" / f));
  CHECK_FALSE(fs::exists(dir / "a" / "failures.csv"));

  const auto acc = slurp(dir / "a" / "accuracy.csv");
  CHECK(acc.rfind("seed,after_task,eval_task,mode,accuracy\n", 0) == 0);
  // 2 seeds x (1 + 2) entries x 2 modes
  CHECK(std::count(acc.begin(), acc.end(), '\n') == 1 + 12);
  CHECK(slurp(dir / "a" / "partition.csv").rfind("seed,after_task,k,n_k,lambda_k\n", 0) == 0);
  CHECK(slurp(dir / "a" / "duals.csv").rfind("seed,task,iter,k,lambda,slack\n", 0) == 0);
  CHECK(parse_config(slurp(dir / "a" / "config.json")).run_id == "a");

  cfg.run_id = "b";
  run_experiment(cfg);
  for (const char* f : {"accuracy.csv", "duals.csv", "partition.csv"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  fs::remove_all(dir);
}

TEST_CASE("a failing seed is recorded, not fatal") {
  auto cfg = small_config(Method::pdcl);
  cfg.trainer.primal_lr = 1e200;
  cfg.seeds = {0};
  const auto dir = scratch("fail");
  cfg.out_dir = dir.string();
  const auto summary = run_experiment(cfg);
  REQUIRE(summary.seeds.size() == 1);
  CHECK(summary.seeds[0].failure.has_value());
  CHECK_FALSE(summary.ok());
  CHECK(slurp(dir / cfg.run_id / "failures.csv").rfind("seed,error\n0,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("tolerance ablation rows") {
  auto cfg = small_config(Method::pdcl);
  cfg.trainer.dual_iters = 20;
  const auto dir = scratch("ablate");
  cfg.out_dir = dir.string();
  const auto rows = tolerance_ablation(cfg, {1.25});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].factor == 1.25);
  CHECK(rows[0].final_error_til <= rows[0].final_error_cil);
  CHECK(fs::exists(dir / cfg.run_id / "ablation.csv"));
  fs::remove_all(dir);
}
