#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "pdcl/buffer.hpp"
#include "pdcl/errors.hpp"
#include "pdcl/oracles.hpp"

using namespace pdcl;

namespace {

LabeledExample ex(std::uint64_t id, int y, std::size_t task) {
  LabeledExample e;
  e.id = id;
  e.y = y;
  e.task = task;
  e.x = {static_cast<double>(id)};
  return e;
}

// `per_class` training samples for each of the classes {2t, 2t+1}.
TaskData make_task(std::size_t task, std::size_t per_class, std::uint64_t first_id) {
  TaskData d;
  d.classes = {static_cast<int>(2 * task), static_cast<int>(2 * task + 1)};
  std::uint64_t id = first_id;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c : d.classes) d.train.push_back(ex(id++, c, task));
  return d;
}

std::map<int, std::size_t> class_counts(const ReplayBuffer& buf, std::size_t task) {
  std::map<int, std::size_t> m;
  for (const auto& e : buf.slot(task)) ++m[e.example.y];
  return m;
}

std::set<std::uint64_t> slot_ids(const ReplayBuffer& buf, std::size_t task) {
  std::set<std::uint64_t> s;
  for (const auto& e : buf.slot(task)) s.insert(e.example.id);
  return s;
}

PartitionSolution partition_of(std::vector<std::size_t> n) {
  PartitionSolution p;
  p.n = std::move(n);
  return p;
}

}  // namespace

TEST_CASE("zeta") {
  CHECK(zeta(1) == 0.0);
  CHECK(zeta(3) > zeta(2));
  CHECK(zeta(3) > zeta(4));
  for (std::size_t n = 1; n < 200; ++n) CHECK(zeta(n) <= zeta(3));
  CHECK(zeta(100) < zeta(10));
  CHECK(zeta(10) == doctest::Approx(std::sqrt(std::log(10.0) / 10.0)));
  CHECK_THROWS_AS(zeta(0), std::invalid_argument);
  CHECK(zeta_derivative(std::exp(1.0)) == doctest::Approx(0.0).scale(1.0));
  CHECK(zeta_derivative(5.0) < 0.0);
  CHECK(zeta_derivative(2.0) > 0.0);
}

TEST_CASE("partition examples") {
  const auto a = solve_partition(std::vector<double>{1.0, 0.0}, 100, 3);
  CHECK(a.n == std::vector<std::size_t>{50, 50});
  const auto b = solve_weighted_partition(std::vector<double>{1.0, 0.0}, 20, 3);
  CHECK(b.n == std::vector<std::size_t>{17, 3});
  CHECK(b.objective == doctest::Approx(zeta(17)));
  const auto c = solve_partition(std::vector<double>{0.7}, 37, 3);
  CHECK(c.n == std::vector<std::size_t>{37});
  const auto d = solve_partition(std::vector<double>{0.0, 0.0}, 20, 3);  // weights [0, 1]
  CHECK(d.n == std::vector<std::size_t>{3, 17});
}

TEST_CASE("partition rejects bad inputs") {
  CHECK_THROWS_AS(solve_partition(std::vector<double>{1.0, 1.0, 1.0}, 8, 3), ConfigError);
  CHECK_THROWS_AS(solve_partition(std::vector<double>{-1.0, 1.0}, 20, 3), ConfigError);
  CHECK_THROWS_AS(solve_partition(std::vector<double>{1.0, 1.0}, 20, 2), ConfigError);
  CHECK_THROWS_AS(solve_partition(std::vector<double>{}, 20, 3), ConfigError);
}

TEST_CASE("partition matches exhaustive enumeration") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> lam(0.0, 5.0);
  std::uniform_int_distribution<std::size_t> tasks(1, 4);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t t = tasks(rng);
    std::uniform_int_distribution<std::size_t> cap(3 * t, 60);
    const std::size_t capacity = cap(rng);
    std::vector<double> lambda(t);
    for (auto& l : lambda) l = lam(rng);
    if (trial % 5 == 0) lambda[0] = 0.0;
    const auto sol = solve_partition(lambda, capacity, 3);
    std::vector<double> w = lambda;
    w.back() += 1.0;
    const auto ref = oracle::brute_force_partition(w, capacity, 3);
    CHECK(sol.objective <= ref.objective + 1e-9);
    std::size_t total = 0;
    for (auto n : sol.n) {
      CHECK(n >= 3);
      total += n;
    }
    CHECK(total == capacity);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        if (w[i] > w[j]) CHECK(sol.n[i] >= sol.n[j]);
  }
}

TEST_CASE("reservoir stores the first |B| items") {
  ReplayBuffer buf(5);
  std::mt19937_64 rng(1);
  for (std::uint64_t i = 1; i <= 5; ++i) CHECK(reservoir_insert(buf, ex(i, 0, 0), i, rng));
  CHECK(buf.size() == 5);
  CHECK(buf.seen() == 5);
  CHECK_THROWS_AS(reservoir_insert(buf, ex(9, 0, 0), 0, rng), std::invalid_argument);
}

TEST_CASE("reservoir inclusion is uniform") {
  const std::size_t cap = 10, n = 100, trials = 4000;
  std::vector<std::size_t> hits(n, 0);
  std::mt19937_64 rng(2024);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    ReplayBuffer buf(cap);
    for (std::size_t i = 0; i < n; ++i) reservoir_insert(buf, ex(i, 0, 0), i + 1, rng);
    CHECK(buf.size() == cap);
    for (const auto& e : buf.all_examples()) ++hits[e.id];
  }
  const double p = static_cast<double>(cap) / n;
  const double se = std::sqrt(p * (1 - p) / trials);
  for (std::size_t id : {std::size_t{0}, cap - 1, cap, n / 2, n - 1})
    CHECK(std::abs(static_cast<double>(hits[id]) / trials - p) < 3 * se);
}

TEST_CASE("ring buffer keeps the newest per class") {
  ReplayBuffer buf(10);
  for (std::uint64_t id : {1, 2, 3}) ring_insert(buf, ex(id, 0, 0), 2);
  CHECK(slot_ids(buf, 0) == std::set<std::uint64_t>{2, 3});

  ReplayBuffer two(10);
  std::uint64_t id = 0;
  for (int round = 0; round < 40; ++round)
    for (int c : {0, 1}) ring_insert(two, ex(id++, c, 0), 10 / 2);
  const auto counts = class_counts(two, 0);
  CHECK(counts.at(0) == 5);
  CHECK(counts.at(1) == 5);
  for (const auto& e : two.slot(0)) CHECK(e.example.id >= 70);
}

TEST_CASE("ring quota shrinks as classes arrive") {
  ReplayBuffer buf(8);
  std::uint64_t id = 0;
  for (int i = 0; i < 10; ++i)
    for (int c : {0, 1}) ring_insert(buf, ex(id++, c, 0), 8 / 2);
  for (int i = 0; i < 10; ++i)
    for (int c : {2, 3}) ring_insert(buf, ex(id++, c, 1), 8 / 4);
  for (std::size_t t : {0u, 1u})
    for (const auto& [label, n] : class_counts(buf, t)) CHECK(n == 2);
  CHECK(buf.size() == 8);
  CHECK_NOTHROW(buf.validate());
}

TEST_CASE("random fill") {
  ReplayBuffer buf(40);
  const auto t0 = make_task(0, 30, 0);
  auto report = fill_buffer_random(buf, t0, 0, partition_of({40}), 1);
  CHECK(report.warnings.empty());
  CHECK(buf.count(0) == 40);
  CHECK(class_counts(buf, 0).at(0) == 20);
  CHECK(class_counts(buf, 0).at(1) == 20);

  SUBCASE("unchanged partition keeps past slots") {
    const auto before = slot_ids(buf, 0);
    const auto t1 = make_task(1, 30, 1000);
    // room for a new slot beside the untouched one
    ReplayBuffer big(80);
    big.mutable_slot(0) = buf.slot(0);
    fill_buffer_random(big, t1, 1, partition_of({40, 40}), 2);
    CHECK(slot_ids(big, 0) == before);
  }
  SUBCASE("shrinking keeps a subset and balances the new slot") {
    const auto before = slot_ids(buf, 0);
    const auto t1 = make_task(1, 30, 1000);
    fill_buffer_random(buf, t1, 1, partition_of({15, 25}), 3);
    CHECK(buf.count(0) == 15);
    CHECK(buf.count(1) == 25);
    for (auto id : slot_ids(buf, 0)) CHECK(before.count(id) == 1);
    const auto cc = class_counts(buf, 1);
    CHECK(std::max(cc.at(2), cc.at(3)) - std::min(cc.at(2), cc.at(3)) <= 1);
    CHECK_NOTHROW(buf.validate());
  }
  SUBCASE("taking the whole training set") {
    ReplayBuffer all(60);
    fill_buffer_random(all, t0, 0, partition_of({60}), 4);
    std::set<std::uint64_t> want;
    for (const auto& e : t0.train) want.insert(e.id);
    CHECK(slot_ids(all, 0) == want);
  }
  SUBCASE("asking for more than exists warns") {
    ReplayBuffer all(100);
    const auto r = fill_buffer_random(all, t0, 0, partition_of({100}), 4);
    CHECK(all.count(0) == 60);
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("a past slot that must grow borrows from the current task") {
    const auto t1 = make_task(1, 30, 1000);
    fill_buffer_random(buf, t1, 1, partition_of({10, 30}), 5);
    const auto r = fill_buffer_random(buf, make_task(2, 30, 2000), 2, partition_of({14, 13, 13}), 6);
    CHECK(buf.count(0) == 10);
    CHECK(buf.count(2) == 17);
    CHECK(buf.size() == 40);
    CHECK_FALSE(r.warnings.empty());
  }
}

TEST_CASE("dual fill") {
  const auto t0 = make_task(0, 20, 0);  // ids 0..39; even ids class 0, odd ids class 1
  SampleDuals duals;
  for (const auto& e : t0.train) duals.lambda[e.id] = static_cast<double>(e.id) + 1.0;

  SUBCASE("no discard takes the per-class top") {
    ReplayBuffer buf(10);
    fill_buffer_dual(buf, t0, 0, partition_of({10}), duals, 0.0, 1);
    CHECK(slot_ids(buf, 0) == std::set<std::uint64_t>{30, 31, 32, 33, 34, 35, 36, 37, 38, 39});
    for (const auto& e : buf.slot(0)) CHECK(e.lambda == duals.at(e.example.id));
  }
  SUBCASE("the largest dual is discarded as an outlier") {
    ReplayBuffer buf(10);
    fill_buffer_dual(buf, t0, 0, partition_of({10}), duals, 1.0 / 20.0, 1);
    CHECK(slot_ids(buf, 0) == std::set<std::uint64_t>{28, 29, 30, 31, 32, 33, 34, 35, 36, 37});
  }
  SUBCASE("equal duals fall back to lowest ids") {
    SampleDuals flat;
    for (const auto& e : t0.train) flat.lambda[e.id] = 0.5;
    ReplayBuffer buf(6);
    fill_buffer_dual(buf, t0, 0, partition_of({6}), flat, 0.0, 1);
    CHECK(slot_ids(buf, 0) == std::set<std::uint64_t>{0, 1, 2, 3, 4, 5});
  }
  SUBCASE("all zero duals use the random fill") {
    SampleDuals zero;
    for (const auto& e : t0.train) zero.lambda[e.id] = 0.0;
    ReplayBuffer a(10), b(10);
    const auto r = fill_buffer_dual(a, t0, 0, partition_of({10}), zero, 0.01, 9);
    fill_buffer_random(b, t0, 0, partition_of({10}), 9);
    CHECK(slot_ids(a, 0) == slot_ids(b, 0));
    CHECK_FALSE(r.warnings.empty());
  }
  SUBCASE("past slots keep their highest duals") {
    ReplayBuffer buf(10);
    fill_buffer_dual(buf, t0, 0, partition_of({10}), duals, 0.0, 1);
    const auto t1 = make_task(1, 20, 100);
    SampleDuals d1;
    for (const auto& e : t1.train) d1.lambda[e.id] = 1.0;
    fill_buffer_dual(buf, t1, 1, partition_of({4, 6}), d1, 0.0, 1);
    CHECK(slot_ids(buf, 0) == std::set<std::uint64_t>{36, 37, 38, 39});
  }
  SUBCASE("quantile out of range") {
    ReplayBuffer buf(10);
    CHECK_THROWS_AS(fill_buffer_dual(buf, t0, 0, partition_of({10}), duals, 1.0, 1), ConfigError);
  }
}

TEST_CASE("fill rejects a partition that does not cover the tasks") {
  ReplayBuffer buf(10);
  CHECK_THROWS_AS(fill_buffer_random(buf, make_task(0, 5, 0), 0, partition_of({4, 6}), 1), ConfigError);
  CHECK_THROWS_AS(fill_buffer_random(buf, make_task(0, 5, 0), 0, partition_of({11}), 1), ConfigError);
}

TEST_CASE("buffer csv") {
  ReplayBuffer buf(4);
  buf.mutable_slot(0).push_back({ex(3, 1, 0), 0.25, 0});
  buf.mutable_slot(1).push_back({ex(8, 2, 1), 0.0, 1});
  std::ostringstream out;
  buf.write_csv(out);
  CHECK(out.str() == "1,3,1,0.25,3\n2,8,2,0,8\n");
}

TEST_CASE("buffer validation catches misplaced entries") {
  ReplayBuffer buf(4);
  buf.mutable_slot(1).push_back({ex(3, 1, 0), 0.0, 0});
  CHECK_THROWS(buf.validate());
}
