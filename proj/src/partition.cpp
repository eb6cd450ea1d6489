#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "pdcl/buffer.hpp"
#include "pdcl/errors.hpp"

namespace pdcl {

double zeta(std::size_t n) {
  if (n == 0) throw std::invalid_argument("zeta is undefined at n = 0");
  const double x = static_cast<double>(n);
  return std::sqrt(std::log(x) / x);
}

double zeta_continuous(double n) { return std::sqrt(std::log(n) / n); }

double zeta_derivative(double n) {
  const double z = zeta_continuous(n);
  return (1.0 - std::log(n)) / (2.0 * n * n * z);
}

namespace {

// zeta'' < 0 below n ~ 4.7, so the relaxation is only convex from here on.
// The integer sequence is also discretely convex on {5, 6, ...}.
constexpr std::size_t kConvexFrom = 5;

double objective(std::span<const double> w, std::span<const std::size_t> n) {
  double v = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) v += w[k] * zeta(n[k]);
  return v;
}

// Smallest n >= lower with w zeta'(n) >= -mu, capped at upper.
double relaxed_size(double w, double mu, double lower, double upper) {
  if (w <= 0.0 || w * zeta_derivative(lower) >= -mu) return lower;
  if (w * zeta_derivative(upper) <= -mu) return upper;
  double lo = lower;
  double hi = upper;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (w * zeta_derivative(mid) < -mu ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Largest-remainder rounding of a nonnegative vector with integer sum.
std::vector<std::size_t> round_preserving_sum(std::span<const double> x, std::size_t total) {
  std::vector<std::size_t> n(x.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double f = std::floor(x[k]);
    n[k] = static_cast<std::size_t>(f);
    used += n[k];
    rem.emplace_back(x[k] - f, k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; i = (i + 1) % rem.size(), ++used) ++n[rem[i].second];
  // Bisection slop can leave the floors a unit above the total.
  for (std::size_t i = rem.size(); used > total; --used) {
    i = (i == 0 ? rem.size() : i) - 1;
    --n[rem[i].second];
  }
  return n;
}

// Convex part: every size >= lower, sum = budget. Continuous water-filling
// on the multiplier of the budget constraint, largest-remainder rounding,
// then single-unit exchanges, which reach the integer optimum because the
// objective is separable and discretely convex above `lower`.
std::vector<std::size_t> solve_convex(std::span<const double> w, std::size_t budget, std::size_t lower) {
  const std::size_t f = w.size();
  std::vector<std::size_t> n(f, lower);
  if (f == 0) return n;
  const double lo_n = static_cast<double>(lower);
  const double hi_n = static_cast<double>(budget - (f - 1) * lower);

  const double w_max = *std::max_element(w.begin(), w.end());
  if (w_max <= 0.0) {
    std::vector<double> even(f, static_cast<double>(budget) / static_cast<double>(f));
    return round_preserving_sum(even, budget);
  }

  auto total_at = [&](double mu) {
    double s = 0.0;
    for (double wk : w) s += relaxed_size(wk, mu, lo_n, hi_n);
    return s;
  };
  // total_at is nonincreasing in mu; at mu_hi everyone sits at the bound.
  double mu_hi = w_max * -zeta_derivative(lo_n);
  double mu_lo = mu_hi;
  while (mu_lo > 1e-300 && total_at(mu_lo) < static_cast<double>(budget)) mu_lo *= 0.5;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (mu_lo + mu_hi);
    (total_at(mid) > static_cast<double>(budget) ? mu_lo : mu_hi) = mid;
  }
  std::vector<double> relaxed(f);
  for (std::size_t k = 0; k < f; ++k) relaxed[k] = relaxed_size(w[k], 0.5 * (mu_lo + mu_hi), lo_n, hi_n);
  n = round_preserving_sum(relaxed, budget);
  for (auto& v : n) v = std::max(v, lower);
  // Clamping can overshoot the budget; take the excess from the cheapest donors.
  std::size_t total = std::accumulate(n.begin(), n.end(), std::size_t{0});
  while (total > budget) {
    std::size_t best = f;
    double best_cost = 0.0;
    for (std::size_t k = 0; k < f; ++k) {
      if (n[k] <= lower) continue;
      const double cost = w[k] * (zeta(n[k] - 1) - zeta(n[k]));
      if (best == f || cost < best_cost) best = k, best_cost = cost;
    }
    --n[best];
    --total;
  }

  while (true) {
    double best_gain = 0.0;
    std::size_t from = f, to = f;
    for (std::size_t i = 0; i < f; ++i) {
      if (n[i] <= lower) continue;
      const double loss = w[i] * (zeta(n[i] - 1) - zeta(n[i]));
      for (std::size_t j = 0; j < f; ++j) {
        if (j == i) continue;
        const double gain = w[j] * (zeta(n[j]) - zeta(n[j] + 1)) - loss;
        if (gain > best_gain + 1e-15) best_gain = gain, from = i, to = j;
      }
    }
    if (from == f) break;
    --n[from];
    ++n[to];
  }
  return n;
}

}  // namespace

PartitionSolution solve_weighted_partition(std::span<const double> weights, std::size_t capacity,
                                           std::size_t n_min) {
  const std::size_t t = weights.size();
  if (t == 0) throw ConfigError("partition needs at least one task");
  if (n_min < kDefaultMinSlot) throw ConfigError("n_min must be at least 3 (zeta increases below e)");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("partition weights must be finite and nonnegative");
  if (capacity < t * n_min)
    throw ConfigError("buffer of " + std::to_string(capacity) + " cannot give " + std::to_string(t) +
                      " tasks at least " + std::to_string(n_min) + " samples each");

  PartitionSolution best;
  if (t == 1) {
    best.n = {capacity};
    best.objective = objective(weights, best.n);
    return best;
  }

  // An optimal allocation is monotone in the weights (zeta decreases on
  // [3, inf), so swapping a misordered pair never hurts). Sizes below the
  // convex region therefore go to a prefix of the tasks sorted by weight, in
  // nondecreasing order; enumerate those prefixes and solve the rest convexly.
  std::vector<std::size_t> order(t);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return weights[a] < weights[b]; });

  const std::size_t lower = std::max(n_min, kConvexFrom);
  std::vector<std::size_t> head_values;
  for (std::size_t v = n_min; v < lower; ++v) head_values.push_back(v);

  bool found = false;
  std::vector<std::size_t> head;  // sizes for the first head.size() tasks of `order`
  auto evaluate_split = [&]() {
    const std::size_t h = head.size();
    const std::size_t used = std::accumulate(head.begin(), head.end(), std::size_t{0});
    if (used > capacity) return;
    const std::size_t budget = capacity - used;
    const std::size_t free_count = t - h;
    if (free_count == 0 ? budget != 0 : budget < free_count * lower) return;
    std::vector<double> w_free;
    for (std::size_t i = h; i < t; ++i) w_free.push_back(weights[order[i]]);
    const auto n_free = solve_convex(w_free, budget, lower);
    std::vector<std::size_t> n(t);
    for (std::size_t i = 0; i < h; ++i) n[order[i]] = head[i];
    for (std::size_t i = h; i < t; ++i) n[order[i]] = n_free[i - h];
    const double value = objective(weights, n);
    if (!found || value < best.objective - 1e-15) {
      found = true;
      best.n = std::move(n);
      best.objective = value;
    }
  };

  // Depth-first over nondecreasing head sequences.
  auto extend = [&](auto&& self, std::size_t min_index) -> void {
    evaluate_split();
    if (head.size() == t) return;
    for (std::size_t v = min_index; v < head_values.size(); ++v) {
      head.push_back(head_values[v]);
      self(self, v);
      head.pop_back();
    }
  };
  extend(extend, 0);
  if (!found) throw ConfigError("no feasible buffer partition");
  return best;
}

PartitionSolution solve_partition(std::span<const double> lambda, std::size_t capacity, std::size_t n_min) {
  if (lambda.empty()) throw ConfigError("partition needs at least one task");
  for (double l : lambda)
    if (!(l >= 0.0)) throw ConfigError("dual variables must be nonnegative");
  std::vector<double> w(lambda.begin(), lambda.end());
  w.back() += 1.0;
  return solve_weighted_partition(w, capacity, n_min);
}

}  // namespace pdcl
