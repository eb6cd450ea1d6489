#include "pdcl/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdcl::oracle {

namespace {

double log_ratio_root(std::size_t n) {
  const double x = static_cast<double>(n);
  return std::sqrt(std::log(x) / x);
}

void enumerate(std::span<const double> w, std::size_t k, std::size_t remaining, std::size_t n_min,
               std::vector<std::size_t>& current, double partial, BruteForcePartition& best, bool& found) {
  if (k + 1 == w.size()) {
    current[k] = remaining;
    const double value = partial + w[k] * log_ratio_root(remaining);
    if (!found || value < best.objective) {
      best.objective = value;
      best.n = current;
      found = true;
    }
    return;
  }
  const std::size_t reserve = (w.size() - k - 1) * n_min;
  for (std::size_t v = n_min; v + reserve <= remaining; ++v) {
    current[k] = v;
    enumerate(w, k + 1, remaining - v, n_min, current, partial + w[k] * log_ratio_root(v), best, found);
  }
}

}  // namespace

BruteForcePartition brute_force_partition(std::span<const double> weights, std::size_t capacity, std::size_t n_min) {
  if (weights.empty() || n_min == 0 || capacity < weights.size() * n_min)
    throw std::invalid_argument("brute_force_partition: infeasible instance");
  BruteForcePartition best;
  std::vector<std::size_t> current(weights.size());
  bool found = false;
  enumerate(weights, 0, capacity, n_min, current, 0.0, best, found);
  return best;
}

std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace pdcl::oracle
