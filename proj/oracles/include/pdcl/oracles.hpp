#pragma once

// Independent reference computations used to cross-check the library:
// exhaustive enumeration for the buffer partition and central finite
// differences for gradients. Nothing here calls the code it checks.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace pdcl::oracle {

struct BruteForcePartition {
  std::vector<std::size_t> n;
  double objective = 0.0;
};

// Enumerates every integer split of `capacity` into weights.size() parts
// >= n_min and returns the minimum of sum_k w_k sqrt(ln n_k / n_k).
BruteForcePartition brute_force_partition(std::span<const double> weights, std::size_t capacity, std::size_t n_min);

// Central differences of f at x with step h.
std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> x, double h);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6);

}  // namespace pdcl::oracle
