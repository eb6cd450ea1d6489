#pragma once

#include <cstdint>
#include <map>
#include <vector>

namespace pdcl {

// Task-level multipliers, one per seen task. Entries stay >= 0.
struct TaskDuals {
  std::vector<double> lambda;
};

// Per-sample multipliers keyed by example id, for the current task only.
struct SampleDuals {
  std::map<std::uint64_t, double> lambda;

  double at(std::uint64_t id) const {
    const auto it = lambda.find(id);
    return it == lambda.end() ? 0.0 : it->second;
  }
  bool all_zero() const {
    for (const auto& [id, l] : lambda)
      if (l != 0.0) return false;
    return true;
  }
};

}  // namespace pdcl
