#pragma once

// Replay buffer with per-task slots, the dual-weighted buffer partition, and
// the fill mechanisms (random, dual-ranked, ring, reservoir).

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pdcl/duals.hpp"
#include "pdcl/nncore.hpp"
#include "pdcl/tasks.hpp"

namespace pdcl {

// Smallest slot size for which sqrt(ln n / n) is decreasing.
inline constexpr std::size_t kDefaultMinSlot = 3;

struct BufferEntry {
  LabeledExample example;
  double lambda = 0.0;        // sample dual at storage time (0 if unknown)
  std::uint64_t arrival = 0;  // insertion order, for FIFO eviction
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const;
  std::size_t num_slots() const { return slots_.size(); }
  std::size_t count(std::size_t task) const { return task < slots_.size() ? slots_[task].size() : 0; }
  std::vector<std::size_t> counts() const;

  const std::vector<BufferEntry>& slot(std::size_t task) const;
  std::vector<BufferEntry>& mutable_slot(std::size_t task);
  std::vector<LabeledExample> slot_examples(std::size_t task) const;
  std::vector<LabeledExample> all_examples() const;

  // Items offered so far (N in reservoir sampling).
  std::uint64_t seen() const { return seen_; }
  void set_seen(std::uint64_t n) { seen_ = n; }
  std::uint64_t next_arrival() { return arrival_++; }

  // Capacity respected and every entry lives in its own task's slot.
  void validate() const;

  // Rows `task,id,label,lambda,feat_0,...` with 1-based task numbers.
  void write_csv(std::ostream& out) const;

 private:
  std::size_t capacity_;
  std::vector<std::vector<BufferEntry>> slots_;
  std::uint64_t seen_ = 0;
  std::uint64_t arrival_ = 0;
};

// sqrt(ln n / n); the constants of the uniform-convergence bound are dropped.
double zeta(std::size_t n);
// Continuous extension and its derivative, for the relaxed solver.
double zeta_continuous(double n);
double zeta_derivative(double n);

struct PartitionSolution {
  std::vector<std::size_t> n;
  double objective = 0.0;  // sum_k weight_k * zeta(n_k)
};

// Minimizes sum_k w_k zeta(n_k) over integers with sum n_k = capacity and
// n_k >= n_min, given raw weights w (no +1 adjustment). Requires n_min >= 3.
PartitionSolution solve_weighted_partition(std::span<const double> weights, std::size_t capacity,
                                           std::size_t n_min = kDefaultMinSlot);

// Buffer partition from task duals: the current (last) task's weight is
// lambda_t + 1 because its loss appears in both objective and constraints.
PartitionSolution solve_partition(std::span<const double> lambda, std::size_t capacity,
                                  std::size_t n_min = kDefaultMinSlot);

// Algorithm R. `total_seen` counts this item. Returns true if the item was stored.
bool reservoir_insert(ReplayBuffer& buf, const LabeledExample& example, std::uint64_t total_seen,
                      std::mt19937_64& rng);

// Class-wise FIFO with at most `per_class_quota` entries per class.
void ring_insert(ReplayBuffer& buf, const LabeledExample& example, std::size_t per_class_quota);

struct FillReport {
  std::vector<std::string> warnings;
};

// Resizes slot k to partition.n[k]. Past slots shrink by a uniform random
// subset; slot `task` is drawn class-balanced without replacement from the
// current training set. A past slot that would need to grow keeps its
// residents and the shortfall is taken from the current task instead.
FillReport fill_buffer_random(ReplayBuffer& buf, const TaskData& current, std::size_t task,
                              const PartitionSolution& partition, std::uint64_t seed);

// As fill_buffer_random, but ranks by sample dual: within each class the top
// `discard_quantile` fraction is dropped as likely outliers and the highest
// remaining duals are kept. Ties go to the lowest id. Past slots keep their
// highest-lambda residents. Falls back to random when every dual is zero.
FillReport fill_buffer_dual(ReplayBuffer& buf, const TaskData& current, std::size_t task,
                            const PartitionSolution& partition, const SampleDuals& duals,
                            double discard_quantile, std::uint64_t seed);

}  // namespace pdcl
