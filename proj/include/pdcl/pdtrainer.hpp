#pragma once

// Primal-dual training of one task: T_p SGD steps on the empirical
// Lagrangian, then a full slack evaluation and projected dual ascent, repeated
// n_iter times. Also the unconstrained and experience-replay loops that share
// the same minibatch stream.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pdcl/buffer.hpp"
#include "pdcl/duals.hpp"
#include "pdcl/nncore.hpp"
#include "pdcl/random.hpp"
#include "pdcl/tasks.hpp"

namespace pdcl {

inline constexpr double kDefaultToleranceFactor = 1.15;
inline constexpr double kToleranceFloor = 1e-3;

struct Tolerances {
  std::vector<double> eps;  // one per seen task
  std::vector<double> m;    // unconstrained minima the eps were derived from
  double factor = kDefaultToleranceFactor;

  // Appends eps = max(factor * m_k, floor) for a newly seen task.
  void add_task(double m_k);
};

// eps_k = factor * m_k, floored at 1e-3. factor must exceed 1.
Tolerances set_tolerances(std::span<const double> m, double factor = kDefaultToleranceFactor);

struct TrainerConfig {
  double primal_lr = 0.001;
  double dual_lr = 0.05;
  std::size_t primal_steps = 10;  // T_p
  std::size_t dual_iters = 200;   // n_iter
  std::size_t minibatch = 32;
  double weight_decay = 1e-4;

  void validate() const;
};

enum class ConstraintMode { task_level, sample_level };

// Mean loss minus tolerance; positive means the constraint is violated.
double slack(const MlpSpec& spec, const ParamVector& theta, const Batch& data, double eps);

// [lambda + lr * s]_+
double dual_ascent(double lambda, double slack_value, double dual_lr);

// [lambda(x,y) + lr * (loss(x,y) - eps(x,y))]_+
double sample_dual_update(double lambda, double loss_value, double eps, double dual_lr);

struct TraceRecord {
  std::size_t task = 0;       // 0-based
  std::size_t iteration = 0;  // 1-based dual iteration
  std::vector<double> lambda;
  std::vector<double> slacks;
  double train_loss = 0.0;
};

using TraceSink = std::function<void(const TraceRecord&)>;

struct TrainOptions {
  ConstraintMode mode = ConstraintMode::task_level;
  // Include the current task in the constraint set. The first task of a
  // stream has nothing to protect and runs without it.
  bool constrain_current = true;
  std::uint64_t seed = 0;
  TraceSink trace;
};

struct TaskResult {
  ParamVector theta;
  TaskDuals duals;
  SampleDuals sample_duals;  // filled in sample_level mode
  std::vector<double> final_slacks;
};

// Runs the primal-dual loop on stream task `task`. Past tasks are
// constrained through their buffer slots; tolerances.eps must cover
// tasks 0..task. Throws DivergenceError on a non-finite loss.
TaskResult train_task(const MlpSpec& spec, const ParamVector& theta_init, const TaskStream& stream,
                      std::size_t task, const ReplayBuffer& buffer, const Tolerances& tolerances,
                      const TrainerConfig& cfg, const TrainOptions& options);

// n_iter * T_p plain SGD steps on the current task, with the same minibatch
// stream train_task uses. If `replay` is non-null and non-empty, each step
// also adds the mean-loss gradient of a minibatch drawn from the whole buffer.
ParamVector train_plain(const MlpSpec& spec, const ParamVector& theta_init, const TaskData& current,
                        std::size_t task, const TrainerConfig& cfg, std::uint64_t seed,
                        const ReplayBuffer* replay = nullptr);

}  // namespace pdcl
