#include "pdcl/pdtrainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "pdcl/errors.hpp"

namespace pdcl {

void Tolerances::add_task(double m_k) {
  if (!(m_k >= 0.0) || !std::isfinite(m_k)) throw ConfigError("unconstrained minimum must be finite and >= 0");
  m.push_back(m_k);
  eps.push_back(std::max(factor * m_k, kToleranceFloor));
}

Tolerances set_tolerances(std::span<const double> m, double factor) {
  if (!(factor > 1.0)) throw ConfigError("tolerance factor must exceed 1");
  Tolerances tol;
  tol.factor = factor;
  for (double v : m) tol.add_task(v);
  return tol;
}

void TrainerConfig::validate() const {
  if (!(primal_lr > 0.0) || !(dual_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (primal_steps < 1 || dual_iters < 1) throw ConfigError("T_p and n_iter must be at least 1");
  if (minibatch < 1) throw ConfigError("minibatch size must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
}

double slack(const MlpSpec& spec, const ParamVector& theta, const Batch& data, double eps) {
  return loss_mean(spec, theta, data) - eps;
}

double dual_ascent(double lambda, double slack_value, double dual_lr) {
  return std::max(0.0, lambda + dual_lr * slack_value);
}

double sample_dual_update(double lambda, double loss_value, double eps, double dual_lr) {
  return std::max(0.0, lambda + dual_lr * (loss_value - eps));
}

namespace {

// Cycles through shuffled epochs of a fixed source batch.
class MinibatchSampler {
 public:
  MinibatchSampler(const Batch& source, std::size_t size, std::uint64_t seed)
      : source_(source), size_(std::min(size, source.size())), rng_(seed), order_(source.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();
    out_.x = Matrix(size_, source.x.cols);
    out_.y.resize(size_);
    out_.ids.resize(size_);
  }

  const Batch& next() {
    const std::size_t cols = source_.x.cols;
    for (std::size_t i = 0; i < size_; ++i) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      const std::size_t r = order_[cursor_++];
      std::copy_n(source_.x.data.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, out_.x.row(i).begin());
      out_.y[i] = source_.y[r];
      out_.ids[i] = source_.ids[r];
    }
    return out_;
  }

 private:
  const Batch& source_;
  std::size_t size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
  Batch out_;
};

enum Stream : std::uint64_t { kCurrent = 0, kReplay = 1, kConstraintBase = 16 };

void require_finite(double v, std::size_t task, std::size_t iter) {
  if (!std::isfinite(v))
    throw DivergenceError("non-finite loss on task " + std::to_string(task + 1) + " at dual iteration " +
                          std::to_string(iter) + "; lower the primal learning rate");
}

}  // namespace

TaskResult train_task(const MlpSpec& spec, const ParamVector& theta_init, const TaskStream& stream,
                      std::size_t task, const ReplayBuffer& buffer, const Tolerances& tolerances,
                      const TrainerConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (task >= stream.num_tasks()) throw ConfigError("task index beyond stream");
  if (tolerances.eps.size() < task + 1) throw ConfigError("tolerances must cover every task up to the current one");
  const auto& current = stream.tasks[task];
  if (current.train.empty()) throw ConfigError("current task has no training data");

  const Batch train = to_batch(current.train);
  std::vector<Batch> slots(task);
  for (std::size_t k = 0; k < task; ++k) slots[k] = to_batch(buffer.slot_examples(k));

  MinibatchSampler current_sampler(train, cfg.minibatch, derive_seed(options.seed, task, kCurrent));
  std::vector<MinibatchSampler> past_samplers;
  past_samplers.reserve(task);
  for (std::size_t k = 0; k < task; ++k)
    past_samplers.emplace_back(slots[k], cfg.minibatch, derive_seed(options.seed, task, kConstraintBase + k));

  const bool sample_level = options.mode == ConstraintMode::sample_level;
  TaskResult result;
  result.theta = theta_init;
  result.duals.lambda.assign(task + 1, 0.0);
  if (sample_level)
    for (auto id : train.ids) result.sample_duals.lambda[id] = 0.0;

  auto& theta = result.theta;
  auto& lambda = result.duals.lambda;
  ParamVector grad(spec.num_params());
  std::vector<double> weights;
  std::vector<double> slacks(task + 1, 0.0);
  const double eps_current = tolerances.eps[task];

  for (std::size_t iter = 1; iter <= cfg.dual_iters; ++iter) {
    for (std::size_t step = 0; step < cfg.primal_steps; ++step) {
      std::fill(grad.values.begin(), grad.values.end(), 0.0);
      const Batch& mb = current_sampler.next();
      // The current task is both objective and constraint: weight 1 + lambda_t,
      // plus the per-sample multipliers in sample-level mode.
      const double base = 1.0 + (options.constrain_current ? lambda[task] : 0.0);
      if (sample_level && options.constrain_current) {
        weights.resize(mb.size());
        for (std::size_t i = 0; i < mb.size(); ++i) weights[i] = base + result.sample_duals.lambda[mb.ids[i]];
        accumulate_loss_gradient(spec, theta, mb, weights, 1.0, grad);
      } else {
        accumulate_loss_gradient(spec, theta, mb, {}, base, grad);
      }
      for (std::size_t k = 0; k < task; ++k) {
        if (lambda[k] == 0.0 || slots[k].size() == 0) continue;
        accumulate_loss_gradient(spec, theta, past_samplers[k].next(), {}, lambda[k], grad);
      }
      sgd_step_inplace(theta, grad, cfg.primal_lr, cfg.weight_decay);
    }

    for (std::size_t k = 0; k < task; ++k)
      slacks[k] = slots[k].size() == 0 ? 0.0 : slack(spec, theta, slots[k], tolerances.eps[k]);
    const auto losses = per_sample_losses(spec, theta, train);
    double train_loss = 0.0;
    for (double l : losses) train_loss += l;
    train_loss /= static_cast<double>(losses.size());
    slacks[task] = train_loss - eps_current;
    require_finite(train_loss, task, iter);
    for (double s : slacks) require_finite(s, task, iter);

    for (std::size_t k = 0; k < task; ++k)
      if (slots[k].size() > 0) lambda[k] = dual_ascent(lambda[k], slacks[k], cfg.dual_lr);
    if (options.constrain_current) lambda[task] = dual_ascent(lambda[task], slacks[task], cfg.dual_lr);

    if (sample_level) {
      for (std::size_t i = 0; i < losses.size(); ++i) {
        auto& l = result.sample_duals.lambda[train.ids[i]];
        l = sample_dual_update(l, losses[i], eps_current, cfg.dual_lr);
      }
    }

    if (options.trace) options.trace(TraceRecord{task, iter, lambda, slacks, train_loss});
  }
  result.final_slacks = slacks;
  return result;
}

ParamVector train_plain(const MlpSpec& spec, const ParamVector& theta_init, const TaskData& current,
                        std::size_t task, const TrainerConfig& cfg, std::uint64_t seed, const ReplayBuffer* replay) {
  cfg.validate();
  if (current.train.empty()) throw ConfigError("current task has no training data");
  const Batch train = to_batch(current.train);
  MinibatchSampler current_sampler(train, cfg.minibatch, derive_seed(seed, task, kCurrent));
  Batch memory;
  if (replay != nullptr) memory = to_batch(replay->all_examples());
  const bool use_replay = memory.size() > 0;
  std::optional<MinibatchSampler> replay_sampler;
  if (use_replay) replay_sampler.emplace(memory, cfg.minibatch, derive_seed(seed, task, kReplay));

  ParamVector theta = theta_init;
  ParamVector grad(spec.num_params());
  for (std::size_t iter = 1; iter <= cfg.dual_iters; ++iter) {
    for (std::size_t step = 0; step < cfg.primal_steps; ++step) {
      std::fill(grad.values.begin(), grad.values.end(), 0.0);
      accumulate_loss_gradient(spec, theta, current_sampler.next(), {}, 1.0, grad);
      if (use_replay) accumulate_loss_gradient(spec, theta, replay_sampler->next(), {}, 1.0, grad);
      sgd_step_inplace(theta, grad, cfg.primal_lr, cfg.weight_decay);
    }
  }
  if (!theta.all_finite()) require_finite(std::nan(""), task, cfg.dual_iters);
  return theta;
}

}  // namespace pdcl
