#pragma once

// Sequential task streams with disjoint class sets, and CIL/TIL evaluation.

#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pdcl/nncore.hpp"

namespace pdcl {

struct LabeledExample {
  std::uint64_t id = 0;
  std::vector<double> x;
  int y = 0;
  std::size_t task = 0;  // 0-based
};

struct TaskData {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  std::vector<int> classes;  // ascending

  bool has_class(int label) const;
};

struct TaskStream {
  std::vector<TaskData> tasks;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;

  std::size_t num_tasks() const { return tasks.size(); }
  // Disjoint class sets, labels inside their task, unique ids.
  void validate() const;
};

struct DifficultyProfile {
  std::vector<double> separation;     // per task: distance between class means
  std::vector<std::size_t> samples;   // per task: train + test examples
  double noise = 1.0;                 // per-coordinate standard deviation
  double task_spread = 0.0;           // distance of each task's center from the origin

  // Same separation and count for every task.
  static DifficultyProfile uniform(std::size_t tasks, double separation, std::size_t samples, double noise);
  void validate(std::size_t tasks) const;
};

// Isotropic Gaussian blobs. Class means of task t sit on orthonormal random
// directions, pairwise `separation[t]` apart, around a task center drawn at
// distance task_spread from the origin. Task t owns labels
// [t*cpt, (t+1)*cpt). Each class is split 80/20 into train/test.
TaskStream make_synthetic_stream(std::size_t tasks, const DifficultyProfile& profile, std::size_t input_dim,
                                 std::size_t classes_per_task, std::uint64_t seed);

inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

// Header-free CSV rows `label,feat_0,...`. Distinct labels are ranked ascending
// and assigned to tasks in blocks of classes_per_task; surplus classes are
// dropped. Each class is split 80/20, then its training rows are capped.
TaskStream make_split_stream(const std::string& csv_path, std::size_t tasks, std::size_t classes_per_task,
                             std::size_t per_class_cap, std::uint64_t seed);
TaskStream make_split_stream(std::istream& csv, std::size_t tasks, std::size_t classes_per_task,
                             std::size_t per_class_cap, std::uint64_t seed);

Batch to_batch(std::span<const LabeledExample> examples);

enum class EvalMode { cil, til };

const char* to_string(EvalMode mode);

// Accuracy on the test sets of tasks [0, upto_task). Ties go to the lowest class index.
std::vector<double> evaluate(const MlpSpec& spec, const ParamVector& theta, const TaskStream& stream,
                             std::size_t upto_task, EvalMode mode);

// Accuracy of a single test set under the given mode, masking to `classes` for TIL.
double accuracy(const MlpSpec& spec, const ParamVector& theta, std::span<const LabeledExample> examples,
                std::span<const int> classes, EvalMode mode);

}  // namespace pdcl
