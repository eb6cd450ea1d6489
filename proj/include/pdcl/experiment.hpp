#pragma once

// Experiment runner: method dispatch over a task stream, metrics, and the
// CSV artifacts of a run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdcl/buffer.hpp"
#include "pdcl/pdtrainer.hpp"
#include "pdcl/tasks.hpp"

namespace pdcl {

enum class Method { finetune, er_ring, er_reservoir, pdcl, pdcl_s };

const char* to_string(Method m);
Method parse_method(const std::string& name);

struct StreamConfig {
  std::string kind = "synthetic";  // "synthetic" or "csv"
  std::string csv_path;
  std::size_t tasks = 5;
  std::size_t classes_per_task = 2;
  // synthetic only
  std::size_t input_dim = 20;
  std::size_t samples_per_task = 1250;
  std::vector<double> separation{3.0};  // one value for every task, or one per task
  double noise = 1.0;
  double task_spread = 0.0;
  // csv only
  std::size_t per_class_cap = kNoCap;
  // Fraction of each class's training labels flipped to another class of the same task.
  double label_noise = 0.0;
  // Fixed stream seed; when unset the stream is drawn from the run seed.
  std::optional<std::uint64_t> stream_seed;
};

struct ExperimentConfig {
  StreamConfig stream;
  std::vector<std::size_t> hidden{32};
  Method method = Method::pdcl;
  std::size_t buffer_size = 500;
  std::size_t n_min = kDefaultMinSlot;
  double tolerance_factor = kDefaultToleranceFactor;
  double discard_quantile = 0.01;
  TrainerConfig trainer;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out_dir = "out";
  std::string run_id = "run";

  void validate() const;
};

// Flat JSON: keys mirror the fields above ("tasks", "method", "buffer_size",
// "primal_lr", "seeds", ...). Unknown keys are rejected.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

// a[t][k]: accuracy on task k after training task t (k <= t).
struct AccuracyMatrix {
  std::vector<std::vector<double>> cil;
  std::vector<std::vector<double>> til;
};

struct FinalMetrics {
  double average_accuracy = 0.0;
  double average_forgetting = 0.0;
};

// Mean of the last row; forgetting averages max_t a[t][k] - a[T][k] over k < T.
FinalMetrics final_metrics(const std::vector<std::vector<double>>& matrix);

struct PartitionRecord {
  std::size_t after_task = 0;  // 0-based
  std::vector<std::size_t> n;
  std::vector<double> lambda;
};

struct SeedResult {
  std::uint64_t seed = 0;
  AccuracyMatrix accuracy;
  std::vector<TraceRecord> traces;
  std::vector<PartitionRecord> partitions;
  std::vector<std::size_t> buffer_counts;  // after the last task
  SampleDuals last_sample_duals;           // pdcl_s, final task
  std::vector<std::string> warnings;
  std::optional<std::string> failure;
};

// Appends the ids of label-flipped training samples to `flipped` when given.
TaskStream build_stream(const StreamConfig& cfg, std::uint64_t seed, std::vector<std::uint64_t>* flipped = nullptr);

// Flips exactly round(fraction * class size) training labels per class of
// `task` to another class of that task. Returns the flipped ids.
std::vector<std::uint64_t> inject_label_noise(TaskStream& stream, std::size_t task, double fraction,
                                              std::uint64_t seed);

// Runs one seed end to end. Module errors are caught and stored in `failure`.
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);
SeedResult run_seed(const ExperimentConfig& cfg, const TaskStream& stream, std::uint64_t seed);

struct RunSummary {
  std::vector<SeedResult> seeds;
  std::filesystem::path directory;
  std::vector<std::string> violations;  // invariant checks that failed

  bool ok() const;
};

// All seeds; writes accuracy.csv, duals.csv, partition.csv, config.json
// (and failures.csv if any seed failed) under out_dir/run_id.
RunSummary run_experiment(const ExperimentConfig& cfg);

struct AblationRow {
  double factor = 0.0;
  std::uint64_t seed = 0;
  double final_error_cil = 0.0;
  double final_error_til = 0.0;
};

// One run per factor per seed; writes ablation.csv under out_dir/run_id.
std::vector<AblationRow> tolerance_ablation(const ExperimentConfig& cfg, const std::vector<double>& factors);

void write_accuracy_csv(std::ostream& out, const std::vector<SeedResult>& results);
void write_duals_csv(std::ostream& out, const std::vector<SeedResult>& results);
void write_partition_csv(std::ostream& out, const std::vector<SeedResult>& results);

}  // namespace pdcl
