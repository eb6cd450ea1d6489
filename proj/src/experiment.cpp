#include "pdcl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pdcl/errors.hpp"
#include "pdcl/random.hpp"

namespace pdcl {

using nlohmann::json;

const char* to_string(Method m) {
  switch (m) {
    case Method::finetune: return "finetune";
    case Method::er_ring: return "er_ring";
    case Method::er_reservoir: return "er_reservoir";
    case Method::pdcl: return "pdcl";
    case Method::pdcl_s: return "pdcl_s";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::finetune, Method::er_ring, Method::er_reservoir, Method::pdcl, Method::pdcl_s})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown method '" + name + "'");
}

namespace {
bool uses_partition(Method m) { return m == Method::pdcl || m == Method::pdcl_s; }
}  // namespace

void ExperimentConfig::validate() const {
  if (stream.kind != "synthetic" && stream.kind != "csv") throw ConfigError("stream must be 'synthetic' or 'csv'");
  if (stream.kind == "csv" && stream.csv_path.empty()) throw ConfigError("csv stream needs csv_path");
  if (stream.tasks < 1) throw ConfigError("tasks must be >= 1");
  if (stream.separation.size() != 1 && stream.separation.size() != stream.tasks)
    throw ConfigError("separation needs one value or one per task");
  if (stream.label_noise < 0.0 || stream.label_noise >= 0.5) throw ConfigError("label_noise must lie in [0, 0.5)");
  if (uses_partition(method) && buffer_size < stream.tasks * n_min)
    throw ConfigError("buffer_size must be at least tasks * n_min for partition methods");
  if (!(tolerance_factor > 1.0)) throw ConfigError("tolerance_factor must exceed 1");
  if (seeds.empty()) throw ConfigError("need at least one seed");
  trainer.validate();
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  static const char* const kKeys[] = {
      "stream",      "csv_path",    "tasks",       "classes_per_task", "input_dim",        "samples_per_task",
      "separation",  "noise",       "task_spread", "per_class_cap",    "label_noise",      "stream_seed",
      "hidden",      "method",      "buffer_size", "n_min",            "tolerance_factor", "discard_quantile",
      "primal_lr",   "dual_lr",     "primal_steps", "dual_iters",      "minibatch",        "weight_decay",
      "seeds",       "out_dir",     "run_id"};
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) == std::end(kKeys))
      throw ConfigError("unknown config key '" + key + "'");

  ExperimentConfig cfg;
  try {
    auto& s = cfg.stream;
    read(j, "stream", s.kind);
    read(j, "csv_path", s.csv_path);
    read(j, "tasks", s.tasks);
    read(j, "classes_per_task", s.classes_per_task);
    read(j, "input_dim", s.input_dim);
    read(j, "samples_per_task", s.samples_per_task);
    if (j.contains("separation")) {
      const auto& v = j.at("separation");
      s.separation = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
    }
    read(j, "noise", s.noise);
    read(j, "task_spread", s.task_spread);
    if (j.contains("per_class_cap") && !j.at("per_class_cap").is_null())
      s.per_class_cap = j.at("per_class_cap").get<std::size_t>();
    read(j, "label_noise", s.label_noise);
    if (j.contains("stream_seed") && !j.at("stream_seed").is_null())
      s.stream_seed = j.at("stream_seed").get<std::uint64_t>();
    read(j, "hidden", cfg.hidden);
    if (j.contains("method")) cfg.method = parse_method(j.at("method").get<std::string>());
    read(j, "buffer_size", cfg.buffer_size);
    read(j, "n_min", cfg.n_min);
    read(j, "tolerance_factor", cfg.tolerance_factor);
    read(j, "discard_quantile", cfg.discard_quantile);
    read(j, "primal_lr", cfg.trainer.primal_lr);
    read(j, "dual_lr", cfg.trainer.dual_lr);
    read(j, "primal_steps", cfg.trainer.primal_steps);
    read(j, "dual_iters", cfg.trainer.dual_iters);
    read(j, "minibatch", cfg.trainer.minibatch);
    read(j, "weight_decay", cfg.trainer.weight_decay);
    read(j, "seeds", cfg.seeds);
    read(j, "out_dir", cfg.out_dir);
    read(j, "run_id", cfg.run_id);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  const auto& s = cfg.stream;
  j["stream"] = s.kind;
  if (!s.csv_path.empty()) j["csv_path"] = s.csv_path;
  j["tasks"] = s.tasks;
  j["classes_per_task"] = s.classes_per_task;
  j["input_dim"] = s.input_dim;
  j["samples_per_task"] = s.samples_per_task;
  j["separation"] = s.separation;
  j["noise"] = s.noise;
  j["task_spread"] = s.task_spread;
  j["per_class_cap"] = s.per_class_cap == kNoCap ? json(nullptr) : json(s.per_class_cap);
  j["label_noise"] = s.label_noise;
  j["stream_seed"] = s.stream_seed ? json(*s.stream_seed) : json(nullptr);
  j["hidden"] = cfg.hidden;
  j["method"] = to_string(cfg.method);
  j["buffer_size"] = cfg.buffer_size;
  j["n_min"] = cfg.n_min;
  j["tolerance_factor"] = cfg.tolerance_factor;
  j["discard_quantile"] = cfg.discard_quantile;
  j["primal_lr"] = cfg.trainer.primal_lr;
  j["dual_lr"] = cfg.trainer.dual_lr;
  j["primal_steps"] = cfg.trainer.primal_steps;
  j["dual_iters"] = cfg.trainer.dual_iters;
  j["minibatch"] = cfg.trainer.minibatch;
  j["weight_decay"] = cfg.trainer.weight_decay;
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  j["run_id"] = cfg.run_id;
  return j.dump(2) + "\n";
}

FinalMetrics final_metrics(const std::vector<std::vector<double>>& matrix) {
  FinalMetrics m;
  if (matrix.empty()) return m;
  const auto& last = matrix.back();
  for (double a : last) m.average_accuracy += a;
  m.average_accuracy /= static_cast<double>(last.size());
  const std::size_t T = matrix.size();
  if (T < 2) return m;
  for (std::size_t k = 0; k + 1 < T; ++k) {
    double best = 0.0;
    for (std::size_t t = k; t < T; ++t) best = std::max(best, matrix[t][k]);
    m.average_forgetting += best - last[k];
  }
  m.average_forgetting /= static_cast<double>(T - 1);
  return m;
}

TaskStream build_stream(const StreamConfig& cfg, std::uint64_t seed, std::vector<std::uint64_t>* flipped) {
  const std::uint64_t stream_seed = cfg.stream_seed.value_or(derive_seed(seed, 0x5eed));
  TaskStream stream;
  if (cfg.kind == "csv") {
    stream = make_split_stream(cfg.csv_path, cfg.tasks, cfg.classes_per_task, cfg.per_class_cap, stream_seed);
  } else {
    DifficultyProfile profile;
    profile.separation = cfg.separation.size() == 1 ? std::vector<double>(cfg.tasks, cfg.separation[0]) : cfg.separation;
    profile.samples.assign(cfg.tasks, cfg.samples_per_task);
    profile.noise = cfg.noise;
    profile.task_spread = cfg.task_spread;
    stream = make_synthetic_stream(cfg.tasks, profile, cfg.input_dim, cfg.classes_per_task, stream_seed);
  }
  if (cfg.label_noise > 0.0)
    for (std::size_t t = 0; t < stream.num_tasks(); ++t) {
      const auto ids = inject_label_noise(stream, t, cfg.label_noise, derive_seed(stream_seed, 0xf11b, t));
      if (flipped) flipped->insert(flipped->end(), ids.begin(), ids.end());
    }
  return stream;
}

std::vector<std::uint64_t> inject_label_noise(TaskStream& stream, std::size_t task, double fraction,
                                              std::uint64_t seed) {
  if (task >= stream.tasks.size()) throw ConfigError("label noise: task index out of range");
  if (fraction < 0.0 || fraction >= 0.5) throw ConfigError("label noise fraction must lie in [0, 0.5)");
  auto& data = stream.tasks[task];
  if (data.classes.size() < 2) throw ConfigError("label noise needs at least two classes");
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> flipped;
  // Choose victims per true class before relabeling anything.
  std::vector<std::pair<LabeledExample*, int>> plan;
  for (int c : data.classes) {
    std::vector<LabeledExample*> members;
    for (auto& e : data.train)
      if (e.y == c) members.push_back(&e);
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    std::shuffle(members.begin(), members.end(), rng);
    std::uniform_int_distribution<std::size_t> other(0, data.classes.size() - 2);
    for (std::size_t i = 0; i < count && i < members.size(); ++i) {
      std::size_t pick = other(rng);
      if (data.classes[pick] >= c) ++pick;  // skip the true class
      plan.emplace_back(members[i], data.classes[pick]);
    }
  }
  for (auto& [e, label] : plan) {
    e->y = label;
    flipped.push_back(e->id);
  }
  std::sort(flipped.begin(), flipped.end());
  return flipped;
}

namespace {

enum SeedStream : std::uint64_t { kInit = 1, kTrain = 2, kFill = 3, kInsert = 4 };

void record_accuracy(const MlpSpec& spec, const ParamVector& theta, const TaskStream& stream, std::size_t t,
                     AccuracyMatrix& acc) {
  acc.cil.push_back(evaluate(spec, theta, stream, t + 1, EvalMode::cil));
  acc.til.push_back(evaluate(spec, theta, stream, t + 1, EvalMode::til));
}

void insert_task_into_buffer(Method method, ReplayBuffer& buffer, const TaskStream& stream, std::size_t t,
                             std::mt19937_64& rng) {
  std::vector<const LabeledExample*> order;
  for (const auto& e : stream.tasks[t].train) order.push_back(&e);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t classes_seen = 0;
  for (std::size_t k = 0; k <= t; ++k) classes_seen += stream.tasks[k].classes.size();
  for (const auto* e : order) {
    if (method == Method::er_ring) {
      ring_insert(buffer, *e, buffer.capacity() / classes_seen);
    } else {
      reservoir_insert(buffer, *e, buffer.seen() + 1, rng);
    }
  }
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedResult result;
  result.seed = seed;
  try {
    const auto stream = build_stream(cfg.stream, seed);
    return run_seed(cfg, stream, seed);
  } catch (const std::exception& e) {
    result.failure = e.what();
  }
  return result;
}

SeedResult run_seed(const ExperimentConfig& cfg, const TaskStream& stream, std::uint64_t seed) {
  SeedResult result;
  result.seed = seed;
  try {
    cfg.validate();
    stream.validate();
    MlpSpec spec;
    spec.layer_widths.push_back(stream.input_dim);
    for (auto h : cfg.hidden) spec.layer_widths.push_back(h);
    spec.layer_widths.push_back(stream.num_classes);
    spec.seed = derive_seed(seed, kInit);

    ParamVector theta = init_params(spec);
    ReplayBuffer buffer(cfg.buffer_size);
    Tolerances tolerances;
    tolerances.factor = cfg.tolerance_factor;
    std::mt19937_64 insert_rng(derive_seed(seed, kInsert));
    const std::uint64_t train_seed = derive_seed(seed, kTrain);

    for (std::size_t t = 0; t < stream.num_tasks(); ++t) {
      const auto& current = stream.tasks[t];
      switch (cfg.method) {
        case Method::finetune:
          theta = train_plain(spec, theta, current, t, cfg.trainer, train_seed);
          break;
        case Method::er_ring:
        case Method::er_reservoir:
          theta = train_plain(spec, theta, current, t, cfg.trainer, train_seed, &buffer);
          insert_task_into_buffer(cfg.method, buffer, stream, t, insert_rng);
          break;
        case Method::pdcl:
        case Method::pdcl_s: {
          // m_t: final training loss of an unconstrained run from the same start.
          const ParamVector pilot = train_plain(spec, theta, current, t, cfg.trainer, train_seed);
          tolerances.add_task(loss_mean(spec, pilot, to_batch(current.train)));

          TrainOptions opts;
          opts.mode = cfg.method == Method::pdcl_s ? ConstraintMode::sample_level : ConstraintMode::task_level;
          opts.constrain_current = t > 0;
          opts.seed = train_seed;
          opts.trace = [&](const TraceRecord& r) { result.traces.push_back(r); };
          auto trained = train_task(spec, theta, stream, t, buffer, tolerances, cfg.trainer, opts);
          theta = std::move(trained.theta);

          const auto partition = solve_partition(trained.duals.lambda, cfg.buffer_size, cfg.n_min);
          result.partitions.push_back({t, partition.n, trained.duals.lambda});
          const auto fill_seed = derive_seed(seed, kFill, t);
          const auto report =
              cfg.method == Method::pdcl
                  ? fill_buffer_random(buffer, current, t, partition, fill_seed)
                  : fill_buffer_dual(buffer, current, t, partition, trained.sample_duals, cfg.discard_quantile,
                                     fill_seed);
          for (const auto& w : report.warnings)
            result.warnings.push_back("task " + std::to_string(t + 1) + ": " + w);
          if (cfg.method == Method::pdcl_s) result.last_sample_duals = std::move(trained.sample_duals);
          break;
        }
      }
      buffer.validate();
      record_accuracy(spec, theta, stream, t, result.accuracy);
    }
    result.buffer_counts = buffer.counts();
  } catch (const std::exception& e) {
    result.failure = e.what();
  }
  return result;
}

bool RunSummary::ok() const {
  if (!violations.empty()) return false;
  return std::none_of(seeds.begin(), seeds.end(), [](const auto& s) { return s.failure.has_value(); });
}

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_accuracy_csv(std::ostream& out, const std::vector<SeedResult>& results) {
  out << "seed,after_task,eval_task,mode,accuracy\n";
  for (const auto& r : results) {
    for (const auto* mode : {&r.accuracy.cil, &r.accuracy.til}) {
      const char* name = mode == &r.accuracy.cil ? "CIL" : "TIL";
      for (std::size_t t = 0; t < mode->size(); ++t)
        for (std::size_t k = 0; k < (*mode)[t].size(); ++k)
          out << r.seed << ',' << t + 1 << ',' << k + 1 << ',' << name << ',' << fmt((*mode)[t][k]) << '\n';
    }
  }
}

void write_duals_csv(std::ostream& out, const std::vector<SeedResult>& results) {
  out << "seed,task,iter,k,lambda,slack\n";
  for (const auto& r : results)
    for (const auto& tr : r.traces)
      for (std::size_t k = 0; k < tr.lambda.size(); ++k)
        out << r.seed << ',' << tr.task + 1 << ',' << tr.iteration << ',' << k + 1 << ',' << fmt(tr.lambda[k]) << ','
            << fmt(tr.slacks[k]) << '\n';
}

void write_partition_csv(std::ostream& out, const std::vector<SeedResult>& results) {
  out << "seed,after_task,k,n_k,lambda_k\n";
  for (const auto& r : results)
    for (const auto& p : r.partitions)
      for (std::size_t k = 0; k < p.n.size(); ++k)
        out << r.seed << ',' << p.after_task + 1 << ',' << k + 1 << ',' << p.n[k] << ',' << fmt(p.lambda[k]) << '\n';
}

namespace {

std::filesystem::path run_directory(const ExperimentConfig& cfg) {
  std::filesystem::path dir = std::filesystem::path(cfg.out_dir) / cfg.run_id;
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  writer(out);
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RunSummary summary;
  for (auto seed : cfg.seeds) summary.seeds.push_back(run_seed(cfg, seed));

  for (const auto& r : summary.seeds) {
    if (r.failure) continue;
    for (const auto& p : r.partitions) {
      std::size_t total = 0;
      for (auto n : p.n) {
        total += n;
        if (n < cfg.n_min)
          summary.violations.push_back("seed " + std::to_string(r.seed) + ": partition entry below n_min");
      }
      if (total != cfg.buffer_size)
        summary.violations.push_back("seed " + std::to_string(r.seed) + ": partition does not fill the buffer");
    }
    const double cil = final_metrics(r.accuracy.cil).average_accuracy;
    const double til = final_metrics(r.accuracy.til).average_accuracy;
    if (til < cil) summary.violations.push_back("seed " + std::to_string(r.seed) + ": TIL accuracy below CIL");
  }

  summary.directory = run_directory(cfg);
  write_file(summary.directory / "config.json", [&](std::ostream& o) { o << config_to_json(cfg); });
  write_file(summary.directory / "accuracy.csv", [&](std::ostream& o) { write_accuracy_csv(o, summary.seeds); });
  write_file(summary.directory / "duals.csv", [&](std::ostream& o) { write_duals_csv(o, summary.seeds); });
  write_file(summary.directory / "partition.csv", [&](std::ostream& o) { write_partition_csv(o, summary.seeds); });
  const bool any_failure =
      std::any_of(summary.seeds.begin(), summary.seeds.end(), [](const auto& s) { return s.failure.has_value(); });
  if (any_failure) {
    write_file(summary.directory / "failures.csv", [&](std::ostream& o) {
      o << "seed,error\n";
      for (const auto& r : summary.seeds) {
        if (!r.failure) continue;
        std::string msg = *r.failure;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        o << r.seed << ',' << msg << '\n';
      }
    });
  }
  return summary;
}

std::vector<AblationRow> tolerance_ablation(const ExperimentConfig& cfg, const std::vector<double>& factors) {
  if (factors.empty()) throw ConfigError("ablation needs at least one factor");
  std::vector<AblationRow> rows;
  for (double factor : factors) {
    ExperimentConfig run = cfg;
    run.tolerance_factor = factor;
    run.validate();
    for (auto seed : cfg.seeds) {
      const auto r = run_seed(run, seed);
      if (r.failure) throw std::runtime_error("factor " + fmt(factor) + " seed " + std::to_string(seed) + ": " + *r.failure);
      rows.push_back({factor, seed, 1.0 - final_metrics(r.accuracy.cil).average_accuracy,
                      1.0 - final_metrics(r.accuracy.til).average_accuracy});
    }
  }
  const auto dir = run_directory(cfg);
  write_file(dir / "ablation.csv", [&](std::ostream& o) {
    o << "factor,seed,mode,final_error\n";
    for (const auto& r : rows) {
      o << fmt(r.factor) << ',' << r.seed << ",CIL," << fmt(r.final_error_cil) << '\n';
      o << fmt(r.factor) << ',' << r.seed << ",TIL," << fmt(r.final_error_til) << '\n';
    }
  });
  return rows;
}

}  // namespace pdcl
