#include "pdcl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "pdcl/errors.hpp"

namespace pdcl {

bool TaskData::has_class(int label) const {
  return std::binary_search(classes.begin(), classes.end(), label);
}

void TaskStream::validate() const {
  if (tasks.empty()) throw ConfigError("task stream is empty");
  std::set<int> all;
  std::unordered_set<std::uint64_t> ids;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (int c : tasks[t].classes) {
      if (!all.insert(c).second) throw ConfigError("class " + std::to_string(c) + " appears in two tasks");
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw ConfigError("class index out of range");
    }
    for (const auto* split : {&tasks[t].train, &tasks[t].test}) {
      for (const auto& e : *split) {
        if (!tasks[t].has_class(e.y)) throw ConfigError("example label outside its task's class set");
        if (e.task != t) throw ConfigError("example task index mismatch");
        if (e.x.size() != input_dim) throw DimensionError("example feature dimension mismatch");
        if (!ids.insert(e.id).second) throw ConfigError("duplicate example id " + std::to_string(e.id));
      }
    }
  }
}

DifficultyProfile DifficultyProfile::uniform(std::size_t tasks, double separation, std::size_t samples,
                                             double noise) {
  DifficultyProfile p;
  p.separation.assign(tasks, separation);
  p.samples.assign(tasks, samples);
  p.noise = noise;
  return p;
}

void DifficultyProfile::validate(std::size_t tasks) const {
  if (separation.size() != tasks || samples.size() != tasks)
    throw ConfigError("difficulty profile must have one entry per task");
  for (double s : separation)
    if (!(s > 0.0)) throw ConfigError("class separation must be positive");
  for (auto n : samples)
    if (n < 10) throw ConfigError("each task needs at least 10 samples");
  if (!(noise > 0.0)) throw ConfigError("noise level must be positive");
  if (!(task_spread >= 0.0)) throw ConfigError("task spread must be nonnegative");
}

namespace {

// Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (auto& c : v) c = normal(rng);
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    double norm = 0.0;
    for (double c : v) norm += c * c;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& c : v) c /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

std::size_t train_share(std::size_t n) {
  const auto k = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, n > 1 ? 1 : n, n > 1 ? n - 1 : n);
}

}  // namespace

TaskStream make_synthetic_stream(std::size_t tasks, const DifficultyProfile& profile, std::size_t input_dim,
                                 std::size_t classes_per_task, std::uint64_t seed) {
  if (tasks < 1) throw ConfigError("need at least one task");
  if (classes_per_task < 2) throw ConfigError("need at least two classes per task");
  if (input_dim < classes_per_task) throw ConfigError("input_dim must be at least classes_per_task");
  profile.validate(tasks);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, profile.noise);
  TaskStream stream;
  stream.input_dim = input_dim;
  stream.num_classes = tasks * classes_per_task;
  std::uint64_t next_id = 0;

  for (std::size_t t = 0; t < tasks; ++t) {
    TaskData data;
    const auto center = random_orthonormal(1, input_dim, rng)[0];
    const auto dirs = random_orthonormal(classes_per_task, input_dim, rng);
    // |r e_i - r e_j| = r sqrt(2) for orthonormal e_i, e_j
    const double radius = profile.separation[t] / std::sqrt(2.0);
    const std::size_t n = profile.samples[t];
    for (std::size_t c = 0; c < classes_per_task; ++c) {
      const int label = static_cast<int>(t * classes_per_task + c);
      data.classes.push_back(label);
      const std::size_t count = n / classes_per_task + (c < n % classes_per_task ? 1 : 0);
      const std::size_t n_train = train_share(count);
      for (std::size_t i = 0; i < count; ++i) {
        LabeledExample e;
        e.id = next_id++;
        e.y = label;
        e.task = t;
        e.x.resize(input_dim);
        for (std::size_t d = 0; d < input_dim; ++d) e.x[d] = profile.task_spread * center[d] + radius * dirs[c][d] + normal(rng);
        (i < n_train ? data.train : data.test).push_back(std::move(e));
      }
    }
    std::shuffle(data.train.begin(), data.train.end(), rng);
    std::shuffle(data.test.begin(), data.test.end(), rng);
    stream.tasks.push_back(std::move(data));
  }
  return stream;
}

namespace {

double parse_double(std::string_view field, std::size_t line) {
  // from_chars for double is not available everywhere; strtod on a copy.
  std::string s(field);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
  std::size_t start = s.find_first_not_of(" \t");
  if (s.empty() || start == std::string::npos) throw ParseError("empty field", line);
  char* end = nullptr;
  const double v = std::strtod(s.c_str() + start, &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) throw ParseError("bad number '" + s + "'", line);
  return v;
}

}  // namespace

TaskStream make_split_stream(std::istream& csv, std::size_t tasks, std::size_t classes_per_task,
                             std::size_t per_class_cap, std::uint64_t seed) {
  if (tasks < 1) throw ConfigError("need at least one task");
  if (classes_per_task < 1) throw ConfigError("need at least one class per task");

  std::map<long, std::vector<std::vector<double>>> rows_by_label;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() < 2) throw ParseError("row needs a label and at least one feature", line_no);
    const double label_value = parse_double(fields[0], line_no);
    if (label_value < 0 || label_value != std::floor(label_value))
      throw ParseError("label must be a nonnegative integer", line_no);
    std::vector<double> x;
    x.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i) x.push_back(parse_double(fields[i], line_no));
    if (dim == 0) dim = x.size();
    if (x.size() != dim)
      throw ParseError("expected " + std::to_string(dim) + " features, got " + std::to_string(x.size()), line_no);
    rows_by_label[static_cast<long>(label_value)].push_back(std::move(x));
  }
  const std::size_t needed = tasks * classes_per_task;
  if (rows_by_label.size() < needed)
    throw ConfigError("file has " + std::to_string(rows_by_label.size()) + " classes, stream needs " +
                      std::to_string(needed));

  std::mt19937_64 rng(seed);
  TaskStream stream;
  stream.input_dim = dim;
  stream.num_classes = needed;
  stream.tasks.resize(tasks);
  std::uint64_t next_id = 0;
  std::size_t rank = 0;
  for (auto& [raw_label, rows] : rows_by_label) {
    if (rank >= needed) break;
    const std::size_t t = rank / classes_per_task;
    const int label = static_cast<int>(rank);
    auto& data = stream.tasks[t];
    data.classes.push_back(label);
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = rows.size() > 1 ? train_share(rows.size()) : rows.size();
    for (std::size_t i = 0; i < order.size(); ++i) {
      const bool is_train = i < n_train;
      if (is_train && i >= per_class_cap) continue;
      LabeledExample e;
      e.id = next_id++;
      e.x = rows[order[i]];
      e.y = label;
      e.task = t;
      (is_train ? data.train : data.test).push_back(std::move(e));
    }
    ++rank;
  }
  for (auto& data : stream.tasks) {
    std::shuffle(data.train.begin(), data.train.end(), rng);
    std::shuffle(data.test.begin(), data.test.end(), rng);
  }
  return stream;
}

TaskStream make_split_stream(const std::string& csv_path, std::size_t tasks, std::size_t classes_per_task,
                             std::size_t per_class_cap, std::uint64_t seed) {
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot open dataset " + csv_path);
  return make_split_stream(in, tasks, classes_per_task, per_class_cap, seed);
}

Batch to_batch(std::span<const LabeledExample> examples) {
  Batch b;
  const std::size_t dim = examples.empty() ? 0 : examples.front().x.size();
  b.x = Matrix(examples.size(), dim);
  b.y.reserve(examples.size());
  b.ids.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].x.size() != dim) throw DimensionError("examples have mixed feature dimensions");
    std::copy(examples[i].x.begin(), examples[i].x.end(), b.x.row(i).begin());
    b.y.push_back(examples[i].y);
    b.ids.push_back(examples[i].id);
  }
  return b;
}

const char* to_string(EvalMode mode) { return mode == EvalMode::cil ? "CIL" : "TIL"; }

double accuracy(const MlpSpec& spec, const ParamVector& theta, std::span<const LabeledExample> examples,
                std::span<const int> classes, EvalMode mode) {
  if (examples.empty()) return 0.0;
  const Matrix logits = forward(spec, theta, to_batch(examples).x);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto z = logits.row(r);
    int best = -1;
    double best_z = 0.0;
    auto consider = [&](int k) {
      if (best < 0 || z[static_cast<std::size_t>(k)] > best_z) {
        best = k;
        best_z = z[static_cast<std::size_t>(k)];
      }
    };
    if (mode == EvalMode::til) {
      for (int k : classes) consider(k);  // classes ascending -> lowest index wins ties
    } else {
      for (std::size_t k = 0; k < z.size(); ++k) consider(static_cast<int>(k));
    }
    if (best == examples[r].y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::vector<double> evaluate(const MlpSpec& spec, const ParamVector& theta, const TaskStream& stream,
                             std::size_t upto_task, EvalMode mode) {
  if (upto_task > stream.num_tasks()) throw ConfigError("upto_task exceeds stream length");
  std::vector<double> acc;
  acc.reserve(upto_task);
  for (std::size_t t = 0; t < upto_task; ++t)
    acc.push_back(accuracy(spec, theta, stream.tasks[t].test, stream.tasks[t].classes, mode));
  return acc;
}

}  // namespace pdcl
