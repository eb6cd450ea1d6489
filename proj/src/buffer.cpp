#include "pdcl/buffer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

#include "pdcl/errors.hpp"

namespace pdcl {

std::size_t ReplayBuffer::size() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.size();
  return n;
}

std::vector<std::size_t> ReplayBuffer::counts() const {
  std::vector<std::size_t> c;
  for (const auto& s : slots_) c.push_back(s.size());
  return c;
}

const std::vector<BufferEntry>& ReplayBuffer::slot(std::size_t task) const {
  static const std::vector<BufferEntry> empty;
  return task < slots_.size() ? slots_[task] : empty;
}

std::vector<BufferEntry>& ReplayBuffer::mutable_slot(std::size_t task) {
  if (task >= slots_.size()) slots_.resize(task + 1);
  return slots_[task];
}

std::vector<LabeledExample> ReplayBuffer::slot_examples(std::size_t task) const {
  std::vector<LabeledExample> out;
  for (const auto& e : slot(task)) out.push_back(e.example);
  return out;
}

std::vector<LabeledExample> ReplayBuffer::all_examples() const {
  std::vector<LabeledExample> out;
  for (const auto& s : slots_)
    for (const auto& e : s) out.push_back(e.example);
  return out;
}

void ReplayBuffer::validate() const {
  if (size() > capacity_) throw std::logic_error("replay buffer over capacity");
  for (std::size_t k = 0; k < slots_.size(); ++k)
    for (const auto& e : slots_[k])
      if (e.example.task != k) throw std::logic_error("buffer entry stored in the wrong task slot");
}

void ReplayBuffer::write_csv(std::ostream& out) const {
  char buf[64];
  for (std::size_t k = 0; k < slots_.size(); ++k) {
    for (const auto& e : slots_[k]) {
      out << (k + 1) << ',' << e.example.id << ',' << e.example.y << ',';
      std::snprintf(buf, sizeof buf, "%.10g", e.lambda);
      out << buf;
      for (double v : e.example.x) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

bool reservoir_insert(ReplayBuffer& buf, const LabeledExample& example, std::uint64_t total_seen,
                      std::mt19937_64& rng) {
  if (total_seen == 0) throw std::invalid_argument("reservoir_insert: total_seen must be >= 1");
  buf.set_seen(total_seen);
  if (buf.capacity() == 0) return false;
  if (buf.size() < buf.capacity()) {
    buf.mutable_slot(example.task).push_back({example, 0.0, buf.next_arrival()});
    return true;
  }
  // Keep with probability |B| / N, evicting a uniformly random resident.
  std::uniform_int_distribution<std::uint64_t> pick(0, total_seen - 1);
  const std::uint64_t j = pick(rng);
  if (j >= buf.capacity()) return false;
  std::size_t idx = static_cast<std::size_t>(j);
  for (std::size_t k = 0; k < buf.num_slots(); ++k) {
    auto& s = buf.mutable_slot(k);
    if (idx < s.size()) {
      s.erase(s.begin() + static_cast<std::ptrdiff_t>(idx));
      break;
    }
    idx -= s.size();
  }
  buf.mutable_slot(example.task).push_back({example, 0.0, buf.next_arrival()});
  return true;
}

void ring_insert(ReplayBuffer& buf, const LabeledExample& example, std::size_t per_class_quota) {
  if (per_class_quota == 0) return;
  buf.mutable_slot(example.task).push_back({example, 0.0, buf.next_arrival()});
  // Quotas shrink as classes arrive, so trim every class, oldest first.
  for (std::size_t k = 0; k < buf.num_slots(); ++k) {
    auto& s = buf.mutable_slot(k);
    std::map<int, std::size_t> per_class;
    for (const auto& e : s) ++per_class[e.example.y];
    for (auto& [label, count] : per_class) {
      while (count > per_class_quota) {
        auto oldest = s.end();
        for (auto it = s.begin(); it != s.end(); ++it)
          if (it->example.y == label && (oldest == s.end() || it->arrival < oldest->arrival)) oldest = it;
        s.erase(oldest);
        --count;
      }
    }
  }
}

namespace {

// Splits `total` across classes as evenly as availability allows; extra
// units go to the lowest class indices first.
std::vector<std::size_t> class_quotas(std::size_t total, const std::vector<std::size_t>& available) {
  std::vector<std::size_t> q(available.size(), 0);
  std::size_t remaining = total;
  while (remaining > 0) {
    std::size_t open = 0;
    for (std::size_t c = 0; c < q.size(); ++c)
      if (q[c] < available[c]) ++open;
    if (open == 0) break;
    const std::size_t share = std::max<std::size_t>(1, remaining / open);
    for (std::size_t c = 0; c < q.size() && remaining > 0; ++c) {
      const std::size_t add = std::min({share, available[c] - q[c], remaining});
      q[c] += add;
      remaining -= add;
    }
  }
  return q;
}

struct ClassPools {
  std::vector<int> labels;
  std::vector<std::vector<const LabeledExample*>> pools;
};

ClassPools group_by_class(const TaskData& current) {
  ClassPools g;
  g.labels = current.classes;
  g.pools.resize(g.labels.size());
  for (const auto& e : current.train) {
    const auto it = std::lower_bound(g.labels.begin(), g.labels.end(), e.y);
    if (it == g.labels.end() || *it != e.y) throw std::invalid_argument("training label outside task classes");
    g.pools[static_cast<std::size_t>(it - g.labels.begin())].push_back(&e);
  }
  return g;
}

void check_partition(const ReplayBuffer& buf, std::size_t task, const PartitionSolution& partition) {
  if (partition.n.size() != task + 1) throw ConfigError("partition must cover tasks 0..current");
  const std::size_t total = std::accumulate(partition.n.begin(), partition.n.end(), std::size_t{0});
  if (total > buf.capacity()) throw ConfigError("partition exceeds buffer capacity");
}

// Shrinks past slots, returns the units the current task must cover.
template <typename KeepOrder>
std::size_t resize_past_slots(ReplayBuffer& buf, std::size_t task, const PartitionSolution& partition,
                              KeepOrder&& order_slot, FillReport& report) {
  std::size_t target = partition.n[task];
  for (std::size_t k = 0; k < task; ++k) {
    auto& s = buf.mutable_slot(k);
    const std::size_t want = partition.n[k];
    if (s.size() > want) {
      order_slot(s);
      s.resize(want);
    } else if (s.size() < want) {
      const std::size_t deficit = want - s.size();
      report.warnings.push_back("slot " + std::to_string(k + 1) + " needs " + std::to_string(deficit) +
                                " more samples than stored; filling from the current task");
      target += deficit;
    }
  }
  return target;
}

void store_current(ReplayBuffer& buf, std::size_t task, const std::vector<const LabeledExample*>& chosen,
                   const SampleDuals* duals) {
  auto& s = buf.mutable_slot(task);
  s.clear();
  for (const auto* e : chosen) s.push_back({*e, duals ? duals->at(e->id) : 0.0, buf.next_arrival()});
}

void warn_short(FillReport& report, std::size_t target, std::size_t got) {
  if (got < target)
    report.warnings.push_back("current task has only " + std::to_string(got) + " of " + std::to_string(target) +
                              " requested samples");
}

}  // namespace

FillReport fill_buffer_random(ReplayBuffer& buf, const TaskData& current, std::size_t task,
                              const PartitionSolution& partition, std::uint64_t seed) {
  check_partition(buf, task, partition);
  FillReport report;
  std::mt19937_64 rng(seed);
  const std::size_t target = resize_past_slots(
      buf, task, partition, [&](std::vector<BufferEntry>& s) { std::shuffle(s.begin(), s.end(), rng); }, report);

  auto groups = group_by_class(current);
  std::vector<std::size_t> available;
  for (const auto& p : groups.pools) available.push_back(p.size());
  const auto quotas = class_quotas(target, available);
  std::vector<const LabeledExample*> chosen;
  for (std::size_t c = 0; c < groups.pools.size(); ++c) {
    auto pool = groups.pools[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quotas[c]));
  }
  warn_short(report, target, chosen.size());
  store_current(buf, task, chosen, nullptr);
  return report;
}

FillReport fill_buffer_dual(ReplayBuffer& buf, const TaskData& current, std::size_t task,
                            const PartitionSolution& partition, const SampleDuals& duals,
                            double discard_quantile, std::uint64_t seed) {
  if (!(discard_quantile >= 0.0 && discard_quantile < 1.0))
    throw ConfigError("discard_quantile must lie in [0, 1)");
  bool any_positive = false;
  for (const auto& e : current.train) any_positive = any_positive || duals.at(e.id) > 0.0;
  if (!any_positive) {
    auto report = fill_buffer_random(buf, current, task, partition, seed);
    report.warnings.insert(report.warnings.begin(), "all sample duals are zero; using random fill");
    return report;
  }
  check_partition(buf, task, partition);
  FillReport report;
  auto by_lambda_desc = [](const BufferEntry& a, const BufferEntry& b) {
    return a.lambda != b.lambda ? a.lambda > b.lambda : a.example.id < b.example.id;
  };
  const std::size_t target = resize_past_slots(
      buf, task, partition, [&](std::vector<BufferEntry>& s) { std::sort(s.begin(), s.end(), by_lambda_desc); },
      report);

  auto groups = group_by_class(current);
  std::vector<std::size_t> available;
  for (auto& pool : groups.pools) {
    std::sort(pool.begin(), pool.end(), [&](const LabeledExample* a, const LabeledExample* b) {
      const double la = duals.at(a->id), lb = duals.at(b->id);
      return la != lb ? la > lb : a->id < b->id;
    });
    const auto drop = static_cast<std::size_t>(std::ceil(discard_quantile * static_cast<double>(pool.size())));
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(drop, pool.size())));
    available.push_back(pool.size());
  }
  const auto quotas = class_quotas(target, available);
  std::vector<const LabeledExample*> chosen;
  for (std::size_t c = 0; c < groups.pools.size(); ++c)
    chosen.insert(chosen.end(), groups.pools[c].begin(),
                  groups.pools[c].begin() + static_cast<std::ptrdiff_t>(quotas[c]));
  warn_short(report, target, chosen.size());
  store_current(buf, task, chosen, &duals);
  return report;
}

}  // namespace pdcl
