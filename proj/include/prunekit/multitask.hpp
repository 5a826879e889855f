#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prunekit/encoder.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/optim.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/random.hpp"
#include "prunekit/types.hpp"

namespace prunekit {

enum class TaskKind { Classification, Regression };

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::Classification;
  std::size_t num_classes = 3;
  std::size_t train_size = 4096;
  std::uint64_t seed = 0;
  double shared_fraction = 1.0;

  std::size_t outputs() const { return kind == TaskKind::Regression ? 1 : num_classes; }
};

class TaskRegistry {
 public:
  TaskRegistry() = default;
  explicit TaskRegistry(std::vector<TaskSpec> tasks) {
    for (auto& t : tasks) add(std::move(t));
  }

  void add(TaskSpec t) {
    if (t.id.empty()) throw ConfigError("task id must be non-empty");
    for (const auto& o : tasks_)
      if (o.id == t.id) throw ConfigError("duplicate task id '" + t.id + "'");
    if (t.kind == TaskKind::Classification && t.num_classes < 2)
      throw ConfigError("task '" + t.id + "': classification needs at least 2 classes");
    if (t.train_size == 0) throw ConfigError("task '" + t.id + "': train_size must be positive");
    if (!(t.shared_fraction >= 0.0 && t.shared_fraction <= 1.0))
      throw ConfigError("task '" + t.id + "': shared_fraction must be in [0, 1]");
    tasks_.push_back(std::move(t));
  }

  std::size_t size() const { return tasks_.size(); }
  bool empty() const { return tasks_.empty(); }
  const TaskSpec& operator[](std::size_t i) const { return tasks_.at(i); }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }

  std::vector<HeadSpec> head_specs() const {
    std::vector<HeadSpec> h;
    for (const auto& t : tasks_) h.push_back({t.id, t.outputs(), t.kind == TaskKind::Regression});
    return h;
  }

 private:
  std::vector<TaskSpec> tasks_;
};

// Uniform over registered tasks, one draw per mini-batch.
inline std::size_t sample_task(const TaskRegistry& registry, Rng& rng) {
  if (registry.empty()) throw ContractViolation("sample_task: empty registry");
  return static_cast<std::size_t>(rng.uniform_index(registry.size()));
}

// Mask for task t. Shared: Top_k(S). Separate: Top_k(S_t). Hybrid: max of the two.
inline Matrix task_mask(MaskMode mode, const Matrix& shared_scores, const Matrix* task_scores, double k) {
  if (mode != MaskMode::Shared && task_scores == nullptr)
    throw ContractViolation("task_mask: task scores required for separate/hybrid masks");
  if (task_scores) PRUNEKIT_REQUIRE(task_scores->same_shape(shared_scores), "task_mask: score shapes differ");
  switch (mode) {
    case MaskMode::Shared: return topk_mask(shared_scores, k);
    case MaskMode::Separate: return topk_mask(*task_scores, k);
    case MaskMode::Hybrid: {
      Matrix m = topk_mask(shared_scores, k);
      const Matrix t = topk_mask(*task_scores, k);
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], t[i]);
      return m;
    }
  }
  return {};
}

struct Batch {
  Matrix inputs;  // model_dim x (size * seq_len)
  std::size_t size = 0;
  Targets targets;
};

using BatchSource = std::function<Batch(std::size_t task)>;

struct StepResult {
  std::size_t task = 0;
  double loss = 0.0;
};

// One multitask update: sample a task, take a batch of it, backpropagate through the
// shared encoder into that task's head (and task scores), apply Adam. Heads and task
// scores of other tasks receive no gradient and are left untouched.
inline StepResult multitask_step(Encoder& model, Adam& optimizer, const TaskRegistry& registry,
                                 const BatchSource& batches, Rng& rng, const BackwardOptions& opt = {}) {
  if (model.num_tasks() != registry.size()) throw ContractViolation("multitask_step: model heads do not match tasks");
  for (std::size_t t = 0; t < registry.size(); ++t)
    if (model.heads[t].task_id != registry[t].id) throw ContractViolation("multitask_step: head/task id mismatch");
  StepResult r;
  r.task = sample_task(registry, rng);
  Batch b = batches(r.task);
  LossGrad lg = loss_and_backward(model, b.inputs, b.size, b.targets, r.task, opt);
  optimizer.step(model, lg.grads);
  r.loss = lg.loss;
  return r;
}

}  // namespace prunekit
