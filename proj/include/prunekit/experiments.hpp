#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunekit/config.hpp"
#include "prunekit/encoder.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/io.hpp"
#include "prunekit/multitask.hpp"
#include "prunekit/optim.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/random.hpp"
#include "prunekit/tasks.hpp"

namespace prunekit {

// ---------------------------------------------------------------------------
// Run reports

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double density = 1.0;   // k(t) at the end of the epoch
  std::vector<double> train_loss;
  std::vector<double> dev_metric;
};

struct RunReport {
  std::string fingerprint;
  std::string status = "ok";  // "ok" or "aborted"
  std::string error;
  std::vector<std::string> task_ids;
  std::vector<std::string> metric_names;  // accuracy / pearson
  Selector selector = Selector::Movement;
  Structure structure = Structure::ElementWise;
  Scope scope = Scope::Global;
  MaskMode mask_mode = MaskMode::Shared;
  double final_density = 1.0;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  double param_fraction = 1.0;
  std::size_t effective_params = 0;
  std::size_t dense_params = 0;
  std::vector<double> dev_metric;
  double macro = 0.0;
  double wall_clock_s = 0.0;  // stored in timing.json, not in the report
};

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back(
        {{"epoch", e.epoch}, {"density", e.density}, {"train_loss", e.train_loss}, {"dev_metric", e.dev_metric}});
  nlohmann::json j = {{"fingerprint", r.fingerprint},
                      {"status", r.status},
                      {"task_ids", r.task_ids},
                      {"metric_names", r.metric_names},
                      {"selector", to_string(r.selector)},
                      {"structure", to_string(r.structure)},
                      {"scope", to_string(r.scope)},
                      {"mask_mode", to_string(r.mask_mode)},
                      {"final_density", r.final_density},
                      {"seed", r.seed},
                      {"epochs", epochs},
                      {"final",
                       {{"param_fraction", r.param_fraction},
                        {"effective_params", r.effective_params},
                        {"dense_params", r.dense_params},
                        {"dev_metric", r.dev_metric},
                        {"macro", r.macro}}}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  try {
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.status = j.at("status").get<std::string>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    r.task_ids = j.at("task_ids").get<std::vector<std::string>>();
    r.metric_names = j.at("metric_names").get<std::vector<std::string>>();
    r.selector = parse_selector(j.at("selector").get<std::string>());
    r.structure = parse_structure(j.at("structure").get<std::string>());
    r.scope = parse_scope(j.at("scope").get<std::string>());
    r.mask_mode = parse_mask_mode(j.at("mask_mode").get<std::string>());
    r.final_density = j.at("final_density").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("epochs"))
      r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("density").get<double>(),
                          e.at("train_loss").get<std::vector<double>>(), e.at("dev_metric").get<std::vector<double>>()});
    const auto& f = j.at("final");
    r.param_fraction = f.at("param_fraction").get<double>();
    r.effective_params = f.at("effective_params").get<std::size_t>();
    r.dense_params = f.at("dense_params").get<std::size_t>();
    r.dev_metric = f.at("dev_metric").get<std::vector<double>>();
    r.macro = f.at("macro").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run report: ") + e.what());
  }
  return r;
}

// Thrown when training hits a non-finite value; carries the epochs completed so far.
class RunAborted : public NumericalFailure {
 public:
  RunAborted(const std::string& what, RunReport partial) : NumericalFailure(what), report(std::move(partial)) {}
  RunReport report;
};

// ---------------------------------------------------------------------------
// Training

struct TaskData {
  SyntheticDataset train;
  SyntheticDataset dev;
};

inline std::vector<TaskData> build_datasets(const ExperimentConfig& c) {
  TaskRegistry registry(c.tasks);
  const PlantedTeacher teacher = make_teacher(c.data.teacher, registry, c.model.model_dim, c.model.seq_len);
  std::vector<TaskData> out;
  for (const auto& spec : registry.tasks()) {
    auto pair = c.data.cache_dir.empty()
                    ? generate_task(spec, teacher, spec.train_size, c.data.dev_size)
                    : generate_task_cached(c.data.cache_dir, spec, c.data.teacher, teacher, spec.train_size,
                                           c.data.dev_size);
    out.push_back({std::move(pair.first), std::move(pair.second)});
  }
  return out;
}

inline Batch make_batch(const SyntheticDataset& ds, std::span<const std::size_t> idx, std::size_t seq,
                        std::size_t dim) {
  Batch b;
  b.inputs = pack_sequences(ds.inputs, idx, seq, dim);
  b.size = idx.size();
  for (std::size_t i : idx) {
    if (ds.kind == TaskKind::Regression)
      b.targets.values.push_back(ds.targets[i]);
    else
      b.targets.labels.push_back(ds.labels[i]);
  }
  return b;
}

// Epoch-style sampling without replacement; reshuffles when a pass is used up.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next(std::size_t size) {
    std::vector<std::size_t> out;
    out.reserve(size);
    while (out.size() < size) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// Dev metric: accuracy for classification heads, Pearson correlation for regression.
inline double evaluate(const Encoder& model, std::size_t task, const SyntheticDataset& ds, std::size_t chunk = 256) {
  const auto& cfg = model.config;
  std::vector<int> preds;
  std::vector<double> values;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, ds.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Matrix x = pack_sequences(ds.inputs, idx, cfg.seq_len, cfg.model_dim);
    const Matrix logits = encoder_forward(model, x, idx.size(), task);
    if (!all_finite(logits)) throw NumericalFailure("non-finite logits during evaluation");
    if (ds.kind == TaskKind::Regression) {
      for (std::size_t b = 0; b < logits.cols(); ++b) values.push_back(logits(0, b));
    } else {
      for (int p : argmax_columns(logits)) preds.push_back(p);
    }
  }
  return ds.kind == TaskKind::Regression ? pearson(values, ds.targets) : accuracy(preds, ds.labels);
}

inline std::size_t steps_per_epoch(const ExperimentConfig& c) {
  std::size_t total = 0;
  for (const auto& t : c.tasks) total += t.train_size;
  return (total + c.training.batch_size - 1) / c.training.batch_size;
}

struct RunOptions {
  std::ostream* log = nullptr;               // per-epoch progress lines
  const std::vector<TaskData>* data = nullptr;  // reuse datasets instead of regenerating
};

struct RunOutcome {
  RunReport report;
  Encoder model;
};

// Trains with iterative pruning: per step the schedule density is applied to the
// masks, one task is sampled and one Adam step taken. Masks are re-applied at the
// end-of-epoch density before evaluation, so reported densities describe the model
// that was evaluated. Rank layers are compacted when cooldown starts.
inline RunOutcome train(const ExperimentConfig& c, const RunOptions& opt = {}) {
  c.validate();
  const auto started = std::chrono::steady_clock::now();
  const PruneConfig prune = c.effective_prune();
  TaskRegistry registry(c.tasks);

  std::vector<TaskData> owned;
  if (!opt.data) owned = build_datasets(c);
  const std::vector<TaskData>& data = opt.data ? *opt.data : owned;
  PRUNEKIT_REQUIRE(data.size() == registry.size(), "train: dataset count does not match tasks");

  EncoderConfig mc = c.model;
  mc.seed = mix_seed(c.model.seed, c.training.seed);
  Encoder model = make_encoder(mc, registry.head_specs(), {prune.selector, prune.structure, c.mask_mode});
  Adam adam({{ParamGroup::Weights, c.training.lr_weights},
             {ParamGroup::Scores, c.training.lr_scores},
             {ParamGroup::Sigma, prune.sigma_lr},
             {ParamGroup::Heads, c.training.lr_heads}});

  RunReport report;
  report.fingerprint = config_fingerprint(c);
  for (const auto& t : registry.tasks()) {
    report.task_ids.push_back(t.id);
    report.metric_names.push_back(t.kind == TaskKind::Regression ? "pearson" : "accuracy");
  }
  report.selector = prune.selector;
  report.structure = prune.structure;
  report.scope = prune.scope;
  report.mask_mode = c.mask_mode;
  report.final_density = prune.final_density;
  report.seed = c.training.seed;

  const std::size_t spe = steps_per_epoch(c);
  const std::size_t total = prune.total_epochs * spe;
  const SparsitySchedule sched = SparsitySchedule::from_config(prune, spe);
  const std::size_t cooldown_start = total - sched.cooldown_steps;
  const bool rank = prune.structure == Structure::Rank;
  bool compacted = false;

  auto prune_at = [&](std::size_t t) {
    const double k = schedule_density(sched, double(t), double(total));
    const bool compact = rank && !compacted && t >= cooldown_start;
    apply_prune_step(model, prune.scope, k, {compact, &adam});
    if (compact) compacted = true;
    return k;
  };

  std::vector<BatchCursor> cursors;
  for (std::size_t t = 0; t < registry.size(); ++t)
    cursors.emplace_back(data[t].train.size(), mix_seed(c.training.seed, 100 + t));
  Rng task_rng(mix_seed(c.training.seed, 11));
  const BatchSource source = [&](std::size_t task) {
    const auto idx = cursors[task].next(c.training.batch_size);
    return make_batch(data[task].train, idx, mc.seq_len, mc.model_dim);
  };
  const BackwardOptions bopt{prune.update_masked_weights, false};

  auto abort = [&](const std::string& why) {
    report.status = "aborted";
    report.error = why;
    report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    throw RunAborted(why, report);
  };

  for (std::size_t epoch = 0; epoch < prune.total_epochs; ++epoch) {
    std::vector<double> loss_sum(registry.size(), 0.0);
    std::vector<std::size_t> loss_n(registry.size(), 0);
    EpochRecord rec;
    try {
      for (std::size_t s = 0; s < spe; ++s) {
        prune_at(epoch * spe + s);
        const StepResult r = multitask_step(model, adam, registry, source, task_rng, bopt);
        loss_sum[r.task] += r.loss;
        ++loss_n[r.task];
      }
      rec.epoch = epoch + 1;
      rec.density = prune_at((epoch + 1) * spe);
      for (std::size_t t = 0; t < registry.size(); ++t) {
        rec.train_loss.push_back(loss_n[t] ? loss_sum[t] / double(loss_n[t]) : 0.0);
        rec.dev_metric.push_back(evaluate(model, t, data[t].dev));
      }
    } catch (const NumericalFailure& e) {
      abort(std::string(e.what()) + " in epoch " + std::to_string(epoch + 1));
    }
    report.epochs.push_back(rec);
    if (opt.log) {
      *opt.log << "epoch " << rec.epoch << " density " << rec.density;
      for (std::size_t t = 0; t < registry.size(); ++t)
        *opt.log << ' ' << report.task_ids[t] << '=' << rec.dev_metric[t];
      *opt.log << '\n';
    }
  }

  const ParamCount pc = count_params(model);
  report.param_fraction = pc.fraction();
  report.effective_params = pc.effective;
  report.dense_params = pc.dense;
  report.dev_metric = report.epochs.back().dev_metric;
  report.macro = macro_average(report.dev_metric);
  report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(report), std::move(model)};
}

inline RunReport run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
  return train(c, opt).report;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json plus one PKMX file per stored tensor. Pruned
// element-wise weights are stored with their masks applied; rank layers are stored
// as their compact factors (U Sigma, V).

inline void save_checkpoint(const fs::path& dir, const Encoder& model) {
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](const std::string& name, const Matrix& m, nlohmann::json extra = nlohmann::json::object()) {
    const std::string file = name + ".pkmx";
    write_file_atomic(dir / file, pkmx::encode(m));
    extra["name"] = name;
    extra["file"] = file;
    extra["rows"] = m.rows();
    extra["cols"] = m.cols();
    tensors.push_back(std::move(extra));
  };
  const auto names = model.prunable_names();
  const auto layers = model.prunable();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const PrunableLayer& l = *layers[i];
    if (l.structure == Structure::ElementWise) {
      const Matrix m = l.storage_mask();
      put(names[i] + ".weight", hadamard(l.weight, m), {{"kind", "masked_weight"}});
      put(names[i] + ".mask", m, {{"kind", "mask"}});
    } else {
      const FactoredLayer f = l.to_factored();
      put(names[i] + ".us", f.us, {{"kind", "rank_us"}, {"retained_rank", f.retained_rank()}});
      put(names[i] + ".v", f.v, {{"kind", "rank_v"}, {"retained_rank", f.retained_rank()}});
    }
    put(names[i] + ".bias", l.bias, {{"kind", "bias"}});
  }
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    const auto& b = model.blocks[i];
    put(p + "ln1.gain", b.ln1_gain, {{"kind", "layer_norm"}});
    put(p + "ln1.bias", b.ln1_bias, {{"kind", "layer_norm"}});
    put(p + "ln2.gain", b.ln2_gain, {{"kind", "layer_norm"}});
    put(p + "ln2.bias", b.ln2_bias, {{"kind", "layer_norm"}});
  }
  for (const auto& h : model.heads) {
    put("head." + h.task_id + ".weight", h.weight, {{"kind", "head"}});
    put("head." + h.task_id + ".bias", h.bias, {{"kind", "head"}});
  }
  const ParamCount pc = count_params(model);
  nlohmann::json manifest = {{"format", "prunekit-checkpoint-1"},
                             {"model", to_json(model.config)},
                             {"selector", to_string(model.selector)},
                             {"structure", to_string(model.structure)},
                             {"mask_mode", to_string(model.mask_mode)},
                             {"prunable_layers", names},
                             {"effective_params", pc.effective},
                             {"dense_params", pc.dense},
                             {"tensors", tensors}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2));
}

// Counts stored prunable parameters from a checkpoint's tensors alone: nonzero mask
// entries for element-wise layers, min(mn, k'(m+n)) for rank layers.
inline ParamCount checkpoint_param_count(const fs::path& dir) {
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : manifest.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;
  ParamCount pc;
  for (const auto& n : manifest.at("prunable_layers")) {
    const std::string name = n.get<std::string>();
    if (by_name.count(name + ".mask")) {
      const Matrix m = pkmx::load<double>(dir / by_name[name + ".mask"]->at("file").get<std::string>());
      for (double v : m.values()) pc.effective += v != 0.0;
      pc.dense += m.size();
    } else {
      const Matrix us = pkmx::load<double>(dir / by_name.at(name + ".us")->at("file").get<std::string>());
      const Matrix v = pkmx::load<double>(dir / by_name.at(name + ".v")->at("file").get<std::string>());
      pc.effective += rank_param_count(us.rows(), v.cols(), us.cols());
      pc.dense += us.rows() * v.cols();
    }
  }
  return pc;
}

// report.json (deterministic), timing.json (wall clock) and checkpoint/.
inline void write_run(const fs::path& dir, const RunOutcome& out, bool checkpoint = true) {
  write_file_atomic(dir / "report.json", report_to_json(out.report).dump(2) + "\n");
  write_file_atomic(dir / "timing.json", nlohmann::json{{"wall_clock_s", out.report.wall_clock_s}}.dump(2) + "\n");
  if (checkpoint) save_checkpoint(dir / "checkpoint", out.model);
}

inline RunReport read_run(const fs::path& dir) {
  RunReport r = report_from_json(nlohmann::json::parse(read_file(dir / "report.json")));
  if (fs::exists(dir / "timing.json"))
    r.wall_clock_s = nlohmann::json::parse(read_file(dir / "timing.json")).value("wall_clock_s", 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Budget comparison

struct BudgetPoint {
  enum class Kind { Multitask, Mixture };
  double size = 0.0;    // fraction of one dense encoder
  double metric = 0.0;  // macro average
  Kind kind = Kind::Mixture;
  std::vector<std::string> runs;        // one run (multitask) or one per task (mixture)
  std::vector<std::string> task_ids;
  std::vector<double> task_metrics;
};

// A finished run seen from the budget analysis.
struct RunSummary {
  std::string run_id;
  double size = 0.0;
  std::vector<std::string> task_ids;
  std::vector<double> metrics;

  static RunSummary from_report(std::string id, const RunReport& r) {
    return {std::move(id), r.param_fraction, r.task_ids, r.dev_metric};
  }
};

inline BudgetPoint multitask_point(const RunSummary& r) {
  BudgetPoint p;
  p.kind = BudgetPoint::Kind::Multitask;
  p.size = r.size;
  p.metric = macro_average(r.metrics);
  p.runs = {r.run_id};
  p.task_ids = r.task_ids;
  p.task_metrics = r.metrics;
  return p;
}

// Cartesian product over one single-task run per task. per_task[i] lists the runs
// trained on task i alone; each member contributes its own-task metric.
inline std::vector<BudgetPoint> enumerate_mixtures(const std::vector<std::vector<RunSummary>>& per_task) {
  if (per_task.empty()) throw ContractViolation("enumerate_mixtures: no tasks");
  std::size_t count = 1;
  for (std::size_t t = 0; t < per_task.size(); ++t) {
    if (per_task[t].empty()) throw ContractViolation("enumerate_mixtures: task " + std::to_string(t) + " has no runs");
    for (const auto& r : per_task[t])
      PRUNEKIT_REQUIRE(r.metrics.size() == 1 && r.task_ids.size() == 1,
                       "enumerate_mixtures: member runs must be single-task");
    if (count > std::numeric_limits<std::size_t>::max() / per_task[t].size())
      throw ContractViolation("enumerate_mixtures: too many combinations");
    count *= per_task[t].size();
  }
  std::vector<BudgetPoint> out;
  out.reserve(count);
  std::vector<std::size_t> pick(per_task.size(), 0);
  for (std::size_t n = 0; n < count; ++n) {
    BudgetPoint p;
    p.kind = BudgetPoint::Kind::Mixture;
    for (std::size_t t = 0; t < per_task.size(); ++t) {
      const RunSummary& r = per_task[t][pick[t]];
      p.size += r.size;
      p.runs.push_back(r.run_id);
      p.task_ids.push_back(r.task_ids[0]);
      p.task_metrics.push_back(r.metrics[0]);
    }
    p.metric = macro_average(p.task_metrics);
    out.push_back(std::move(p));
    for (std::size_t t = per_task.size(); t-- > 0;) {
      if (++pick[t] < per_task[t].size()) break;
      pick[t] = 0;
    }
  }
  return out;
}

// Non-dominated points, size ascending. Among points with equal (size, metric) the
// first in input order survives.
inline std::vector<BudgetPoint> pareto_frontier(const std::vector<BudgetPoint>& points) {
  if (points.empty()) throw ContractViolation("pareto_frontier: empty input");
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].size != points[b].size) return points[a].size < points[b].size;
    return points[a].metric > points[b].metric;
  });
  std::vector<BudgetPoint> out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i : order) {
    if (points[i].metric > best) {
      out.push_back(points[i]);
      best = points[i].metric;
    }
  }
  return out;
}

struct BudgetRow {
  double budget = 0.0;
  BudgetPoint multitask;
  std::optional<BudgetPoint> mixture;  // empty: nothing fits (flagged)
  double delta = 0.0;                  // multitask minus mixture macro
  std::vector<double> task_deltas;     // aligned with multitask.task_ids

  bool flagged() const { return !mixture.has_value(); }
};

// Pairs each multitask run with the best frontier mixture whose size is at most the
// multitask size plus `tolerance` (absorbs rounding in realised densities).
inline std::vector<BudgetRow> budget_compare(const std::vector<BudgetPoint>& multitask,
                                             const std::vector<BudgetPoint>& frontier, double tolerance = 1e-3) {
  if (multitask.empty() || frontier.empty()) throw ContractViolation("budget_compare: empty input");
  std::vector<BudgetRow> rows;
  for (const auto& mt : multitask) {
    BudgetRow row;
    row.budget = mt.size;
    row.multitask = mt;
    for (const auto& f : frontier)
      if (f.size <= mt.size + tolerance && (!row.mixture || f.metric > row.mixture->metric)) row.mixture = f;
    if (row.mixture) {
      row.delta = mt.metric - row.mixture->metric;
      for (std::size_t t = 0; t < mt.task_ids.size(); ++t) {
        double d = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t j = 0; j < row.mixture->task_ids.size(); ++j)
          if (row.mixture->task_ids[j] == mt.task_ids[t]) d = mt.task_metrics[t] - row.mixture->task_metrics[j];
        row.task_deltas.push_back(d);
      }
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const BudgetRow& a, const BudgetRow& b) { return a.budget < b.budget; });
  return rows;
}

// ---------------------------------------------------------------------------
// Presets and single-task derivation

// Three classification tasks reading one shared teacher feature map.
inline ExperimentConfig preset_desk3(std::uint64_t seed = 0) {
  ExperimentConfig c;
  c.model = {2, 32, 64, 4, 8, 0};
  c.prune.final_density = 0.2;
  c.data.teacher = {mix_seed(seed, 501), 4, 0.0};
  c.data.dev_size = 1024;
  c.training.seed = seed;
  c.model.seed = mix_seed(seed, 502);
  const char* ids[] = {"task_a", "task_b", "task_c"};
  for (std::size_t i = 0; i < 3; ++i) {
    TaskSpec t;
    t.id = ids[i];
    t.num_classes = 3;
    t.train_size = 4096;
    t.seed = mix_seed(seed, 600 + i);
    t.shared_fraction = 1.0;
    c.tasks.push_back(t);
  }
  return c;
}

// Nine tasks with skewed sizes; one binary task and one regression task.
inline ExperimentConfig preset_desk9(std::uint64_t seed = 0) {
  ExperimentConfig c = preset_desk3(seed);
  c.tasks.clear();
  const std::size_t sizes[] = {4096, 4096, 2048, 2048, 1024, 1024, 512, 256, 256};
  for (std::size_t i = 0; i < 9; ++i) {
    TaskSpec t;
    t.id = "task_" + std::to_string(i + 1);
    t.num_classes = i == 7 ? 2 : 3;
    t.kind = i == 8 ? TaskKind::Regression : TaskKind::Classification;
    t.train_size = sizes[i];
    t.seed = mix_seed(seed, 600 + i);
    t.shared_fraction = i % 3 == 2 ? 0.5 : 1.0;
    c.tasks.push_back(t);
  }
  return c;
}

// Same config restricted to one task, as trained for a mixture member.
inline ExperimentConfig single_task(const ExperimentConfig& c, std::size_t task) {
  PRUNEKIT_REQUIRE(task < c.tasks.size(), "single_task: task index out of range");
  ExperimentConfig s = c;
  s.tasks = {c.tasks[task]};
  s.mask_mode = MaskMode::Shared;
  return s;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_number(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::string sweep_csv_header() {
  return "run_id,selector,structure,scope,final_density,task_id,dev_metric,macro,param_fraction,seed,wall_clock_s\n";
}

inline std::string sweep_csv_rows(const std::string& run_id, const RunReport& r) {
  std::string out;
  for (std::size_t t = 0; t < r.task_ids.size(); ++t) {
    out += csv_escape(run_id) + ',' + std::string(to_string(r.selector)) + ',' + std::string(to_string(r.structure)) +
           ',' + std::string(to_string(r.scope)) + ',' + csv_number(r.final_density) + ',' + csv_escape(r.task_ids[t]) +
           ',' + csv_number(r.dev_metric[t]) + ',' + csv_number(r.macro) + ',' + csv_number(r.param_fraction) + ',' +
           std::to_string(r.seed) + ',' + csv_number(r.wall_clock_s) + '\n';
  }
  return out;
}

inline std::string frontier_csv(const std::vector<BudgetPoint>& points) {
  std::string out = "size,metric,kind,runs\n";
  for (const auto& p : points) {
    std::string runs;
    for (std::size_t i = 0; i < p.runs.size(); ++i) runs += (i ? ";" : "") + p.runs[i];
    out += csv_number(p.size) + ',' + csv_number(p.metric) + ',' +
           (p.kind == BudgetPoint::Kind::Multitask ? "multitask" : "mixture") + ',' + csv_escape(runs) + '\n';
  }
  return out;
}

inline std::string budget_csv(const std::vector<BudgetRow>& rows) {
  std::string out = "budget,multitask_run,multitask_macro,mixture_size,mixture_macro,delta,task_id,task_delta,flagged\n";
  for (const auto& r : rows) {
    const std::string head = csv_number(r.budget) + ',' + csv_escape(r.multitask.runs.at(0)) + ',' +
                             csv_number(r.multitask.metric) + ',';
    if (r.flagged()) {
      out += head + ",,,,,1\n";
      continue;
    }
    for (std::size_t t = 0; t < r.multitask.task_ids.size(); ++t)
      out += head + csv_number(r.mixture->size) + ',' + csv_number(r.mixture->metric) + ',' + csv_number(r.delta) +
             ',' + csv_escape(r.multitask.task_ids[t]) + ',' + csv_number(r.task_deltas[t]) + ",0\n";
  }
  return out;
}

}  // namespace prunekit
