#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunekit/encoder.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/multitask.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/tasks.hpp"
#include "prunekit/types.hpp"

namespace prunekit {

using json = nlohmann::json;

struct DataConfig {
  TeacherConfig teacher;
  std::size_t dev_size = 1024;
  std::string cache_dir;  // empty: no dataset cache
};

struct TrainingConfig {
  std::size_t batch_size = 32;
  double lr_weights = 3e-3;
  double lr_scores = 1e-2;
  double lr_heads = 3e-3;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;  // overrides prune.epochs when set
};

struct ExperimentConfig {
  EncoderConfig model;
  PruneConfig prune;
  std::vector<TaskSpec> tasks;
  DataConfig data;
  MaskMode mask_mode = MaskMode::Shared;
  TrainingConfig training;
  std::string output_dir = "prunekit-out";

  PruneConfig effective_prune() const {
    PruneConfig p = prune;
    if (training.epochs) p.total_epochs = *training.epochs;
    return p;
  }

  void validate() const {
    model.validate();
    effective_prune().validate();
    TaskRegistry reg(tasks);
    if (reg.empty()) throw ConfigError("at least one task is required");
    if (training.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(training.lr_weights > 0 && training.lr_scores > 0 && training.lr_heads > 0))
      throw ConfigError("learning rates must be positive");
    if (data.dev_size == 0) throw ConfigError("dev_size must be positive");
    if (data.teacher.width == 0) throw ConfigError("teacher width must be positive");
    if (data.teacher.noise_level < 0) throw ConfigError("noise_level must be non-negative");
    if (mask_mode != MaskMode::Shared) {
      if (prune.selector != Selector::Movement)
        throw ConfigError("separate/hybrid masks need the movement selector");
      if (prune.structure != Structure::ElementWise)
        throw ConfigError("separate/hybrid masks are only supported for element-wise structure");
    }
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline std::string read_enum(const json& j, const char* key, std::string_view fallback, const std::string& where) {
  std::string v(fallback);
  read(j, key, v, where);
  return v;
}

}  // namespace detail

inline json to_json(const PruneConfig& p) {
  return {{"selector", to_string(p.selector)},
          {"structure", to_string(p.structure)},
          {"scope", to_string(p.scope)},
          {"final_density", p.final_density},
          {"epochs", p.total_epochs},
          {"warmup_epochs", p.warmup_epochs},
          {"cooldown_epochs", p.cooldown_epochs},
          {"sigma_lr", p.sigma_lr},
          {"update_masked_weights", p.update_masked_weights}};
}

inline PruneConfig prune_from_json(const json& j) {
  const std::string w = "prune";
  detail::check_keys(j,
                     {"selector", "structure", "scope", "final_density", "epochs", "warmup_epochs", "cooldown_epochs",
                      "sigma_lr", "update_masked_weights"},
                     w);
  PruneConfig p;
  p.selector = parse_selector(detail::read_enum(j, "selector", to_string(p.selector), w));
  p.structure = parse_structure(detail::read_enum(j, "structure", to_string(p.structure), w));
  p.scope = parse_scope(detail::read_enum(j, "scope", to_string(p.scope), w));
  detail::read(j, "final_density", p.final_density, w);
  detail::read(j, "epochs", p.total_epochs, w);
  detail::read(j, "warmup_epochs", p.warmup_epochs, w);
  detail::read(j, "cooldown_epochs", p.cooldown_epochs, w);
  detail::read(j, "sigma_lr", p.sigma_lr, w);
  detail::read(j, "update_masked_weights", p.update_masked_weights, w);
  return p;
}

inline json to_json(const EncoderConfig& m) {
  return {{"num_layers", m.num_layers}, {"model_dim", m.model_dim}, {"ffn_dim", m.ffn_dim},
          {"num_heads", m.num_heads},   {"seq_len", m.seq_len},     {"seed", m.seed}};
}

inline EncoderConfig encoder_from_json(const json& j) {
  const std::string w = "model";
  detail::check_keys(j, {"num_layers", "model_dim", "ffn_dim", "num_heads", "seq_len", "seed"}, w);
  EncoderConfig m;
  detail::read(j, "num_layers", m.num_layers, w);
  detail::read(j, "model_dim", m.model_dim, w);
  detail::read(j, "ffn_dim", m.ffn_dim, w);
  detail::read(j, "num_heads", m.num_heads, w);
  detail::read(j, "seq_len", m.seq_len, w);
  detail::read(j, "seed", m.seed, w);
  return m;
}

inline json to_json(const TaskSpec& t) {
  return {{"id", t.id},
          {"kind", t.kind == TaskKind::Regression ? "regression" : "classification"},
          {"num_classes", t.num_classes},
          {"train_size", t.train_size},
          {"seed", t.seed},
          {"shared_fraction", t.shared_fraction}};
}

inline TaskSpec task_from_json(const json& j, std::size_t index) {
  const std::string w = "tasks[" + std::to_string(index) + "]";
  detail::check_keys(j, {"id", "kind", "num_classes", "train_size", "seed", "shared_fraction"}, w);
  TaskSpec t;
  if (!j.contains("id")) throw ConfigError(w + ": missing 'id'");
  detail::read(j, "id", t.id, w);
  const std::string kind = detail::read_enum(j, "kind", "classification", w);
  if (kind == "classification")
    t.kind = TaskKind::Classification;
  else if (kind == "regression")
    t.kind = TaskKind::Regression;
  else
    throw ConfigError(w + ": unknown kind '" + kind + "'");
  detail::read(j, "num_classes", t.num_classes, w);
  detail::read(j, "train_size", t.train_size, w);
  detail::read(j, "seed", t.seed, w);
  detail::read(j, "shared_fraction", t.shared_fraction, w);
  return t;
}

inline json to_json(const ExperimentConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks) tasks.push_back(to_json(t));
  json training = {{"batch_size", c.training.batch_size},
                   {"lr_weights", c.training.lr_weights},
                   {"lr_scores", c.training.lr_scores},
                   {"lr_heads", c.training.lr_heads},
                   {"seed", c.training.seed}};
  if (c.training.epochs) training["epochs"] = *c.training.epochs;
  return {{"model", to_json(c.model)},
          {"prune", to_json(c.prune)},
          {"tasks", tasks},
          {"data",
           {{"teacher_seed", c.data.teacher.seed},
            {"teacher_width", c.data.teacher.width},
            {"noise_level", c.data.teacher.noise_level},
            {"dev_size", c.data.dev_size},
            {"cache_dir", c.data.cache_dir}}},
          {"mask_mode", to_string(c.mask_mode)},
          {"training", training},
          {"output_dir", c.output_dir}};
}

// Strict parse: unknown keys anywhere are rejected; missing keys take defaults.
inline ExperimentConfig config_from_json(const json& j) {
  detail::check_keys(j, {"model", "prune", "tasks", "data", "mask_mode", "training", "output_dir"}, "config");
  ExperimentConfig c;
  if (j.contains("model")) c.model = encoder_from_json(j.at("model"));
  if (j.contains("prune")) c.prune = prune_from_json(j.at("prune"));
  if (j.contains("tasks")) {
    if (!j.at("tasks").is_array()) throw ConfigError("tasks: expected an array");
    c.tasks.clear();
    std::size_t i = 0;
    for (const auto& t : j.at("tasks")) c.tasks.push_back(task_from_json(t, i++));
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d, {"teacher_seed", "teacher_width", "noise_level", "dev_size", "cache_dir"}, "data");
    detail::read(d, "teacher_seed", c.data.teacher.seed, "data");
    detail::read(d, "teacher_width", c.data.teacher.width, "data");
    detail::read(d, "noise_level", c.data.teacher.noise_level, "data");
    detail::read(d, "dev_size", c.data.dev_size, "data");
    detail::read(d, "cache_dir", c.data.cache_dir, "data");
  }
  c.mask_mode = parse_mask_mode(detail::read_enum(j, "mask_mode", "shared", "config"));
  if (j.contains("training")) {
    const auto& t = j.at("training");
    detail::check_keys(t, {"batch_size", "lr_weights", "lr_scores", "lr_heads", "seed", "epochs"}, "training");
    detail::read(t, "batch_size", c.training.batch_size, "training");
    detail::read(t, "lr_weights", c.training.lr_weights, "training");
    detail::read(t, "lr_scores", c.training.lr_scores, "training");
    detail::read(t, "lr_heads", c.training.lr_heads, "training");
    detail::read(t, "seed", c.training.seed, "training");
    if (t.contains("epochs") && !t.at("epochs").is_null()) {
      std::size_t e = 0;
      detail::read(t, "epochs", e, "training");
      c.training.epochs = e;
    }
  }
  detail::read(j, "output_dir", c.output_dir, "config");
  c.validate();
  return c;
}

inline ExperimentConfig config_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

// Identifies a run configuration; output_dir does not take part.
inline std::string config_fingerprint(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  j["data"].erase("cache_dir");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace prunekit
