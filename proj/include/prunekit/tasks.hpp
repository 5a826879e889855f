#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunekit/errors.hpp"
#include "prunekit/io.hpp"
#include "prunekit/matrix.hpp"
#include "prunekit/multitask.hpp"
#include "prunekit/random.hpp"

namespace prunekit {

struct TeacherConfig {
  std::uint64_t seed = 1;
  std::size_t width = 4;     // latent features in the shared (and each private) map
  double noise_level = 0.0;  // stddev of Gaussian noise added to teacher outputs
};

struct TeacherTask {
  std::string task_id;
  TaskKind kind = TaskKind::Classification;
  double shared_fraction = 1.0;
  Matrix private_map;  // width x model_dim
  Matrix output_map;   // outputs x width
  Matrix output_bias;  // outputs x 1
  Matrix private_mean, private_scale;
};

// Data-generating network. Per token t the latent activations are a_t = map * x_t;
// a sequence's features are the token means of |a_t|, standardised. Every task reads
// the shared features, its private features, or a blend of the two (shared_fraction),
// through its own output map.
struct PlantedTeacher {
  std::size_t model_dim = 0;
  std::size_t seq_len = 0;
  std::size_t width = 0;
  double noise_level = 0.0;
  Matrix shared_map;  // width x model_dim
  Matrix shared_mean, shared_scale;
  std::vector<TeacherTask> tasks;

  std::size_t task_index(const std::string& id) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i].task_id == id) return i;
    throw ContractViolation("teacher has no task '" + id + "'");
  }
};

enum class Split { Train, Dev };

struct SyntheticDataset {
  std::string task_id;
  TaskKind kind = TaskKind::Classification;
  Split split = Split::Train;
  Matrix inputs;  // examples x (seq_len * model_dim), token-major
  std::vector<int> labels;
  std::vector<double> targets;

  std::size_t size() const { return inputs.rows(); }
};

namespace detail {

// width x n matrix of raw (unstandardised) pooled |map x_t| features.
inline Matrix pooled_abs_features(const Matrix& map, const Matrix& examples, std::size_t seq, std::size_t dim) {
  std::vector<std::size_t> all(examples.rows());
  std::iota(all.begin(), all.end(), 0);
  const Matrix x = pack_sequences(examples, all, seq, dim);  // dim x (n * seq)
  const Matrix a = matmul(map, x);
  Matrix f(map.rows(), examples.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    for (std::size_t b = 0; b < examples.rows(); ++b) {
      double s = 0;
      for (std::size_t t = 0; t < seq; ++t) s += std::abs(row[b * seq + t]);
      f(r, b) = s / double(seq);
    }
  }
  return f;
}

inline void feature_stats(const Matrix& f, Matrix& mean, Matrix& scale) {
  mean = Matrix(f.rows(), 1);
  scale = Matrix(f.rows(), 1);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double m = 0;
    for (double v : f.row(r)) m += v;
    m /= double(f.cols());
    double var = 0;
    for (double v : f.row(r)) var += (v - m) * (v - m);
    mean[r] = m;
    scale[r] = 1.0 / std::sqrt(std::max(var / double(f.cols()), 1e-300));
  }
}

inline void standardize(Matrix& f, const Matrix& mean, const Matrix& scale) {
  for (std::size_t r = 0; r < f.rows(); ++r)
    for (double& v : f.row(r)) v = (v - mean[r]) * scale[r];
}

inline Matrix random_examples(std::size_t n, std::size_t seq, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  return random_normal(n, seq * dim, rng);
}

}  // namespace detail

// Noise-free teacher outputs (outputs x n) for one task.
inline Matrix teacher_outputs(const PlantedTeacher& teacher, std::size_t task, const Matrix& examples) {
  PRUNEKIT_REQUIRE(task < teacher.tasks.size(), "teacher_outputs: task index out of range");
  if (examples.cols() != teacher.seq_len * teacher.model_dim)
    throw ContractViolation("teacher_outputs: example width does not match the teacher");
  const TeacherTask& tt = teacher.tasks[task];
  Matrix h(teacher.width, examples.rows());
  const double f = tt.shared_fraction;
  if (f > 0.0) {
    Matrix s = detail::pooled_abs_features(teacher.shared_map, examples, teacher.seq_len, teacher.model_dim);
    detail::standardize(s, teacher.shared_mean, teacher.shared_scale);
    h += s * f;
  }
  if (f < 1.0) {
    Matrix p = detail::pooled_abs_features(tt.private_map, examples, teacher.seq_len, teacher.model_dim);
    detail::standardize(p, tt.private_mean, tt.private_scale);
    h += p * (1.0 - f);
  }
  Matrix out = matmul(tt.output_map, h);
  add_bias(out, tt.output_bias);
  return out;
}

inline std::vector<int> argmax_columns(const Matrix& logits) {
  std::vector<int> out(logits.cols());
  for (std::size_t b = 0; b < logits.cols(); ++b) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.rows(); ++j)
      if (logits(j, b) > logits(best, b)) best = j;
    out[b] = int(best);
  }
  return out;
}

inline PlantedTeacher make_teacher(const TeacherConfig& cfg, const TaskRegistry& registry, std::size_t model_dim,
                                   std::size_t seq_len) {
  PRUNEKIT_REQUIRE(cfg.width > 0, "teacher width must be positive");
  PRUNEKIT_REQUIRE(cfg.noise_level >= 0.0, "teacher noise level must be non-negative");
  PlantedTeacher t;
  t.model_dim = model_dim;
  t.seq_len = seq_len;
  t.width = cfg.width;
  t.noise_level = cfg.noise_level;
  Rng rng(mix_seed(cfg.seed, 0));
  t.shared_map = random_normal(cfg.width, model_dim, rng, 1.0 / std::sqrt(double(model_dim)));

  // Calibration draws fix standardisation constants and output offsets.
  constexpr std::size_t kCalibration = 32768;
  const Matrix calib = detail::random_examples(kCalibration, seq_len, model_dim, mix_seed(cfg.seed, 1));
  detail::feature_stats(detail::pooled_abs_features(t.shared_map, calib, seq_len, model_dim), t.shared_mean,
                        t.shared_scale);

  for (const TaskSpec& spec : registry.tasks()) {
    Rng trng(mix_seed(cfg.seed, 1000 + fnv1a64(spec.id) % 1000003));
    TeacherTask tt;
    tt.task_id = spec.id;
    tt.kind = spec.kind;
    tt.shared_fraction = spec.shared_fraction;
    tt.private_map = random_normal(cfg.width, model_dim, trng, 1.0 / std::sqrt(double(model_dim)));
    tt.output_map = random_normal(spec.outputs(), cfg.width, trng, 1.0 / std::sqrt(double(cfg.width)));
    tt.output_bias = Matrix(spec.outputs(), 1);
    detail::feature_stats(detail::pooled_abs_features(tt.private_map, calib, seq_len, model_dim), tt.private_mean,
                          tt.private_scale);
    t.tasks.push_back(std::move(tt));

    const std::size_t idx = t.tasks.size() - 1;
    Matrix out = teacher_outputs(t, idx, calib);
    TeacherTask& cur = t.tasks[idx];
    if (spec.kind == TaskKind::Regression) {
      // Zero mean, unit variance on the calibration draws.
      double m = 0, v = 0;
      for (double x : out.values()) m += x;
      m /= double(out.cols());
      for (double x : out.values()) v += (x - m) * (x - m);
      const double s = 1.0 / std::sqrt(v / double(out.cols()));
      cur.output_map *= s;
      cur.output_bias[0] = -m * s;
    } else {
      // Balance the classes: shift offsets by the log ratio of target to observed frequency.
      const std::size_t c = spec.outputs();
      Matrix shifted = out;
      for (int iter = 0; iter < 400; ++iter) {
        std::vector<double> freq(c, 0.0);
        for (int y : argmax_columns(shifted)) freq[std::size_t(y)] += 1.0;
        double worst = 0;
        for (std::size_t j = 0; j < c; ++j) {
          freq[j] = std::max(freq[j], 0.5) / double(kCalibration);
          worst = std::max(worst, std::abs(freq[j] * double(c) - 1.0));
          cur.output_bias[j] += 0.5 * std::log(1.0 / (double(c) * freq[j]));
        }
        if (worst < 1e-3) break;
        shifted = out;
        add_bias(shifted, cur.output_bias);
      }
    }
  }
  return t;
}

// Train and dev splits for one task. Inputs are standard normal; labels come from
// the teacher plus output noise. Train and dev use distinct seed streams.
inline std::pair<SyntheticDataset, SyntheticDataset> generate_task(const TaskSpec& spec, const PlantedTeacher& teacher,
                                                                   std::size_t n_train, std::size_t n_dev) {
  const std::size_t task = teacher.task_index(spec.id);
  PRUNEKIT_REQUIRE(teacher.tasks[task].kind == spec.kind, "generate_task: teacher task kind differs from spec");
  auto make = [&](std::size_t n, Split split, std::uint64_t stream) {
    SyntheticDataset ds;
    ds.task_id = spec.id;
    ds.kind = spec.kind;
    ds.split = split;
    ds.inputs = detail::random_examples(n, teacher.seq_len, teacher.model_dim, mix_seed(spec.seed, stream));
    Matrix out = n ? teacher_outputs(teacher, task, ds.inputs) : Matrix(spec.outputs(), 0);
    Rng noise(mix_seed(spec.seed, stream + 100));
    if (teacher.noise_level > 0.0)
      for (double& v : out.values()) v += teacher.noise_level * noise.normal();
    if (spec.kind == TaskKind::Regression)
      ds.targets.assign(out.values().begin(), out.values().end());
    else
      ds.labels = argmax_columns(out);
    return ds;
  };
  return {make(n_train, Split::Train, 1), make(n_dev, Split::Dev, 2)};
}

// ---------------------------------------------------------------------------
// Metrics

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty()) throw ContractViolation("accuracy: empty input");
  PRUNEKIT_REQUIRE(preds.size() == labels.size(), "accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return double(hit) / double(preds.size());
}

// Pearson correlation; the regression dev metric.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.empty()) throw ContractViolation("pearson: empty input");
  PRUNEKIT_REQUIRE(a.size() == b.size(), "pearson: length mismatch");
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Unweighted mean over tasks.
inline double macro_average(std::span<const double> per_task) {
  if (per_task.empty()) throw ContractViolation("macro_average: empty input");
  return std::accumulate(per_task.begin(), per_task.end(), 0.0) / double(per_task.size());
}

// ---------------------------------------------------------------------------
// On-disk cache: <dir>/<key>/{train,dev}.pkmx plus {train,dev}.labels.json

inline std::string dataset_cache_key(const TaskSpec& spec, const TeacherConfig& teacher, std::size_t model_dim,
                                     std::size_t seq_len, std::size_t n_train, std::size_t n_dev) {
  nlohmann::json j = {{"id", spec.id},
                      {"kind", spec.kind == TaskKind::Regression ? "regression" : "classification"},
                      {"num_classes", spec.num_classes},
                      {"seed", spec.seed},
                      {"shared_fraction", spec.shared_fraction},
                      {"teacher_seed", teacher.seed},
                      {"teacher_width", teacher.width},
                      {"noise_level", teacher.noise_level},
                      {"model_dim", model_dim},
                      {"seq_len", seq_len},
                      {"n_train", n_train},
                      {"n_dev", n_dev}};
  return hex64(fnv1a64(j.dump()));
}

inline void save_dataset(const fs::path& dir, const SyntheticDataset& ds) {
  const std::string stem = ds.split == Split::Train ? "train" : "dev";
  pkmx::save(dir / (stem + ".pkmx"), ds.inputs);
  nlohmann::json j = {{"task_id", ds.task_id}, {"kind", ds.kind == TaskKind::Regression ? "regression" : "classification"}};
  if (ds.kind == TaskKind::Regression)
    j["targets"] = ds.targets;
  else
    j["labels"] = ds.labels;
  write_file_atomic(dir / (stem + ".labels.json"), j.dump());
}

inline SyntheticDataset load_dataset(const fs::path& dir, Split split) {
  const std::string stem = split == Split::Train ? "train" : "dev";
  SyntheticDataset ds;
  ds.split = split;
  ds.inputs = pkmx::load<double>(dir / (stem + ".pkmx"));
  const auto j = nlohmann::json::parse(read_file(dir / (stem + ".labels.json")));
  ds.task_id = j.at("task_id").get<std::string>();
  ds.kind = j.at("kind").get<std::string>() == "regression" ? TaskKind::Regression : TaskKind::Classification;
  if (ds.kind == TaskKind::Regression)
    ds.targets = j.at("targets").get<std::vector<double>>();
  else
    ds.labels = j.at("labels").get<std::vector<int>>();
  return ds;
}

// generate_task through the cache directory (generated and stored on a miss).
inline std::pair<SyntheticDataset, SyntheticDataset> generate_task_cached(const fs::path& cache_dir,
                                                                          const TaskSpec& spec,
                                                                          const TeacherConfig& teacher_cfg,
                                                                          const PlantedTeacher& teacher,
                                                                          std::size_t n_train, std::size_t n_dev) {
  const fs::path dir =
      cache_dir / dataset_cache_key(spec, teacher_cfg, teacher.model_dim, teacher.seq_len, n_train, n_dev);
  if (fs::exists(dir / "dev.labels.json") && fs::exists(dir / "train.labels.json"))
    return {load_dataset(dir, Split::Train), load_dataset(dir, Split::Dev)};
  auto pair = generate_task(spec, teacher, n_train, n_dev);
  save_dataset(dir, pair.first);
  save_dataset(dir, pair.second);
  return pair;
}

}  // namespace prunekit
