#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prunekit/encoder.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/layers.hpp"
#include "prunekit/optim.hpp"
#include "prunekit/types.hpp"

namespace prunekit {

// One of the eight selector x structure x scope settings plus its schedule.
struct PruneConfig {
  Selector selector = Selector::Movement;
  Structure structure = Structure::ElementWise;
  Scope scope = Scope::Global;
  double final_density = 0.15;
  std::size_t total_epochs = 8;
  std::size_t warmup_epochs = 2;
  std::size_t cooldown_epochs = 2;
  double sigma_lr = 5e-3;
  bool update_masked_weights = false;

  void validate() const {
    if (!(final_density > 0.0 && final_density <= 1.0)) throw ConfigError("final_density must be in (0, 1]");
    if (total_epochs == 0) throw ConfigError("epochs must be positive");
    if (warmup_epochs + cooldown_epochs >= total_epochs)
      throw ConfigError("warmup_epochs + cooldown_epochs must be less than epochs");
    if (!(sigma_lr > 0.0)) throw ConfigError("sigma_lr must be positive");
  }
};

// Kept fraction over training steps: 1 through warmup, cubic ramp, k_final through cooldown.
struct SparsitySchedule {
  double k_final = 1.0;
  std::size_t warmup_steps = 0;
  std::size_t cooldown_steps = 0;

  static SparsitySchedule from_config(const PruneConfig& cfg, std::size_t steps_per_epoch) {
    return {cfg.final_density, cfg.warmup_epochs * steps_per_epoch, cfg.cooldown_epochs * steps_per_epoch};
  }
};

// k(t) = k_f + (1 - k_f)(1 - p)^3, p = clamp((t - t_w) / (T - t_w - t_c), 0, 1).
inline double schedule_density(const SparsitySchedule& s, double t, double total) {
  const double ramp = total - double(s.warmup_steps) - double(s.cooldown_steps);
  double p = ramp > 0.0 ? (t - double(s.warmup_steps)) / ramp : (t >= double(s.warmup_steps) ? 1.0 : 0.0);
  p = std::clamp(p, 0.0, 1.0);
  const double q = 1.0 - p;
  return s.k_final + (1.0 - s.k_final) * q * q * q;
}

// |W| for element-wise layers, |sigma| for rank layers.
inline Matrix magnitude_scores(const PrunableLayer& layer) {
  Matrix s = layer.structure == Structure::ElementWise ? layer.weight : layer.factors.sigma;
  for (double& x : s.values()) x = std::abs(x);
  return s;
}

inline std::size_t kept_count(double k, std::size_t n) {
  const auto r = static_cast<std::size_t>(std::llround(k * double(n)));
  return std::clamp<std::size_t>(r, 1, n);
}

namespace detail {

// Marks the `keep` largest of the concatenated score tensors, ties to the smaller
// flat index.
inline std::vector<Matrix> topk_pool(std::span<const Matrix* const> scores, std::size_t keep) {
  std::vector<double> flat;
  for (const Matrix* s : scores) flat.insert(flat.end(), s->values().begin(), s->values().end());
  std::vector<std::uint32_t> idx(flat.size());
  std::iota(idx.begin(), idx.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) { return flat[a] > flat[b] || (flat[a] == flat[b] && a < b); };
  if (keep < idx.size()) std::nth_element(idx.begin(), idx.begin() + std::ptrdiff_t(keep), idx.end(), better);
  std::vector<char> on(flat.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) on[idx[i]] = 1;

  std::vector<Matrix> out;
  std::size_t off = 0;
  for (const Matrix* s : scores) {
    Matrix m(s->rows(), s->cols());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = on[off + i] ? 1.0 : 0.0;
    off += m.size();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace detail

// Binary masks Top_k over one or many score tensors. Local: each tensor is its own
// pool. Global: all tensors form one pool. Each pool keeps max(1, round(k N)).
inline std::vector<Matrix> topk_mask(std::span<const Matrix* const> scores, double k, Scope scope) {
  if (!(k > 0.0 && k <= 1.0)) throw ContractViolation("topk_mask: kept fraction must be in (0, 1]");
  std::size_t total = 0;
  for (const Matrix* s : scores) total += s->size();
  if (scores.empty() || total == 0) throw ContractViolation("topk_mask: empty pool");
  if (scope == Scope::Global) return detail::topk_pool(scores, kept_count(k, total));
  std::vector<Matrix> out;
  for (const Matrix* s : scores) {
    if (s->empty()) throw ContractViolation("topk_mask: empty pool");
    const Matrix* one[] = {s};
    out.push_back(std::move(detail::topk_pool(one, kept_count(k, s->size()))[0]));
  }
  return out;
}

inline Matrix topk_mask(const Matrix& scores, double k) {
  const Matrix* one[] = {&scores};
  return std::move(topk_mask(one, k, Scope::Local)[0]);
}

// ---------------------------------------------------------------------------
// Parameter accounting

// Storage of a rank-k' layer: factored k'(m+n), or the recovered dense m*n when smaller.
inline std::size_t rank_param_count(std::size_t m, std::size_t n, std::size_t k) {
  return std::min(m * n, k * (m + n));
}

inline std::size_t effective_param_count(const PrunableLayer& layer) {
  if (layer.structure == Structure::Rank) return rank_param_count(layer.rows, layer.cols, layer.active_rank());
  std::size_t c = 0;
  const Matrix mask = layer.storage_mask();
  for (double m : mask.values()) c += m != 0.0;
  return c;
}

inline std::size_t effective_param_count(const FactoredLayer& layer) {
  return rank_param_count(layer.rows(), layer.cols(), layer.retained_rank());
}

struct ParamCount {
  std::size_t effective = 0;
  std::size_t dense = 0;
  double fraction() const { return dense ? double(effective) / double(dense) : 0.0; }
};

// Prunable encoder weights only; biases, layer norms and heads are a fixed cost.
inline ParamCount count_params(const Encoder& model) {
  ParamCount c;
  for (const PrunableLayer* l : model.prunable()) {
    c.effective += effective_param_count(*l);
    c.dense += l->rows * l->cols;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Rank selection

struct RankShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Rank-dimension masks for one pool of rank layers under a parameter budget of
// round(k * sum(m n)). Every layer keeps its best dimension; the remaining dimensions
// are taken in score order (ties to the smaller flat index) until the next one would
// push the footnote-aware cost min(mn, k'(m+n)) over budget.
inline std::vector<Matrix> rank_budget_masks(std::span<const Matrix* const> scores, std::span<const RankShape> shapes,
                                             double k) {
  PRUNEKIT_REQUIRE(scores.size() == shapes.size() && !scores.empty(), "rank_budget_masks: empty pool");
  if (!(k > 0.0 && k <= 1.0)) throw ContractViolation("rank_budget_masks: kept fraction must be in (0, 1]");
  std::size_t dense = 0;
  struct Entry {
    double score;
    std::uint32_t layer;
    std::uint32_t dim;
    std::uint32_t flat;
  };
  std::vector<Entry> entries;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    dense += shapes[l].rows * shapes[l].cols;
    PRUNEKIT_REQUIRE(!scores[l]->empty(), "rank_budget_masks: layer without rank dimensions");
    for (std::size_t d = 0; d < scores[l]->size(); ++d)
      entries.push_back({(*scores[l])[d], std::uint32_t(l), std::uint32_t(d), std::uint32_t(entries.size())});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.score > b.score || (a.score == b.score && a.flat < b.flat);
  });
  const auto budget = static_cast<std::size_t>(std::llround(k * double(dense)));

  std::vector<Matrix> masks;
  for (const Matrix* s : scores) masks.emplace_back(s->rows(), s->cols());
  std::vector<std::size_t> rank(scores.size(), 0);
  std::size_t cost = 0;
  auto layer_cost = [&](std::size_t l, std::size_t r) { return rank_param_count(shapes[l].rows, shapes[l].cols, r); };

  std::vector<char> taken(entries.size(), 0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    if (rank[e.layer] == 0) {
      rank[e.layer] = 1;
      masks[e.layer][e.dim] = 1.0;
      cost += layer_cost(e.layer, 1);
      taken[i] = 1;
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (taken[i]) continue;
    const Entry& e = entries[i];
    const std::size_t next = cost - layer_cost(e.layer, rank[e.layer]) + layer_cost(e.layer, rank[e.layer] + 1);
    if (next > budget) break;
    cost = next;
    ++rank[e.layer];
    masks[e.layer][e.dim] = 1.0;
  }
  return masks;
}

// Keeps the `keep` top-scored rank dimensions of a compact factored layer, in their
// original relative order.
inline FactoredLayer rank_prune(const FactoredLayer& layer, std::size_t keep, std::span<const double> scores) {
  PRUNEKIT_REQUIRE(keep >= 1, "rank_prune: must keep at least one rank dimension");
  PRUNEKIT_REQUIRE(keep <= layer.retained_rank(), "rank_prune: cannot keep more than the current rank");
  PRUNEKIT_REQUIRE(scores.size() == layer.retained_rank(), "rank_prune: one score per rank dimension");
  const Matrix s = Matrix::column(std::vector<double>(scores.begin(), scores.end()));
  const Matrix m = topk_mask(s, double(keep) / double(scores.size()));
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] != 0.0) idx.push_back(i);
  FactoredLayer out;
  out.original_rank = layer.original_rank;
  out.us = Adam::select(layer.us, 1, idx);
  out.v = Adam::select(layer.v, 0, idx);
  return out;
}

// Physically drops masked rank dimensions from a training layer (and from the
// optimizer moments of its tensors).
inline void compact_rank(PrunableLayer& layer, const std::string& name, Adam* optimizer) {
  PRUNEKIT_REQUIRE(layer.structure == Structure::Rank, "compact_rank: not a rank layer");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < layer.mask.size(); ++i)
    if (layer.mask[i] != 0.0) keep.push_back(i);
  layer.factors.u = Adam::select(layer.factors.u, 1, keep);
  layer.factors.sigma = Adam::select(layer.factors.sigma, 0, keep);
  layer.factors.v = Adam::select(layer.factors.v, 0, keep);
  layer.scores = Adam::select(layer.scores, 0, keep);
  layer.mask = Matrix(keep.size(), 1, 1.0);
  layer.compacted = true;
  if (optimizer) {
    optimizer->compact(name + ".u", 1, keep);
    optimizer->compact(name + ".sigma", 0, keep);
    optimizer->compact(name + ".v", 0, keep);
    optimizer->compact(name + ".scores", 0, keep);
  }
}

// ---------------------------------------------------------------------------
// Iterative pruning step

struct PruneStepOptions {
  bool compact = false;  // rank layers: hard-remove masked dimensions after selection
  Adam* optimizer = nullptr;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> pools(std::size_t n, Scope scope) {
  std::vector<std::vector<std::size_t>> out;
  if (scope == Scope::Global) {
    out.emplace_back(n);
    std::iota(out.back().begin(), out.back().end(), 0);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.push_back({i});
  }
  return out;
}

}  // namespace detail

// Recomputes masks for kept fraction k. Masks can regrow: a previously pruned entry
// returns when its score climbs back into the top k. Rank layers use soft masks
// until `compact` is requested; compacted layers are frozen.
inline void apply_prune_step(Encoder& model, Scope scope, double k, const PruneStepOptions& opt = {}) {
  if (k >= 1.0 && !opt.compact) return;
  auto layers = model.prunable();
  const auto names = model.prunable_names();
  const bool movement = model.selector == Selector::Movement;

  if (model.structure == Structure::ElementWise) {
    std::vector<Matrix> magnitudes;
    if (!movement)
      for (const PrunableLayer* l : layers) magnitudes.push_back(magnitude_scores(*l));
    for (const auto& pool : detail::pools(layers.size(), scope)) {
      if (model.mask_mode != MaskMode::Separate) {
        std::vector<const Matrix*> s;
        for (std::size_t i : pool) s.push_back(movement ? &layers[i]->scores : &magnitudes[i]);
        auto masks = topk_mask(s, k, Scope::Global);
        for (std::size_t j = 0; j < pool.size(); ++j) layers[pool[j]]->mask = std::move(masks[j]);
      }
      if (model.mask_mode != MaskMode::Shared) {
        for (std::size_t t = 0; t < model.num_tasks(); ++t) {
          std::vector<const Matrix*> s;
          for (std::size_t i : pool) s.push_back(&layers[i]->task_scores[t]);
          auto masks = topk_mask(s, k, Scope::Global);
          for (std::size_t j = 0; j < pool.size(); ++j) layers[pool[j]]->task_masks[t] = std::move(masks[j]);
        }
      }
    }
    return;
  }

  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (!layers[i]->compacted) live.push_back(i);
  if (live.empty()) return;
  std::vector<Matrix> magnitudes(layers.size());
  if (!movement)
    for (std::size_t i : live) magnitudes[i] = magnitude_scores(*layers[i]);
  for (const auto& pool_local : detail::pools(live.size(), scope)) {
    std::vector<const Matrix*> s;
    std::vector<RankShape> shapes;
    for (std::size_t j : pool_local) {
      const std::size_t i = live[j];
      s.push_back(movement ? &layers[i]->scores : &magnitudes[i]);
      shapes.push_back({layers[i]->rows, layers[i]->cols});
    }
    auto masks = rank_budget_masks(s, shapes, k);
    for (std::size_t j = 0; j < pool_local.size(); ++j) layers[live[pool_local[j]]]->mask = std::move(masks[j]);
  }
  if (opt.compact)
    for (std::size_t i : live) compact_rank(*layers[i], names[i], opt.optimizer);
}

}  // namespace prunekit
