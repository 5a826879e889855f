#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/layers.hpp"
#include "prunekit/matrix.hpp"
#include "prunekit/random.hpp"
#include "prunekit/types.hpp"

namespace prunekit {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t num_heads = 4;
  std::size_t seq_len = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_layers == 0 || model_dim == 0 || ffn_dim == 0 || num_heads == 0 || seq_len == 0)
      throw ConfigError("encoder dimensions must be positive");
    if (model_dim % num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
  }
  std::size_t head_dim() const { return model_dim / num_heads; }
};

// Unpruned per-task output layer: weight is outputs x model_dim.
struct TaskHead {
  std::string task_id;
  bool regression = false;
  Matrix weight;
  Matrix bias;
};

struct HeadSpec {
  std::string task_id;
  std::size_t outputs = 2;
  bool regression = false;
};

struct EncoderBlock {
  PrunableLayer query, key, value, attn_out, ffn_in, ffn_out;
  Matrix ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    fn("query", query);
    fn("key", key);
    fn("value", value);
    fn("attn_out", attn_out);
    fn("ffn_in", ffn_in);
    fn("ffn_out", ffn_out);
  }
  template <typename Fn>
  void for_each_layer(Fn&& fn) const {
    fn("query", query);
    fn("key", key);
    fn("value", value);
    fn("attn_out", attn_out);
    fn("ffn_in", ffn_in);
    fn("ffn_out", ffn_out);
  }
};

// Encoder substrate: stacked post-LN transformer blocks over real-valued token
// features, mean pooling, one head per task. Activations are stored feature-major:
// a batch of B sequences is a model_dim x (B * seq_len) matrix.
struct Encoder {
  EncoderConfig config;
  Selector selector = Selector::Magnitude;
  Structure structure = Structure::ElementWise;
  MaskMode mask_mode = MaskMode::Shared;
  std::vector<EncoderBlock> blocks;
  std::vector<TaskHead> heads;

  std::size_t num_tasks() const { return heads.size(); }

  std::vector<PrunableLayer*> prunable() {
    std::vector<PrunableLayer*> out;
    for (auto& b : blocks) b.for_each_layer([&](const char*, PrunableLayer& l) { out.push_back(&l); });
    return out;
  }
  std::vector<const PrunableLayer*> prunable() const {
    std::vector<const PrunableLayer*> out;
    for (const auto& b : blocks) b.for_each_layer([&](const char*, const PrunableLayer& l) { out.push_back(&l); });
    return out;
  }
  std::vector<std::string> prunable_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].for_each_layer(
          [&](const char* name, const PrunableLayer&) { out.push_back("layer" + std::to_string(i) + "." + name); });
    return out;
  }
};

struct EncoderInit {
  Selector selector = Selector::Magnitude;
  Structure structure = Structure::ElementWise;
  MaskMode mask_mode = MaskMode::Shared;
};

namespace detail {

inline PrunableLayer make_layer(std::size_t out, std::size_t in, Rng& rng, const EncoderInit& init,
                                std::size_t num_tasks) {
  Matrix w = random_normal(out, in, rng, 1.0 / std::sqrt(double(in)));
  PrunableLayer l = init.structure == Structure::ElementWise ? PrunableLayer::element_wise(std::move(w), Matrix(out, 1))
                                                             : PrunableLayer::rank(w, Matrix(out, 1));
  l.mask_mode = init.mask_mode;
  if (init.mask_mode != MaskMode::Shared) {
    l.task_scores.assign(num_tasks, Matrix(l.scores.rows(), l.scores.cols()));
    l.task_masks.assign(num_tasks, Matrix(l.mask.rows(), l.mask.cols(), 1.0));
  }
  return l;
}

}  // namespace detail

inline Encoder make_encoder(const EncoderConfig& cfg, const std::vector<HeadSpec>& heads, const EncoderInit& init = {}) {
  cfg.validate();
  PRUNEKIT_REQUIRE(!heads.empty(), "encoder needs at least one task head");
  if (init.mask_mode != MaskMode::Shared) {
    if (init.selector != Selector::Movement)
      throw ConfigError("separate/hybrid masks need learned scores (movement selector)");
    if (init.structure != Structure::ElementWise)
      throw ConfigError("separate/hybrid masks are only supported for element-wise structure");
  }
  Rng rng(cfg.seed);
  Encoder e;
  e.config = cfg;
  e.selector = init.selector;
  e.structure = init.structure;
  e.mask_mode = init.mask_mode;
  const std::size_t d = cfg.model_dim;
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    EncoderBlock b;
    b.query = detail::make_layer(d, d, rng, init, heads.size());
    b.key = detail::make_layer(d, d, rng, init, heads.size());
    b.value = detail::make_layer(d, d, rng, init, heads.size());
    b.attn_out = detail::make_layer(d, d, rng, init, heads.size());
    b.ffn_in = detail::make_layer(cfg.ffn_dim, d, rng, init, heads.size());
    b.ffn_out = detail::make_layer(d, cfg.ffn_dim, rng, init, heads.size());
    b.ln1_gain = Matrix(d, 1, 1.0);
    b.ln1_bias = Matrix(d, 1);
    b.ln2_gain = Matrix(d, 1, 1.0);
    b.ln2_bias = Matrix(d, 1);
    e.blocks.push_back(std::move(b));
  }
  for (const auto& h : heads) {
    PRUNEKIT_REQUIRE(h.outputs >= 1, "task head needs at least one output");
    TaskHead th;
    th.task_id = h.task_id;
    th.regression = h.regression;
    th.weight = random_normal(h.outputs, d, rng, 1.0 / std::sqrt(double(d)));
    th.bias = Matrix(h.outputs, 1);
    e.heads.push_back(std::move(th));
  }
  return e;
}

// Gradient container with the same layout as the model. Heads and per-task scores
// stay empty unless the step touched them.
inline Encoder zeros_like(const Encoder& e) {
  Encoder z;
  z.config = e.config;
  z.selector = e.selector;
  z.structure = e.structure;
  z.mask_mode = e.mask_mode;
  for (const auto& b : e.blocks) {
    EncoderBlock zb;
    zb.query = zeros_like(b.query);
    zb.key = zeros_like(b.key);
    zb.value = zeros_like(b.value);
    zb.attn_out = zeros_like(b.attn_out);
    zb.ffn_in = zeros_like(b.ffn_in);
    zb.ffn_out = zeros_like(b.ffn_out);
    zb.ln1_gain = Matrix(b.ln1_gain.rows(), 1);
    zb.ln1_bias = Matrix(b.ln1_bias.rows(), 1);
    zb.ln2_gain = Matrix(b.ln2_gain.rows(), 1);
    zb.ln2_bias = Matrix(b.ln2_bias.rows(), 1);
    z.blocks.push_back(std::move(zb));
  }
  for (const auto& h : e.heads) {
    TaskHead th;
    th.task_id = h.task_id;
    th.regression = h.regression;
    z.heads.push_back(std::move(th));
  }
  return z;
}

struct TensorRef {
  std::string name;
  ParamGroup group;
  Matrix* value;
};

// Every trainable tensor in a fixed order. The enumeration depends only on the
// model's structure, so a model and its gradient container line up index by index.
inline std::vector<TensorRef> trainable_tensors(Encoder& e) {
  std::vector<TensorRef> out;
  const bool movement = e.selector == Selector::Movement;
  for (std::size_t i = 0; i < e.blocks.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    auto& b = e.blocks[i];
    b.for_each_layer([&](const char* name, PrunableLayer& l) {
      const std::string n = p + name + ".";
      if (l.structure == Structure::ElementWise) {
        out.push_back({n + "weight", ParamGroup::Weights, &l.weight});
      } else {
        out.push_back({n + "u", ParamGroup::Weights, &l.factors.u});
        out.push_back({n + "sigma", ParamGroup::Sigma, &l.factors.sigma});
        out.push_back({n + "v", ParamGroup::Weights, &l.factors.v});
      }
      out.push_back({n + "bias", ParamGroup::Weights, &l.bias});
      if (movement && l.mask_mode != MaskMode::Separate) out.push_back({n + "scores", ParamGroup::Scores, &l.scores});
      for (std::size_t t = 0; t < l.task_scores.size(); ++t)
        out.push_back({n + "scores.task" + std::to_string(t), ParamGroup::Scores, &l.task_scores[t]});
    });
    out.push_back({p + "ln1.gain", ParamGroup::Weights, &b.ln1_gain});
    out.push_back({p + "ln1.bias", ParamGroup::Weights, &b.ln1_bias});
    out.push_back({p + "ln2.gain", ParamGroup::Weights, &b.ln2_gain});
    out.push_back({p + "ln2.bias", ParamGroup::Weights, &b.ln2_bias});
  }
  for (auto& h : e.heads) {
    out.push_back({"head." + h.task_id + ".weight", ParamGroup::Heads, &h.weight});
    out.push_back({"head." + h.task_id + ".bias", ParamGroup::Heads, &h.bias});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct LayerNormCache {
  Matrix normalized;
  std::vector<double> inv_std;
};

struct BlockCache {
  LayerCache query, key, value, attn_out, ffn_in, ffn_out;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per (sequence, head), seq_len x seq_len
  LayerNormCache ln1, ln2;
  Matrix ffn_pre;
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  Matrix pooled;  // model_dim x batch
  std::size_t batch = 0;
  std::size_t task = 0;
};

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  const std::size_t d = x.rows(), l = x.cols();
  std::vector<double> mean(l, 0.0), var(l, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < l; ++c) mean[c] += row[c];
  }
  for (auto& m : mean) m /= double(d);
  for (std::size_t r = 0; r < d; ++r) {
    auto row = x.row(r);
    for (std::size_t c = 0; c < l; ++c) {
      const double t = row[c] - mean[c];
      var[c] += t * t;
    }
  }
  std::vector<double> inv(l);
  for (std::size_t c = 0; c < l; ++c) inv[c] = 1.0 / std::sqrt(var[c] / double(d) + kLayerNormEps);
  Matrix xhat(d, l), y(d, l);
  for (std::size_t r = 0; r < d; ++r) {
    auto in = x.row(r);
    auto xh = xhat.row(r);
    auto out = y.row(r);
    const double g = gain[r], b = bias[r];
    for (std::size_t c = 0; c < l; ++c) {
      xh[c] = (in[c] - mean[c]) * inv[c];
      out[c] = g * xh[c] + b;
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix& dgain,
                                  Matrix& dbias) {
  const std::size_t d = dy.rows(), l = dy.cols();
  Matrix dxhat(d, l);
  std::vector<double> mean_dxhat(l, 0.0), mean_dxhat_xhat(l, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    auto g = dy.row(r);
    auto xh = cache.normalized.row(r);
    auto dx = dxhat.row(r);
    double sg = 0, sb = 0;
    for (std::size_t c = 0; c < l; ++c) {
      sg += g[c] * xh[c];
      sb += g[c];
      dx[c] = g[c] * gain[r];
      mean_dxhat[c] += dx[c];
      mean_dxhat_xhat[c] += dx[c] * xh[c];
    }
    dgain[r] += sg;
    dbias[r] += sb;
  }
  for (std::size_t c = 0; c < l; ++c) {
    mean_dxhat[c] /= double(d);
    mean_dxhat_xhat[c] /= double(d);
  }
  Matrix dx(d, l);
  for (std::size_t r = 0; r < d; ++r) {
    auto xh = cache.normalized.row(r);
    auto dxh = dxhat.row(r);
    auto out = dx.row(r);
    for (std::size_t c = 0; c < l; ++c)
      out[c] = cache.inv_std[c] * (dxh[c] - mean_dxhat[c] - xh[c] * mean_dxhat_xhat[c]);
  }
  return dx;
}

// Multi-head scaled dot-product attention per sequence. q, k, v: d x (B * T).
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch, std::size_t seq,
                        std::size_t heads, std::vector<Matrix>* probs_out) {
  const std::size_t d = q.rows();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  Matrix out(d, q.cols());
  if (probs_out) probs_out->clear();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix p(seq, seq);
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
        const double* qr = q.row(r).data() + off;
        const double* kr = k.row(r).data() + off;
        for (std::size_t i = 0; i < seq; ++i) {
          const double qi = qr[i] * scale;
          auto prow = p.row(i);
          for (std::size_t j = 0; j < seq; ++j) prow[j] += qi * kr[j];
        }
      }
      for (std::size_t i = 0; i < seq; ++i) {
        auto prow = p.row(i);
        double mx = prow[0];
        for (double x : prow) mx = std::max(mx, x);
        double s = 0;
        for (double& x : prow) {
          x = std::exp(x - mx);
          s += x;
        }
        for (double& x : prow) x /= s;
      }
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
        const double* vr = v.row(r).data() + off;
        double* orow = out.row(r).data() + off;
        for (std::size_t i = 0; i < seq; ++i) {
          auto prow = p.row(i);
          double s = 0;
          for (std::size_t j = 0; j < seq; ++j) s += prow[j] * vr[j];
          orow[i] = s;
        }
      }
      if (probs_out) probs_out->push_back(std::move(p));
    }
  }
  return out;
}

inline void attention_backward(const Matrix& dout, const Matrix& q, const Matrix& k, const Matrix& v,
                               const std::vector<Matrix>& probs, std::size_t batch, std::size_t seq, std::size_t heads,
                               Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t d = q.rows();
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  dq = Matrix(d, q.cols());
  dk = Matrix(d, q.cols());
  dv = Matrix(d, q.cols());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * seq;
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& p = probs[b * heads + h];
      Matrix dp(seq, seq);
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
        const double* dor = dout.row(r).data() + off;
        const double* vr = v.row(r).data() + off;
        double* dvr = dv.row(r).data() + off;
        for (std::size_t i = 0; i < seq; ++i) {
          auto dprow = dp.row(i);
          auto prow = p.row(i);
          const double g = dor[i];
          for (std::size_t j = 0; j < seq; ++j) {
            dprow[j] += g * vr[j];
            dvr[j] += prow[j] * g;
          }
        }
      }
      // softmax backward, then scale
      for (std::size_t i = 0; i < seq; ++i) {
        auto dprow = dp.row(i);
        auto prow = p.row(i);
        double s = 0;
        for (std::size_t j = 0; j < seq; ++j) s += prow[j] * dprow[j];
        for (std::size_t j = 0; j < seq; ++j) dprow[j] = prow[j] * (dprow[j] - s) * scale;
      }
      for (std::size_t r = h * dh; r < (h + 1) * dh; ++r) {
        const double* qr = q.row(r).data() + off;
        const double* kr = k.row(r).data() + off;
        double* dqr = dq.row(r).data() + off;
        double* dkr = dk.row(r).data() + off;
        for (std::size_t i = 0; i < seq; ++i) {
          auto ds = dp.row(i);
          double acc = 0;
          for (std::size_t j = 0; j < seq; ++j) {
            acc += ds[j] * kr[j];
            dkr[j] += ds[j] * qr[i];
          }
          dqr[i] += acc;
        }
      }
    }
  }
}

inline Matrix block_forward(const EncoderBlock& blk, const Matrix& x, const EncoderConfig& cfg, std::size_t batch,
                            std::size_t task, BlockCache* cache) {
  Matrix q = layer_forward(blk.query, x, task, cache ? &cache->query : nullptr);
  Matrix k = layer_forward(blk.key, x, task, cache ? &cache->key : nullptr);
  Matrix v = layer_forward(blk.value, x, task, cache ? &cache->value : nullptr);
  Matrix a = attention(q, k, v, batch, cfg.seq_len, cfg.num_heads, cache ? &cache->probs : nullptr);
  Matrix r1 = layer_forward(blk.attn_out, a, task, cache ? &cache->attn_out : nullptr);
  r1 += x;
  Matrix h1 = layer_norm(r1, blk.ln1_gain, blk.ln1_bias, cache ? &cache->ln1 : nullptr);
  Matrix pre = layer_forward(blk.ffn_in, h1, task, cache ? &cache->ffn_in : nullptr);
  Matrix act = pre;
  for (double& t : act.values()) t = t > 0.0 ? t : 0.0;
  Matrix r2 = layer_forward(blk.ffn_out, act, task, cache ? &cache->ffn_out : nullptr);
  r2 += h1;
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ffn_pre = std::move(pre);
  }
  return layer_norm(r2, blk.ln2_gain, blk.ln2_bias, cache ? &cache->ln2 : nullptr);
}

inline Matrix block_backward(const EncoderBlock& blk, const BlockCache& c, const Matrix& dout,
                             const EncoderConfig& cfg, std::size_t batch, std::size_t task, EncoderBlock& g,
                             const BackwardOptions& opt) {
  Matrix dr2 = layer_norm_backward(dout, blk.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias);
  Matrix dact = layer_backward(blk.ffn_out, c.ffn_out, dr2, task, g.ffn_out, opt);
  for (std::size_t i = 0; i < dact.size(); ++i)
    if (c.ffn_pre[i] <= 0.0) dact[i] = 0.0;
  Matrix dh1 = layer_backward(blk.ffn_in, c.ffn_in, dact, task, g.ffn_in, opt);
  dh1 += dr2;
  Matrix dr1 = layer_norm_backward(dh1, blk.ln1_gain, c.ln1, g.ln1_gain, g.ln1_bias);
  Matrix da = layer_backward(blk.attn_out, c.attn_out, dr1, task, g.attn_out, opt);
  Matrix dq, dk, dv;
  attention_backward(da, c.q, c.k, c.v, c.probs, batch, cfg.seq_len, cfg.num_heads, dq, dk, dv);
  Matrix dx = std::move(dr1);
  dx += layer_backward(blk.query, c.query, dq, task, g.query, opt);
  dx += layer_backward(blk.key, c.key, dk, task, g.key, opt);
  dx += layer_backward(blk.value, c.value, dv, task, g.value, opt);
  return dx;
}

}  // namespace detail

// Packs `batch` flattened examples (each seq_len * model_dim values, token-major)
// into the feature-major layout.
inline Matrix pack_sequences(const Matrix& rows, std::span<const std::size_t> index, std::size_t seq,
                             std::size_t dim) {
  PRUNEKIT_REQUIRE(rows.cols() == seq * dim, "pack_sequences: example width does not match seq_len * model_dim");
  Matrix x(dim, index.size() * seq);
  for (std::size_t b = 0; b < index.size(); ++b) {
    PRUNEKIT_REQUIRE(index[b] < rows.rows(), "pack_sequences: example index out of range");
    auto src = rows.row(index[b]);
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t j = 0; j < dim; ++j) x(j, b * seq + t) = src[t * dim + j];
  }
  return x;
}

// Logits (outputs x batch) for the given task head.
inline Matrix encoder_forward(const Encoder& model, const Matrix& inputs, std::size_t batch, std::size_t task,
                              ForwardCache* cache = nullptr) {
  const auto& cfg = model.config;
  if (task >= model.heads.size()) throw ContractViolation("encoder_forward: unknown task index");
  if (inputs.rows() != cfg.model_dim || inputs.cols() != batch * cfg.seq_len)
    throw ContractViolation("encoder_forward: batch shape does not match the encoder config");
  if (cache) {
    cache->blocks.assign(model.blocks.size(), BlockCache{});
    cache->batch = batch;
    cache->task = task;
  }
  Matrix x = inputs;
  for (std::size_t i = 0; i < model.blocks.size(); ++i)
    x = detail::block_forward(model.blocks[i], x, cfg, batch, task, cache ? &cache->blocks[i] : nullptr);

  Matrix pooled(cfg.model_dim, batch);
  const double inv_t = 1.0 / double(cfg.seq_len);
  for (std::size_t r = 0; r < cfg.model_dim; ++r) {
    auto row = x.row(r);
    for (std::size_t b = 0; b < batch; ++b) {
      double s = 0;
      for (std::size_t t = 0; t < cfg.seq_len; ++t) s += row[b * cfg.seq_len + t];
      pooled(r, b) = s * inv_t;
    }
  }
  const TaskHead& head = model.heads[task];
  Matrix logits = matmul(head.weight, pooled);
  add_bias(logits, head.bias);
  if (cache) cache->pooled = std::move(pooled);
  return logits;
}

struct Targets {
  std::vector<int> labels;     // classification
  std::vector<double> values;  // regression
};

struct LossGrad {
  double loss = 0.0;
  Encoder grads;
};

// Mean softmax cross-entropy (or mean squared error for regression heads) and its
// gradient with respect to the logits.
inline double loss_from_logits(const Matrix& logits, const Targets& y, bool regression, Matrix* dlogits) {
  const std::size_t batch = logits.cols();
  double loss = 0.0;
  if (dlogits) *dlogits = Matrix(logits.rows(), batch);
  if (regression) {
    PRUNEKIT_REQUIRE(y.values.size() == batch && logits.rows() == 1, "regression targets do not match batch");
    for (std::size_t b = 0; b < batch; ++b) {
      const double e = logits(0, b) - y.values[b];
      loss += e * e;
      if (dlogits) (*dlogits)(0, b) = 2.0 * e / double(batch);
    }
  } else {
    PRUNEKIT_REQUIRE(y.labels.size() == batch, "labels do not match batch");
    const std::size_t c = logits.rows();
    for (std::size_t b = 0; b < batch; ++b) {
      const int label = y.labels[b];
      if (label < 0 || std::size_t(label) >= c) throw ContractViolation("label out of range");
      double mx = logits(0, b);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(j, b));
      double s = 0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(logits(j, b) - mx);
      const double lse = mx + std::log(s);
      loss += lse - logits(std::size_t(label), b);
      if (dlogits)
        for (std::size_t j = 0; j < c; ++j)
          (*dlogits)(j, b) = (std::exp(logits(j, b) - lse) - (j == std::size_t(label) ? 1.0 : 0.0)) / double(batch);
    }
  }
  loss /= double(batch);
  if (!std::isfinite(loss)) throw NumericalFailure("non-finite loss");
  return loss;
}

inline LossGrad loss_and_backward(const Encoder& model, const Matrix& inputs, std::size_t batch,
                                  const Targets& targets, std::size_t task, const BackwardOptions& opt = {}) {
  if (task >= model.heads.size()) throw ContractViolation("loss_and_backward: unknown task index");
  ForwardCache cache;
  const Matrix logits = encoder_forward(model, inputs, batch, task, &cache);
  const TaskHead& head = model.heads[task];
  Matrix dlogits;
  LossGrad out;
  out.loss = loss_from_logits(logits, targets, head.regression, &dlogits);
  out.grads = zeros_like(model);

  TaskHead& gh = out.grads.heads[task];
  gh.weight = matmul_nt(dlogits, cache.pooled);
  gh.bias = Matrix(head.bias.rows(), 1);
  for (std::size_t r = 0; r < dlogits.rows(); ++r)
    for (double v : dlogits.row(r)) gh.bias[r] += v;
  const Matrix dpooled = matmul_tn(head.weight, dlogits);

  const auto& cfg = model.config;
  Matrix dx(cfg.model_dim, batch * cfg.seq_len);
  const double inv_t = 1.0 / double(cfg.seq_len);
  for (std::size_t r = 0; r < cfg.model_dim; ++r)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < cfg.seq_len; ++t) dx(r, b * cfg.seq_len + t) = dpooled(r, b) * inv_t;

  BackwardOptions o = opt;
  o.score_gradients = model.selector == Selector::Movement;
  for (std::size_t i = model.blocks.size(); i-- > 0;)
    dx = detail::block_backward(model.blocks[i], cache.blocks[i], dx, cfg, batch, task, out.grads.blocks[i], o);
  return out;
}

}  // namespace prunekit
