#pragma once

// Oracles shared by the unit tests and the acceptance binary.

#include <cmath>
#include <string>
#include <vector>

#include "prunekit/encoder.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/random.hpp"

namespace testing_support {

using namespace prunekit;

inline EncoderConfig small_config(std::size_t layers = 1) {
  EncoderConfig c;
  c.num_layers = layers;
  c.model_dim = 16;
  c.ffn_dim = 32;
  c.num_heads = 2;
  c.seq_len = 4;
  c.seed = 1234;
  return c;
}

// Random biases / layer norm parameters so every family has a non-trivial gradient.
inline void perturb_fixed_params(Encoder& e, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& b : e.blocks) {
    b.for_each_layer([&](const char*, PrunableLayer& l) {
      for (double& v : l.bias.values()) v = 0.1 * rng.normal();
    });
    for (Matrix* m : {&b.ln1_gain, &b.ln2_gain})
      for (double& v : m->values()) v = 1.0 + 0.1 * rng.normal();
    for (Matrix* m : {&b.ln1_bias, &b.ln2_bias})
      for (double& v : m->values()) v = 0.1 * rng.normal();
  }
  for (auto& h : e.heads)
    for (double& v : h.bias.values()) v = 0.1 * rng.normal();
}

struct Probe {
  Matrix inputs;
  std::size_t batch = 0;
  Targets targets;
};

inline Probe make_probe(const Encoder& e, std::size_t batch, std::size_t task, std::uint64_t seed) {
  Rng rng(seed);
  Probe p;
  p.batch = batch;
  p.inputs = random_normal(e.config.model_dim, batch * e.config.seq_len, rng, 1.0);
  const auto& head = e.heads.at(task);
  for (std::size_t b = 0; b < batch; ++b) {
    if (head.regression)
      p.targets.values.push_back(rng.normal());
    else
      p.targets.labels.push_back(int(rng.uniform_index(head.weight.rows())));
  }
  return p;
}

inline double probe_loss(const Encoder& e, const Probe& p, std::size_t task) {
  const Matrix logits = encoder_forward(e, p.inputs, p.batch, task);
  return loss_from_logits(logits, p.targets, e.heads[task].regression, nullptr);
}

struct FamilyError {
  std::string name;
  double rel_error = 0.0;
};

// Analytic gradient of every trainable tensor against central differences. Score
// tensors are checked against differences taken through the (soft) mask they gate,
// which is what the straight-through estimator hands them.
inline std::vector<FamilyError> gradient_check(const Encoder& model, const Probe& p, std::size_t task, double h) {
  const LossGrad lg = loss_and_backward(model, p.inputs, p.batch, p.targets, task);
  Encoder work = model;
  Encoder grads = lg.grads;
  auto params = trainable_tensors(work);
  auto analytic = trainable_tensors(grads);
  std::vector<FamilyError> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& a = *analytic[i].value;
    if (a.empty()) continue;
    Matrix* target = params[i].value;
    if (params[i].group == ParamGroup::Scores) {
      // locate the mask gated by this score tensor
      const std::string layer_name = params[i].name.substr(0, params[i].name.find(".scores"));
      const auto names = work.prunable_names();
      const auto layers = work.prunable();
      for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == layer_name) {
          const auto pos = params[i].name.find(".task");
          target = pos == std::string::npos ? &layers[j]->mask
                                            : &layers[j]->task_masks[std::stoul(params[i].name.substr(pos + 5))];
        }
    }
    const Matrix saved = *target;
    const Matrix fd = fd_gradient(
        [&](const Matrix& x) {
          *target = x;
          return probe_loss(work, p, task);
        },
        saved, h);
    *target = saved;
    // key biases have an exactly zero gradient; the floor keeps rounding noise from dominating
    const double denom = std::max(frobenius_norm(fd), 1e-6);
    out.push_back({params[i].name, frobenius_norm(a - fd) / denom});
  }
  return out;
}

// Straight-line single-block forward with plain loops, written against the textbook
// definitions rather than the library's helpers.
inline std::vector<std::vector<double>> reference_logits(const Encoder& e, const Matrix& inputs, std::size_t batch,
                                                         std::size_t task) {
  const auto& cfg = e.config;
  const std::size_t d = cfg.model_dim, T = cfg.seq_len, H = cfg.num_heads, dh = d / H;
  using Vec = std::vector<double>;
  auto lin = [](const PrunableLayer& l, const Vec& x) {
    const Matrix w = l.effective_weight(0);
    Vec y(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = l.bias[i];
      for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j) * x[j];
      y[i] = s;
    }
    return y;
  };
  auto ln = [&](const Vec& x, const Matrix& g, const Matrix& b) {
    double mu = 0, var = 0;
    for (double v : x) mu += v;
    mu /= double(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= double(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = g[i] * (x[i] - mu) / std::sqrt(var + 1e-5) + b[i];
    return y;
  };
  std::vector<std::vector<double>> logits;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Vec> x(T, Vec(d));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) x[t][j] = inputs(j, b * T + t);
    for (const auto& blk : e.blocks) {
      std::vector<Vec> q(T), k(T), v(T), att(T, Vec(d, 0.0)), out(T);
      for (std::size_t t = 0; t < T; ++t) {
        q[t] = lin(blk.query, x[t]);
        k[t] = lin(blk.key, x[t]);
        v[t] = lin(blk.value, x[t]);
      }
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < T; ++i) {
          Vec s(T);
          double mx = -1e300, z = 0;
          for (std::size_t j = 0; j < T; ++j) {
            double dotp = 0;
            for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dotp += q[i][c] * k[j][c];
            s[j] = dotp / std::sqrt(double(dh));
            mx = std::max(mx, s[j]);
          }
          for (double& sv : s) z += (sv = std::exp(sv - mx));
          for (std::size_t j = 0; j < T; ++j)
            for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) att[i][c] += s[j] / z * v[j][c];
        }
      for (std::size_t t = 0; t < T; ++t) {
        Vec r1 = lin(blk.attn_out, att[t]);
        for (std::size_t j = 0; j < d; ++j) r1[j] += x[t][j];
        const Vec h1 = ln(r1, blk.ln1_gain, blk.ln1_bias);
        Vec f = lin(blk.ffn_in, h1);
        for (double& fv : f) fv = std::max(fv, 0.0);
        Vec r2 = lin(blk.ffn_out, f);
        for (std::size_t j = 0; j < d; ++j) r2[j] += h1[j];
        out[t] = ln(r2, blk.ln2_gain, blk.ln2_bias);
      }
      x = out;
    }
    Vec pooled(d, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) pooled[j] += x[t][j] / double(T);
    const auto& head = e.heads[task];
    Vec lg(head.weight.rows());
    for (std::size_t c = 0; c < lg.size(); ++c) {
      lg[c] = head.bias[c];
      for (std::size_t j = 0; j < d; ++j) lg[c] += head.weight(c, j) * pooled[j];
    }
    logits.push_back(lg);
  }
  return logits;
}

}  // namespace testing_support
