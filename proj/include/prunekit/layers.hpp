#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <variant>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/linalg.hpp"
#include "prunekit/matrix.hpp"
#include "prunekit/types.hpp"

namespace prunekit {

// Multiplication counter used to check the cost of factored products.
struct OpCounter {
  std::uint64_t multiplies = 0;
};

// Compacted rank-pruned weight: us = U'Sigma' (m x k'), v = V' (k' x n).
template <typename T>
struct BasicFactoredLayer {
  BasicMatrix<T> us;
  BasicMatrix<T> v;
  std::size_t original_rank = 0;  // min(m, n) before pruning

  std::size_t rows() const { return us.rows(); }
  std::size_t cols() const { return v.cols(); }
  std::size_t retained_rank() const { return us.cols(); }

  // Storage of the factored form; may exceed rows()*cols().
  std::size_t factored_params() const { return retained_rank() * (rows() + cols()); }
  std::size_t dense_params() const { return rows() * cols(); }
  // Recovering the dense W' is cheaper once k' exceeds mn/(m+n).
  bool prefers_dense() const { return factored_params() >= dense_params(); }

  void validate() const {
    PRUNEKIT_REQUIRE(us.cols() == v.rows(), "factored layer: us/v rank mismatch");
    PRUNEKIT_REQUIRE(retained_rank() >= 1, "factored layer: retained rank must be at least 1");
    PRUNEKIT_REQUIRE(retained_rank() <= original_rank, "factored layer: retained rank exceeds original rank");
  }

  BasicMatrix<T> materialize() const { return matmul(us, v); }
};

using FactoredLayer = BasicFactoredLayer<double>;

// y = us * (v * x); never forms the m x n product.
template <typename T>
BasicMatrix<T> forward_factored(const BasicFactoredLayer<T>& layer, const BasicMatrix<T>& x,
                                OpCounter* counter = nullptr) {
  layer.validate();
  if (x.rows() != layer.cols())
    throw ContractViolation("forward_factored: input has " + std::to_string(x.rows()) + " rows, layer expects " +
                            std::to_string(layer.cols()));
  if (counter)
    counter->multiplies += std::uint64_t(layer.retained_rank()) * (layer.rows() + layer.cols()) * x.cols();
  return matmul(layer.us, matmul(layer.v, x));
}

// Either the factored pair or the recovered dense matrix, whichever is smaller.
template <typename T>
using BasicCompactLayer = std::variant<BasicMatrix<T>, BasicFactoredLayer<T>>;

template <typename T>
BasicCompactLayer<T> maybe_unfactorize(const BasicFactoredLayer<T>& layer) {
  if (layer.prefers_dense()) return layer.materialize();
  return layer;
}

template <typename T>
BasicMatrix<T> forward_compact(const BasicCompactLayer<T>& layer, const BasicMatrix<T>& x) {
  if (const auto* dense = std::get_if<BasicMatrix<T>>(&layer)) return matmul(*dense, x);
  return forward_factored(std::get<BasicFactoredLayer<T>>(layer), x);
}

// Trainable SVD factors: W = u diag(sigma) v. sigma is k x 1.
struct RankFactors {
  Matrix u;
  Matrix sigma;
  Matrix v;
};

// One prunable weight family member. Element-wise layers carry weight/scores/mask of
// shape m x n; rank layers carry factors and k x 1 scores/mask over rank dimensions.
// bias is m x 1 and never pruned.
struct PrunableLayer {
  Structure structure = Structure::ElementWise;
  MaskMode mask_mode = MaskMode::Shared;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Matrix weight;
  RankFactors factors;
  Matrix scores;
  Matrix mask;
  std::vector<Matrix> task_scores;
  std::vector<Matrix> task_masks;
  Matrix bias;
  bool compacted = false;  // rank layers: masked dimensions physically removed

  static PrunableLayer element_wise(Matrix w, Matrix b) {
    PRUNEKIT_REQUIRE(b.rows() == w.rows() && b.cols() == 1, "bias must be m x 1");
    PrunableLayer l;
    l.structure = Structure::ElementWise;
    l.rows = w.rows();
    l.cols = w.cols();
    l.scores = Matrix(w.rows(), w.cols());
    l.mask = Matrix(w.rows(), w.cols(), 1.0);
    l.weight = std::move(w);
    l.bias = std::move(b);
    return l;
  }

  // Factors initialised from the SVD of w; rank scores start at sigma.
  static PrunableLayer rank(const Matrix& w, Matrix b) {
    PRUNEKIT_REQUIRE(b.rows() == w.rows() && b.cols() == 1, "bias must be m x 1");
    SvdTriple s = svd(w);
    PrunableLayer l;
    l.structure = Structure::Rank;
    l.rows = w.rows();
    l.cols = w.cols();
    l.factors.u = std::move(s.u);
    l.factors.sigma = Matrix::column(s.sigma);
    l.factors.v = std::move(s.v);
    l.scores = l.factors.sigma;
    l.mask = Matrix(s.sigma.size(), 1, 1.0);
    l.bias = std::move(b);
    return l;
  }

  // Number of selectable units: entries (element-wise) or rank dimensions.
  std::size_t units() const { return mask.size(); }
  std::size_t original_rank() const { return std::min(rows, cols); }
  std::size_t active_rank() const {
    std::size_t k = 0;
    for (double m : mask.values()) k += m != 0.0;
    return k;
  }

  // Mask used by the forward pass for a task.
  Matrix active_mask(std::size_t task) const {
    switch (mask_mode) {
      case MaskMode::Shared: return mask;
      case MaskMode::Separate:
        PRUNEKIT_REQUIRE(task < task_masks.size(), "no task mask for task index");
        return task_masks[task];
      case MaskMode::Hybrid: {
        PRUNEKIT_REQUIRE(task < task_masks.size(), "no task mask for task index");
        Matrix m = mask;
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], task_masks[task][i]);
        return m;
      }
    }
    return mask;
  }

  // Mask of entries any task can use; what has to be stored.
  Matrix storage_mask() const {
    if (mask_mode == MaskMode::Shared) return mask;
    Matrix m(mask.rows(), mask.cols(), 0.0);
    if (mask_mode == MaskMode::Hybrid) m = mask;
    for (const auto& tm : task_masks)
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], tm[i]);
    return m;
  }

  // Dense m x n weight the forward pass applies.
  Matrix effective_weight(std::size_t task = 0) const {
    if (structure == Structure::ElementWise) return hadamard(weight, active_mask(task));
    Matrix us = factors.u;
    const Matrix m = active_mask(task);
    for (std::size_t r = 0; r < us.rows(); ++r)
      for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= factors.sigma[c] * m[c];
    return matmul(us, factors.v);
  }

  // Inference form of a rank layer restricted to the active dimensions.
  FactoredLayer to_factored() const {
    PRUNEKIT_REQUIRE(structure == Structure::Rank, "to_factored: not a rank layer");
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < mask.size(); ++c)
      if (mask[c] != 0.0) keep.push_back(c);
    FactoredLayer f;
    f.original_rank = original_rank();
    f.us = Matrix(rows, keep.size());
    f.v = Matrix(keep.size(), cols);
    for (std::size_t j = 0; j < keep.size(); ++j) {
      for (std::size_t r = 0; r < rows; ++r) f.us(r, j) = factors.u(r, keep[j]) * factors.sigma[keep[j]];
      for (std::size_t c = 0; c < cols; ++c) f.v(j, c) = factors.v(keep[j], c);
    }
    return f;
  }
};

// (W o M) x + bias, bias broadcast over the columns of x.
inline Matrix forward_masked(const PrunableLayer& layer, const Matrix& x, std::size_t task = 0) {
  PRUNEKIT_REQUIRE(layer.structure == Structure::ElementWise, "forward_masked: layer is not element-wise");
  if (x.rows() != layer.cols) throw ContractViolation("forward_masked: input rows do not match weight columns");
  Matrix y = matmul(hadamard(layer.weight, layer.active_mask(task)), x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double b = layer.bias[r];
    for (double& v : y.row(r)) v += b;
  }
  return y;
}

struct SteGrads {
  Matrix grad_weight;
  Matrix grad_scores;
};

// Straight-through backward of W o Top_k(S): the mask is treated as the identity
// for the scores, so dL/dS = dL/d(W o M) o W.
inline SteGrads ste_backward(const Matrix& grad_wrt_masked, const Matrix& weight, const Matrix& mask,
                             bool update_masked_weights = false) {
  PRUNEKIT_REQUIRE(grad_wrt_masked.same_shape(weight) && weight.same_shape(mask), "ste_backward: shape mismatch");
  SteGrads g{update_masked_weights ? grad_wrt_masked : hadamard(grad_wrt_masked, mask),
             hadamard(grad_wrt_masked, weight)};
  return g;
}

inline SteGrads ste_backward(const Matrix& grad_wrt_masked, const PrunableLayer& layer,
                             bool update_masked_weights = false) {
  PRUNEKIT_REQUIRE(layer.structure == Structure::ElementWise, "ste_backward: layer is not element-wise");
  return ste_backward(grad_wrt_masked, layer.weight, layer.mask, update_masked_weights);
}

struct LayerCache {
  Matrix input;    // n x l
  Matrix mask;     // mask applied in this pass
  Matrix projected;  // rank layers: v * x (k x l)
};

inline void add_bias(Matrix& y, const Matrix& bias) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double b = bias[r];
    for (double& v : y.row(r)) v += b;
  }
}

inline Matrix layer_forward(const PrunableLayer& layer, const Matrix& x, std::size_t task, LayerCache* cache) {
  if (x.rows() != layer.cols) throw ContractViolation("layer_forward: input dimension mismatch");
  Matrix mask = layer.active_mask(task);
  Matrix y;
  if (layer.structure == Structure::ElementWise) {
    y = matmul(hadamard(layer.weight, mask), x);
    if (cache) cache->input = x;
  } else {
    Matrix z = matmul(layer.factors.v, x);
    Matrix scaled = z;
    for (std::size_t r = 0; r < scaled.rows(); ++r) {
      const double s = layer.factors.sigma[r] * mask[r];
      for (double& v : scaled.row(r)) v *= s;
    }
    y = matmul(layer.factors.u, scaled);
    if (cache) {
      cache->input = x;
      cache->projected = std::move(z);
    }
  }
  add_bias(y, layer.bias);
  if (cache) cache->mask = std::move(mask);
  return y;
}

struct BackwardOptions {
  bool update_masked_weights = false;
  bool score_gradients = false;  // movement selector: produce score gradients
};

// Accumulates parameter gradients into `grads` (a zero-initialised layer of the
// same shape) and returns dL/dx.
inline Matrix layer_backward(const PrunableLayer& layer, const LayerCache& cache, const Matrix& dy,
                             std::size_t task, PrunableLayer& grads, const BackwardOptions& opt) {
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double s = 0;
    for (double v : dy.row(r)) s += v;
    grads.bias[r] += s;
  }
  const bool task_scores = layer.mask_mode != MaskMode::Shared;
  const bool shared_scores = layer.mask_mode != MaskMode::Separate;

  if (layer.structure == Structure::ElementWise) {
    const Matrix w_eff = hadamard(layer.weight, cache.mask);
    const Matrix d_eff = matmul_nt(dy, cache.input);
    SteGrads ste = ste_backward(d_eff, layer.weight, cache.mask, opt.update_masked_weights);
    grads.weight += ste.grad_weight;
    if (opt.score_gradients) {
      if (shared_scores) grads.scores += ste.grad_scores;
      if (task_scores) {
        Matrix& ts = grads.task_scores.at(task);
        if (ts.empty()) ts = Matrix(layer.rows, layer.cols);
        ts += ste.grad_scores;
      }
    }
    return matmul_tn(w_eff, dy);
  }

  // y = u * diag(sigma o m) * z with z = v x.
  const std::size_t k = layer.factors.sigma.size();
  Matrix scaled = cache.projected;
  for (std::size_t r = 0; r < k; ++r) {
    const double s = layer.factors.sigma[r] * cache.mask[r];
    for (double& v : scaled.row(r)) v *= s;
  }
  grads.factors.u += matmul_nt(dy, scaled);
  Matrix d_scaled = matmul_tn(layer.factors.u, dy);  // k x l
  Matrix d_z = d_scaled;
  for (std::size_t r = 0; r < k; ++r) {
    const double g = detail::dot(d_scaled.row(r), cache.projected.row(r));  // dL/d(sigma_r m_r)
    grads.factors.sigma[r] += g * cache.mask[r];
    if (opt.score_gradients) grads.scores[r] += g * layer.factors.sigma[r];
    const double s = layer.factors.sigma[r] * cache.mask[r];
    for (double& v : d_z.row(r)) v *= s;
  }
  grads.factors.v += matmul_nt(d_z, cache.input);
  return matmul_tn(layer.factors.v, d_z);
}

// Zero tensors with the layer's shapes. Task-score gradients start empty and are
// only allocated for the task a step touches.
inline PrunableLayer zeros_like(const PrunableLayer& l) {
  PrunableLayer z;
  z.structure = l.structure;
  z.mask_mode = l.mask_mode;
  z.rows = l.rows;
  z.cols = l.cols;
  z.compacted = l.compacted;
  z.weight = Matrix(l.weight.rows(), l.weight.cols());
  z.factors.u = Matrix(l.factors.u.rows(), l.factors.u.cols());
  z.factors.sigma = Matrix(l.factors.sigma.rows(), l.factors.sigma.cols());
  z.factors.v = Matrix(l.factors.v.rows(), l.factors.v.cols());
  z.scores = Matrix(l.scores.rows(), l.scores.cols());
  z.task_scores.assign(l.task_scores.size(), Matrix{});
  z.bias = Matrix(l.bias.rows(), l.bias.cols());
  return z;
}

}  // namespace prunekit
