#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prunekit/encoder.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/matrix.hpp"
#include "prunekit/types.hpp"

namespace prunekit {

using LrMap = std::map<ParamGroup, double>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-tensor state keyed by tensor name. Tensors whose gradient is empty
// are skipped entirely (no moment decay, no step count), so parameters a step did
// not touch stay bit-identical.
class Adam {
 public:
  explicit Adam(LrMap lr, AdamConfig cfg = {}) : lr_(std::move(lr)), cfg_(cfg) {}

  void step(std::span<const TensorRef> params, std::span<const TensorRef> grads) {
    PRUNEKIT_REQUIRE(params.size() == grads.size(), "adam: parameter/gradient lists differ in length");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& g = *grads[i].value;
      if (g.empty()) continue;
      Matrix& p = *params[i].value;
      PRUNEKIT_REQUIRE(p.same_shape(g), "adam: gradient shape mismatch for " + params[i].name);
      auto lr_it = lr_.find(params[i].group);
      if (lr_it == lr_.end())
        throw ContractViolation("adam: no learning rate for group '" + std::string(to_string(params[i].group)) + "'");
      State& s = state_[params[i].name];
      if (!s.m.same_shape(p)) {
        s.m = Matrix(p.rows(), p.cols());
        s.v = Matrix(p.rows(), p.cols());
        s.t = 0;
      }
      ++s.t;
      const double lr = lr_it->second;
      const double c1 = 1.0 - std::pow(cfg_.beta1, double(s.t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, double(s.t));
      for (std::size_t j = 0; j < p.size(); ++j) {
        s.m[j] = cfg_.beta1 * s.m[j] + (1.0 - cfg_.beta1) * g[j];
        s.v[j] = cfg_.beta2 * s.v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = s.m[j] / c1;
        const double vhat = s.v[j] / c2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void step(Encoder& model, Encoder& grads) {
    auto p = trainable_tensors(model);
    auto g = trainable_tensors(grads);
    step(p, g);
  }

  // Keeps the listed rows (axis 0) or columns (axis 1) of a tensor's moments; used
  // when rank dimensions are physically removed.
  void compact(const std::string& name, int axis, std::span<const std::size_t> keep) {
    auto it = state_.find(name);
    if (it == state_.end()) return;
    it->second.m = select(it->second.m, axis, keep);
    it->second.v = select(it->second.v, axis, keep);
  }

  const LrMap& learning_rates() const { return lr_; }

  static Matrix select(const Matrix& m, int axis, std::span<const std::size_t> keep) {
    if (axis == 0) {
      Matrix out(keep.size(), m.cols());
      for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(keep[i], c);
      return out;
    }
    Matrix out(m.rows(), keep.size());
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t i = 0; i < keep.size(); ++i) out(r, i) = m(r, keep[i]);
    return out;
  }

 private:
  struct State {
    Matrix m, v;
    long t = 0;
  };
  LrMap lr_;
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace prunekit
