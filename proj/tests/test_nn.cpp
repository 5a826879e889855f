#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "prunekit/encoder.hpp"
#include "prunekit/layers.hpp"
#include "prunekit/optim.hpp"
#include "support.hpp"

using namespace prunekit;
namespace ts = testing_support;

namespace {

Encoder classifier(const EncoderConfig& cfg, const EncoderInit& init = {}) {
  return make_encoder(cfg, {{"a", 3, false}, {"b", 1, true}}, init);
}

}  // namespace

TEST(ForwardMasked, DiagonalMaskByHand) {
  PrunableLayer l = PrunableLayer::element_wise(Matrix{{1, 2}, {3, 4}}, Matrix(2, 1));
  l.mask = Matrix{{1, 0}, {0, 1}};
  EXPECT_EQ(forward_masked(l, Matrix{{1}, {1}}), (Matrix{{1}, {4}}));
}

TEST(ForwardMasked, OnesMaskIsDense) {
  Rng rng(3);
  const Matrix w = random_normal(5, 4, rng, 1.0), b = random_normal(5, 1, rng, 1.0), x = random_normal(4, 6, rng, 1.0);
  const PrunableLayer l = PrunableLayer::element_wise(w, b);
  Matrix want = matmul(w, x);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 6; ++c) want(r, c) += b[r];
  EXPECT_LE(max_abs(forward_masked(l, x) - want), 1e-14);
}

TEST(ForwardMasked, ZeroMaskGivesBias) {
  Rng rng(4);
  PrunableLayer l = PrunableLayer::element_wise(random_normal(3, 2, rng, 1.0), Matrix{{1}, {2}, {3}});
  l.mask = Matrix(3, 2);
  const Matrix y = forward_masked(l, random_normal(2, 4, rng, 1.0));
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(y(r, c), double(r + 1));
}

TEST(ForwardMasked, DimensionMismatch) {
  const PrunableLayer l = PrunableLayer::element_wise(Matrix(2, 3), Matrix(2, 1));
  EXPECT_THROW(forward_masked(l, Matrix(2, 1)), ContractViolation);
}

TEST(ForwardFactored, RankOneByHand) {
  FactoredLayer f;
  f.us = Matrix{{1}, {0}};
  f.v = Matrix{{1, 1}};
  f.original_rank = 2;
  EXPECT_EQ(forward_factored(f, Matrix{{1}, {1}}), (Matrix{{2}, {0}}));
}

TEST(ForwardFactored, FullRankMatchesDense) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Matrix w = random_normal(12, 7, rng, 1.0), x = random_normal(7, 9, rng, 1.0);
    const FactoredLayer f = PrunableLayer::rank(w, Matrix(12, 1)).to_factored();
    EXPECT_EQ(f.retained_rank(), 7u);
    EXPECT_LE(relative_error(forward_factored(f, x), matmul(w, x)), 1e-6);
  }
}

TEST(ForwardFactored, OperationCountScalesWithRetainedRank) {
  Rng rng(8);
  const std::size_t m = 20, n = 30, l = 5;
  const Matrix x = random_normal(n, l, rng, 1.0);
  for (std::size_t k : {1u, 4u, 10u}) {
    FactoredLayer f;
    f.us = random_normal(m, k, rng, 1.0);
    f.v = random_normal(k, n, rng, 1.0);
    f.original_rank = 20;
    OpCounter ops;
    forward_factored(f, x, &ops);
    EXPECT_EQ(ops.multiplies, k * (m + n) * l);
  }
}

TEST(ForwardFactored, ZeroRetainedRankRejected) {
  FactoredLayer f;
  f.us = Matrix(3, 0);
  f.v = Matrix(0, 4);
  f.original_rank = 3;
  EXPECT_THROW(forward_factored(f, Matrix(4, 1)), ContractViolation);
}

TEST(ForwardFactored, DimensionMismatch) {
  FactoredLayer f;
  f.us = Matrix(3, 1, 1.0);
  f.v = Matrix(1, 4, 1.0);
  f.original_rank = 3;
  EXPECT_THROW(forward_factored(f, Matrix(3, 1)), ContractViolation);
}

TEST(Encoder, ZeroWeightsGiveHeadBias) {
  Encoder e = classifier(ts::small_config());
  for (auto* l : e.prunable()) {
    l->weight.fill(0.0);
    l->bias.fill(0.0);
  }
  for (auto& b : e.blocks) {
    b.ln1_gain.fill(0.0);
    b.ln2_gain.fill(0.0);
  }
  for (auto& h : e.heads) {
    h.weight.fill(0.0);
    for (std::size_t i = 0; i < h.bias.size(); ++i) h.bias[i] = 0.5 + double(i);
  }
  Rng rng(1);
  const Matrix x = random_normal(16, 3 * 4, rng, 1.0);
  const Matrix logits = encoder_forward(e, x, 3, 0);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logits(c, b), 0.5 + double(c));
}

TEST(Encoder, IdenticalInputsIdenticalLogits) {
  const Encoder e = classifier(ts::small_config(2));
  Rng rng(2);
  const Matrix one = random_normal(16, 4, rng, 1.0);
  Matrix two(16, 8);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 4; ++c) two(r, c) = two(r, c + 4) = one(r, c);
  const Matrix logits = encoder_forward(e, two, 2, 0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logits(c, 0), logits(c, 1));
  EXPECT_EQ(encoder_forward(e, two, 2, 0), logits);
}

TEST(Encoder, MatchesStraightLineReimplementation) {
  for (Structure s : {Structure::ElementWise, Structure::Rank}) {
    Encoder e = classifier(ts::small_config(1), {Selector::Magnitude, s, MaskMode::Shared});
    ts::perturb_fixed_params(e, 5);
    const ts::Probe p = ts::make_probe(e, 5, 0, 6);
    const Matrix logits = encoder_forward(e, p.inputs, p.batch, 0);
    const auto want = ts::reference_logits(e, p.inputs, p.batch, 0);
    for (std::size_t b = 0; b < p.batch; ++b)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(logits(c, b), want[b][c], 1e-10);
  }
}

TEST(Encoder, PermutationEquivariantOverBatch) {
  const Encoder e = classifier(ts::small_config(2));
  const ts::Probe p = ts::make_probe(e, 6, 0, 9);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Matrix shuffled(16, 6 * 4);
  for (std::size_t b = 0; b < 6; ++b)
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t r = 0; r < 16; ++r) shuffled(r, b * 4 + t) = p.inputs(r, perm[b] * 4 + t);
  const Matrix a = encoder_forward(e, p.inputs, 6, 0), b = encoder_forward(e, shuffled, 6, 0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b(c, i), a(c, perm[i]), 1e-12);
}

TEST(Encoder, ShapeMismatch) {
  const Encoder e = classifier(ts::small_config());
  EXPECT_THROW(encoder_forward(e, Matrix(15, 8), 2, 0), ContractViolation);
  EXPECT_THROW(encoder_forward(e, Matrix(16, 7), 2, 0), ContractViolation);
}

TEST(Encoder, HeadsDivideModelDim) {
  EncoderConfig c = ts::small_config();
  c.num_heads = 3;
  EXPECT_THROW(classifier(c), ConfigError);
}

TEST(Loss, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 3u, 10u}) {
    Targets y;
    y.labels = {0, int(c - 1)};
    EXPECT_NEAR(loss_from_logits(Matrix(c, 2, 0.7), y, false, nullptr), std::log(double(c)), 1e-14);
  }
}

TEST(Loss, SaturatedGradientVanishes) {
  Matrix logits(3, 1, -40.0);
  logits(1, 0) = 40.0;
  Targets y;
  y.labels = {1};
  Matrix d;
  loss_from_logits(logits, y, false, &d);
  EXPECT_LT(frobenius_norm(d), 1e-8);
}

TEST(Loss, MarginTwentyIsNearZero) {
  Matrix logits(4, 1, 0.0);
  logits(2, 0) = 20.0;
  Targets y;
  y.labels = {2};
  const double loss = loss_from_logits(logits, y, false, nullptr);
  EXPECT_GE(loss, 0.0);
  EXPECT_LE(loss, 1e-6 * 4);  // three competitors at margin 20
  Matrix two(2, 1, 0.0);
  two(0, 0) = 20.0;
  y.labels = {0};
  EXPECT_LE(loss_from_logits(two, y, false, nullptr), 1e-6);
}

TEST(Loss, Errors) {
  Targets y;
  y.labels = {3};
  EXPECT_THROW(loss_from_logits(Matrix(3, 1), y, false, nullptr), ContractViolation);
  y.labels = {0};
  Matrix bad(3, 1);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(loss_from_logits(bad, y, false, nullptr), NumericalFailure);
  const Encoder e = classifier(ts::small_config());
  const ts::Probe p = ts::make_probe(e, 2, 0, 1);
  EXPECT_THROW(loss_and_backward(e, p.inputs, p.batch, p.targets, 7), ContractViolation);
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<Selector, Structure, std::size_t>> {};

TEST_P(GradientCheck, AnalyticMatchesFiniteDifference) {
  const auto [sel, st, task] = GetParam();
  Encoder e = classifier(ts::small_config(1), {sel, st, MaskMode::Shared});
  ts::perturb_fixed_params(e, 17);
  const ts::Probe p = ts::make_probe(e, 3, task, 23);
  const auto errs = ts::gradient_check(e, p, task, 1e-5);
  std::size_t checked = 0;
  for (const auto& fe : errs) {
    EXPECT_LT(fe.rel_error, 1e-4) << fe.name;
    ++checked;
  }
  // 6 layers x (weight or u/sigma/v, bias[, scores]) + 4 norms + 2 head tensors
  const std::size_t per_layer = (st == Structure::Rank ? 4 : 2) + (sel == Selector::Movement ? 1 : 0);
  EXPECT_EQ(checked, 6 * per_layer + 4 + 2);
}

INSTANTIATE_TEST_SUITE_P(AllFamilies, GradientCheck,
                         ::testing::Combine(::testing::Values(Selector::Magnitude, Selector::Movement),
                                            ::testing::Values(Structure::ElementWise, Structure::Rank),
                                            ::testing::Values(std::size_t(0), std::size_t(1))));

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam opt({{ParamGroup::Weights, 0.1}});
  Matrix p{{2.0}}, g{{1.0}};
  const std::vector<TensorRef> ps{{"x", ParamGroup::Weights, &p}}, gs{{"x", ParamGroup::Weights, &g}};
  opt.step(ps, gs);
  // m_hat = 1, v_hat = 1, step = 0.1 / (1 + 1e-8)
  EXPECT_NEAR(p[0], 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Encoder e = classifier(ts::small_config());
  const Encoder before = e;
  Encoder g = zeros_like(e);
  for (auto& h : g.heads) {
    h.weight = Matrix(h.task_id == "a" ? 3 : 1, 16);
    h.bias = Matrix(h.weight.rows(), 1);
  }
  Adam opt({{ParamGroup::Weights, 0.1}, {ParamGroup::Heads, 0.1}});
  opt.step(e, g);
  auto a = trainable_tensors(e);
  auto b = trainable_tensors(const_cast<Encoder&>(before));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
}

TEST(Adam, MissingGroupThrows) {
  Adam opt({{ParamGroup::Weights, 0.1}});
  Matrix p{{1.0}}, g{{1.0}};
  const std::vector<TensorRef> ps{{"s", ParamGroup::Sigma, &p}}, gs{{"s", ParamGroup::Sigma, &g}};
  EXPECT_THROW(opt.step(ps, gs), ContractViolation);
}

TEST(Adam, GroupRatesDiffer) {
  Adam opt({{ParamGroup::Weights, 1e-5}, {ParamGroup::Scores, 1e-5}, {ParamGroup::Heads, 1e-5}, {ParamGroup::Sigma, 5e-3}});
  Matrix w{{0.0}}, s{{0.0}}, gw{{0.3}}, gs{{0.3}};
  const std::vector<TensorRef> ps{{"w", ParamGroup::Weights, &w}, {"s", ParamGroup::Sigma, &s}};
  const std::vector<TensorRef> gr{{"w", ParamGroup::Weights, &gw}, {"s", ParamGroup::Sigma, &gs}};
  for (int i = 0; i < 3; ++i) opt.step(ps, gr);
  EXPECT_NEAR(w[0], -3e-5, 1e-9);
  EXPECT_NEAR(s[0], -1.5e-2, 1e-6);
  EXPECT_GT(std::abs(s[0]) / std::abs(w[0]), 400.0);
}
