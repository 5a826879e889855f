#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/layers.hpp"
#include "prunekit/matrix.hpp"
#include "prunekit/random.hpp"

namespace prunekit {

struct BenchShape {
  std::size_t m = 768;
  std::size_t n = 3072;
  std::size_t l = 128;
};

struct BenchOptions {
  std::size_t reps = 30;
  std::size_t warmup = 5;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

struct LatencyStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

struct BenchResult {
  BenchShape shape;
  std::size_t k_prime = 0;
  double density = 1.0;            // min(mn, k'(m+n)) / mn
  double theoretical_ratio = 1.0;  // k'(m+n) l / (m n l)
  LatencyStats dense_ns;
  LatencyStats factored_ns;
  double relative = 1.0;  // factored median / dense median
  std::size_t reps = 0;
  std::size_t inner_iterations = 1;  // products per timed sample
  std::size_t threads = 1;
  bool unfactorized = false;  // k'(m+n) >= mn, so the dense form is used
};

namespace detail {

using BenchClock = std::chrono::steady_clock;

inline double timer_granularity_ns() {
  double best = 1e9;
  for (int i = 0; i < 20; ++i) {
    const auto a = BenchClock::now();
    auto b = BenchClock::now();
    while (b == a) b = BenchClock::now();
    best = std::min(best, std::chrono::duration<double, std::nano>(b - a).count());
  }
  return best;
}

inline LatencyStats quartiles(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto at = [&](double q) {
    const double pos = q * double(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
  };
  return {at(0.5), at(0.25), at(0.75)};
}

// Splits the columns of x across threads; each thread runs the same product on its slice.
template <typename Fn>
void run_split(std::size_t threads, const MatrixF& x, const std::vector<MatrixF>& slices, Fn&& product) {
  if (threads <= 1) {
    product(x);
    return;
  }
  std::vector<std::thread> pool;
  for (const auto& s : slices) pool.emplace_back([&product, &s] { product(s); });
  for (auto& t : pool) t.join();
}

inline std::vector<MatrixF> column_slices(const MatrixF& x, std::size_t threads) {
  std::vector<MatrixF> out;
  if (threads <= 1) return out;
  const std::size_t per = (x.cols() + threads - 1) / threads;
  for (std::size_t c0 = 0; c0 < x.cols(); c0 += per) {
    const std::size_t w = std::min(per, x.cols() - c0);
    MatrixF s(x.rows(), w);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < w; ++c) s(r, c) = x(r, c0 + c);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline std::size_t rank_for_fraction(const BenchShape& s, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractViolation("rank fraction must be in (0, 1]");
  const std::size_t full = std::min(s.m, s.n);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * double(full))), 1, full);
}

// Times the dense product W x against the compact rank-k' form of a random
// factorisation, alternating the two within each repetition.
inline BenchResult bench_one(const BenchShape& s, std::size_t k_prime, const BenchOptions& opt) {
  if (s.m == 0 || s.n == 0 || s.l == 0) throw ContractViolation("bench: empty shape");
  if (k_prime == 0 || k_prime > std::min(s.m, s.n)) throw ContractViolation("bench: retained rank out of range");
  if (opt.reps < 30 || opt.warmup < 5) throw ContractViolation("bench: need at least 30 reps after 5 warmup runs");
  Rng rng(mix_seed(opt.seed, s.m * 1000003 + s.n * 1009 + k_prime));
  BasicFactoredLayer<float> f;
  f.original_rank = std::min(s.m, s.n);
  f.us = cast<float>(random_normal<double>(s.m, k_prime, rng, 1.0 / std::sqrt(double(k_prime))));
  f.v = cast<float>(random_normal<double>(k_prime, s.n, rng, 1.0 / std::sqrt(double(s.n))));
  const MatrixF dense = f.materialize();
  const MatrixF x = cast<float>(random_normal<double>(s.n, s.l, rng, 1.0));
  const BasicCompactLayer<float> compact = maybe_unfactorize(f);

  // Correctness gate before any timing.
  const MatrixF want = matmul(dense, x);
  const MatrixF got = forward_compact(compact, x);
  const double err = relative_error(cast<double>(got), cast<double>(want));
  if (!(err <= 1e-4)) throw NumericalFailure("bench: factored product differs from dense by " + std::to_string(err));

  const auto slices = detail::column_slices(x, opt.threads);
  volatile float sink = 0.0f;
  auto dense_run = [&](const MatrixF& xs) {
    const MatrixF y = matmul(dense, xs);
    sink = sink + y[0];
  };
  auto factored_run = [&](const MatrixF& xs) {
    const MatrixF y = forward_compact(compact, xs);
    sink = sink + y[0];
  };

  for (std::size_t i = 0; i < opt.warmup; ++i) {
    detail::run_split(opt.threads, x, slices, dense_run);
    detail::run_split(opt.threads, x, slices, factored_run);
  }
  // Batch products per sample when one product is short relative to the clock.
  const auto t0 = detail::BenchClock::now();
  detail::run_split(opt.threads, x, slices, factored_run);
  const double one = std::chrono::duration<double, std::nano>(detail::BenchClock::now() - t0).count();
  const double floor_ns = 100.0 * detail::timer_granularity_ns();
  const std::size_t inner = one >= floor_ns ? 1 : static_cast<std::size_t>(std::ceil(floor_ns / std::max(one, 1.0)));

  std::vector<double> dense_ns, factored_ns;
  auto sample = [&](auto& run) {
    const auto a = detail::BenchClock::now();
    for (std::size_t i = 0; i < inner; ++i) detail::run_split(opt.threads, x, slices, run);
    return std::chrono::duration<double, std::nano>(detail::BenchClock::now() - a).count() / double(inner);
  };
  for (std::size_t r = 0; r < opt.reps; ++r) {
    dense_ns.push_back(sample(dense_run));
    factored_ns.push_back(sample(factored_run));
  }

  BenchResult out;
  out.shape = s;
  out.k_prime = k_prime;
  const double mn = double(s.m) * double(s.n);
  out.density = std::min(mn, double(k_prime) * double(s.m + s.n)) / mn;
  out.theoretical_ratio = double(k_prime) * double(s.m + s.n) / mn;
  out.dense_ns = detail::quartiles(dense_ns);
  out.factored_ns = detail::quartiles(factored_ns);
  out.relative = out.factored_ns.median / out.dense_ns.median;
  out.reps = opt.reps;
  out.inner_iterations = inner;
  out.threads = std::max<std::size_t>(opt.threads, 1);
  out.unfactorized = f.prefers_dense();
  return out;
}

// Every (shape, rank fraction) pair, sorted by density (stable in input order).
inline std::vector<BenchResult> bench_grid(const std::vector<BenchShape>& shapes, const std::vector<double>& fractions,
                                           const BenchOptions& opt = {}) {
  if (shapes.empty() || fractions.empty()) throw ContractViolation("bench_grid: empty grid");
  std::vector<BenchResult> out;
  for (const auto& s : shapes)
    for (double f : fractions) out.push_back(bench_one(s, rank_for_fraction(s, f), opt));
  std::stable_sort(out.begin(), out.end(),
                   [](const BenchResult& a, const BenchResult& b) { return a.density < b.density; });
  return out;
}

inline std::string bench_csv(const std::vector<BenchResult>& rows) {
  std::string out =
      "shape_m,shape_n,batch_l,k_prime,density,dense_ns_median,factored_ns_median,relative,theoretical_ratio,reps,"
      "threads\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%.6f,%.1f,%.1f,%.6f,%.6f,%zu,%zu\n", r.shape.m, r.shape.n,
                  r.shape.l, r.k_prime, r.density, r.dense_ns.median, r.factored_ns.median, r.relative,
                  r.theoretical_ratio, r.reps, r.threads);
    out += buf;
  }
  return out;
}

}  // namespace prunekit
