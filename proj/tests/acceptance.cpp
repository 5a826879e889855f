// Acceptance checks 1-11. Prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "prunekit/cli.hpp"
#include "prunekit/prunekit.hpp"
#include "support.hpp"

using namespace prunekit;
namespace ts = testing_support;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 ------------------------------------------------------------------------
Outcome gradient_oracle() {
  double worst = 0;
  std::string worst_name;
  std::size_t families = 0;
  for (Selector sel : {Selector::Magnitude, Selector::Movement})
    for (Structure st : {Structure::ElementWise, Structure::Rank})
      for (std::size_t task : {0u, 1u}) {
        Encoder e = make_encoder(ts::small_config(1), {{"cls", 3, false}, {"reg", 1, true}}, {sel, st});
        ts::perturb_fixed_params(e, 31 + task);
        const ts::Probe p = ts::make_probe(e, 3, task, 41 + task);
        for (const auto& fe : ts::gradient_check(e, p, task, 1e-5)) {
          ++families;
          if (fe.rel_error > worst) {
            worst = fe.rel_error;
            worst_name = fe.name;
          }
        }
      }
  return {worst < 1e-4, fmt("%zu tensor checks, worst relative error %.2e (%s), tol 1e-4", families, worst,
                            worst_name.c_str())};
}

// 2 ------------------------------------------------------------------------
Outcome ste_contract() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(mix_seed(seed, 2));
    PrunableLayer l = PrunableLayer::element_wise(random_normal(4, 4, rng, 1.0), Matrix(4, 1));
    for (double& m : l.mask.values()) m = double(rng.uniform_index(2));
    const std::size_t cols = 1 + rng.uniform_index(3);
    const Matrix x = random_normal(4, cols, rng, 1.0), up = random_normal(4, cols, rng, 1.0);
    LayerCache cache;
    layer_forward(l, x, 0, &cache);
    PrunableLayer g = zeros_like(l);
    layer_backward(l, cache, up, 0, g, {false, true});
    // L = sum_il up_il * sum_j W_ij M_ij x_jl
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double dw = 0, ds = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          dw += up(i, c) * l.mask(i, j) * x(j, c);
          ds += up(i, c) * l.weight(i, j) * x(j, c);
        }
        worst = std::max({worst, std::abs(g.weight(i, j) - dw), std::abs(g.scores(i, j) - ds)});
      }
  }
  return {worst <= 1e-12, fmt("100 cases, max abs deviation %.2e, tol 1e-12", worst)};
}

// 3 ------------------------------------------------------------------------
Outcome svd_suite() {
  double rec = 0, orth = 0;
  bool sorted = true;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(mix_seed(seed, 3));
    std::size_t m = 1 + rng.uniform_index(64), n = 1 + rng.uniform_index(128);
    if (seed % 2) std::swap(m, n);
    if (seed == 0) m = 64, n = 128;
    if (seed == 1) m = 128, n = 64;
    Matrix w = random_normal(m, n, rng, 1.0);
    if (seed % 10 == 3 && std::min(m, n) > 2) w = matmul(random_normal(m, 2, rng, 1.0), random_normal(2, n, rng, 1.0));
    const SvdTriple s = svd(w);
    rec = std::max(rec, frobenius_norm(s.reconstruct() - w) / std::max(frobenius_norm(w), 1e-300));
    orth = std::max(orth, max_abs(matmul_tn(s.u, s.u) - Matrix::identity(s.u.cols())));
    orth = std::max(orth, max_abs(matmul_nt(s.v, s.v) - Matrix::identity(s.v.rows())));
    for (std::size_t i = 1; i < s.sigma.size(); ++i) sorted = sorted && s.sigma[i] <= s.sigma[i - 1];
  }
  return {rec <= 1e-8 && orth <= 1e-8 && sorted,
          fmt("200 matrices, reconstruction %.2e, orthogonality %.2e, sigma sorted: %s", rec, orth,
              sorted ? "yes" : "no")};
}

// 4 ------------------------------------------------------------------------
struct PoolStats {
  std::size_t effective = 0, dense = 0, floor = 0, step = 0;
};

std::vector<PoolStats> pool_stats(const Encoder& e, Scope scope) {
  std::vector<PoolStats> out;
  const auto layers = e.prunable();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (scope == Scope::Local || out.empty()) out.emplace_back();
    PoolStats& p = out.back();
    p.effective += effective_param_count(*layers[i]);
    p.dense += layers[i]->rows * layers[i]->cols;
    p.floor += layers[i]->rows + layers[i]->cols;
    p.step = std::max(p.step, layers[i]->rows + layers[i]->cols);
  }
  return out;
}

// Element-wise pools hit the count exactly. Rank pools count parameters, which move
// in steps of one rank dimension (m + n), and can never drop below one dimension per
// layer.
bool pool_ok(const PoolStats& p, Structure st, double k) {
  const std::size_t want = kept_count(k, p.dense);
  if (st == Structure::ElementWise) return p.effective == want;
  const std::size_t target = std::max(want, p.floor);
  return p.effective <= target && target - p.effective < p.step;
}

Outcome mask_cardinality() {
  const double densities[] = {1.0, 0.5, 0.2, 0.1, 0.03};
  EncoderConfig wide;
  wide.num_layers = 1;
  wide.model_dim = 128;
  wide.ffn_dim = 256;
  wide.num_heads = 4;
  wide.seq_len = 2;
  wide.seed = 4;
  std::size_t checks = 0, failures = 0;
  std::string first_failure;
  auto fail = [&](const std::string& what) {
    ++failures;
    if (first_failure.empty()) first_failure = what;
  };

  for (Selector sel : {Selector::Magnitude, Selector::Movement})
    for (Structure st : {Structure::ElementWise, Structure::Rank}) {
      const Encoder base = make_encoder(wide, {{"a", 2, false}}, {sel, st});
      for (Scope sc : {Scope::Global, Scope::Local})
        for (double k : densities) {
          // per-pool counts straight after a prune step
          Encoder e = base;
          if (sel == Selector::Movement) {
            Rng rng(mix_seed(7, std::size_t(k * 1000)));
            for (auto* l : e.prunable())
              for (double& s : l->scores.values()) s = rng.normal();
          }
          apply_prune_step(e, sc, k);
          for (const auto& p : pool_stats(e, sc)) {
            ++checks;
            if (!pool_ok(p, st, k))
              fail(fmt("%s/%s/%s k=%.2f pool effective %zu of %zu", std::string(to_string(sel)).c_str(),
                       std::string(to_string(st)).c_str(), std::string(to_string(sc)).c_str(), k, p.effective,
                       p.dense));
          }
        }
      // one-tensor model: Global == Local
      for (double k : densities) {
        const PrunableLayer& l = base.blocks[0].ffn_in;
        const Matrix s = sel == Selector::Movement ? l.scores : magnitude_scores(l);
        const Matrix* one[] = {&s};
        ++checks;
        if (st == Structure::ElementWise) {
          if (topk_mask(one, k, Scope::Global)[0] != topk_mask(one, k, Scope::Local)[0]) fail("scope mismatch");
        } else {
          const RankShape shape{l.rows, l.cols};
          Encoder e = base;
          apply_prune_step(e, Scope::Local, k);
          if (rank_budget_masks(one, std::span(&shape, 1), k)[0] != e.blocks[0].ffn_in.mask) fail("rank scope mismatch");
        }
      }
    }

  // trained models end at the configured density
  for (Selector sel : {Selector::Magnitude, Selector::Movement})
    for (Structure st : {Structure::ElementWise, Structure::Rank})
      for (Scope sc : {Scope::Global, Scope::Local})
        for (double k : densities) {
          ExperimentConfig c;
          c.model = wide;
          c.prune = {sel, st, sc, k, 3, 1, 1};
          c.data.dev_size = 16;
          c.training.batch_size = 16;
          c.tasks = {{"a", TaskKind::Classification, 2, 32, 9, 1.0}};
          const RunOutcome out = train(c);
          for (const auto& p : pool_stats(out.model, sc)) {
            ++checks;
            if (!pool_ok(p, st, k))
              fail(fmt("trained %s/%s/%s k=%.2f effective %zu of %zu", std::string(to_string(sel)).c_str(),
                       std::string(to_string(st)).c_str(), std::string(to_string(sc)).c_str(), k, p.effective,
                       p.dense));
          }
        }
  return {failures == 0, fmt("%zu checks over 8 settings x 5 densities, %zu failures%s%s", checks, failures,
                             first_failure.empty() ? "" : ": ", first_failure.c_str())};
}

// 5 ------------------------------------------------------------------------
Outcome table2_anchor() {
  std::size_t eff = 0, dense = 0;
  const std::pair<std::size_t, std::size_t> shapes[] = {{768, 768}, {768, 768}, {768, 768}, {768, 768},
                                                        {768, 3072}, {3072, 768}};
  for (int layer = 0; layer < 12; ++layer)
    for (auto [m, n] : shapes) {
      eff += rank_param_count(m, n, 38);
      dense += m * n;
    }
  const double frac = double(eff) / double(dense);
  return {frac >= 0.071 && frac <= 0.076, fmt("rank 38 keeps %.4f%% of 12-layer weights, band [7.1%%, 7.6%%]", 100 * frac)};
}

// 6 ------------------------------------------------------------------------
Outcome footnote_crossover() {
  std::size_t checks = 0;
  bool ok = true;
  const std::pair<std::size_t, std::size_t> shapes[] = {{8, 8}, {1, 17}, {16, 64}, {64, 16}, {96, 96}, {33, 7}};
  for (auto [m, n] : shapes) {
    Rng rng(m * 131 + n);
    PrunableLayer l = PrunableLayer::rank(random_normal(m, n, rng, 1.0), Matrix(m, 1));
    const std::size_t k = std::min(m, n);
    for (std::size_t keep = 1; keep <= k; ++keep) {
      l.mask = Matrix(k, 1);
      for (std::size_t i = 0; i < keep; ++i) l.mask[k - 1 - i] = 1.0;
      const FactoredLayer f = l.to_factored();
      ok = ok && effective_param_count(l) <= m * n && effective_param_count(f) <= m * n &&
           effective_param_count(f) == std::min(m * n, keep * (m + n));
      checks += 2;
    }
  }
  return {ok, fmt("%zu counts over 6 shapes and every retained rank, none above m*n", checks)};
}

// 7 ------------------------------------------------------------------------
Outcome latency_trend() {
  const BenchShape shape{768, 3072, 128};
  const BenchOptions opt;
  const std::size_t full = 768;
  std::vector<std::size_t> ranks{345, 300, 230, 154, 77, 38};
  bool faster = true;
  std::string trend;
  double speedup90 = 0;
  for (std::size_t k : ranks) {
    const BenchResult r = bench_one(shape, k, opt);
    faster = faster && r.relative < 1.0;
    trend += fmt(" k'=%zu:%.3f", k, r.relative);
    if (k == 77) speedup90 = 1.0 / r.relative;
  }
  const BenchResult control = bench_one(shape, full, opt);
  const bool control_ok = std::abs(control.relative - 1.0) <= 0.05;
  return {faster && speedup90 >= 1.5 && control_ok,
          fmt("relative runtime%s; speedup at 90%% rank sparsity %.2fx (>= 1.5x); dense control %.3f (1 +- 0.05)",
              trend.c_str(), speedup90, control.relative)};
}

// 8 and 9 ------------------------------------------------------------------
struct SeedRuns {
  double mt_macro = 0, mixture_macro = 0, mixture_size = 0, mt_size = 0;
  bool flagged = false;
  double mt_small = 0, st_small = 0, mt_full_task = 0, st_full_task = 0;
};

constexpr std::size_t kSeeds = 5;
constexpr double kMultitaskDensity = 0.15;
const std::vector<double> kMemberDensities{0.03, 0.05, 0.07};
constexpr std::size_t kShrunkTask = 2;

std::vector<SeedRuns>& seed_runs() {
  static std::vector<SeedRuns> runs;
  return runs;
}

void ensure_multitask_runs(bool need_mixtures, bool need_low_resource) {
  static bool have_mix = false, have_low = false;
  auto& runs = seed_runs();
  runs.resize(kSeeds);
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    SeedRuns& sr = runs[seed];
    ExperimentConfig c = preset_desk3(seed);
    c.prune.final_density = kMultitaskDensity;
    const auto data = build_datasets(c);
    RunOptions ro;
    ro.data = &data;
    if ((need_mixtures && !have_mix) || (need_low_resource && !have_low)) {
      if (sr.mt_size == 0) {
        const RunReport mt = run_experiment(c, ro);
        sr.mt_macro = mt.macro;
        sr.mt_size = mt.param_fraction;
        sr.mt_full_task = mt.dev_metric[kShrunkTask];
      }
    }
    if (need_mixtures && !have_mix) {
      std::vector<std::vector<RunSummary>> per_task(c.tasks.size());
      for (std::size_t t = 0; t < c.tasks.size(); ++t) {
        const std::vector<TaskData> one{data[t]};
        RunOptions so;
        so.data = &one;
        for (double d : kMemberDensities) {
          ExperimentConfig s = single_task(c, t);
          s.prune.final_density = d;
          per_task[t].push_back(RunSummary::from_report(c.tasks[t].id + "@" + csv_number(d), run_experiment(s, so)));
        }
      }
      const auto frontier = pareto_frontier(enumerate_mixtures(per_task));
      BudgetPoint mt;
      mt.size = sr.mt_size;
      mt.metric = sr.mt_macro;
      const BudgetRow row = budget_compare({mt}, frontier).front();
      sr.flagged = row.flagged();
      if (!sr.flagged) {
        sr.mixture_macro = row.mixture->metric;
        sr.mixture_size = row.mixture->size;
      }
    }
    if (need_low_resource && !have_low) {
      ExperimentConfig small = c;
      small.tasks[kShrunkTask].train_size = std::size_t(std::llround(0.05 * double(c.tasks[kShrunkTask].train_size)));
      auto small_data = data;
      {
        // the first n rows of the full split, as generated with the smaller size
        const auto regenerated = build_datasets(small);
        small_data[kShrunkTask] = regenerated[kShrunkTask];
      }
      RunOptions mo;
      mo.data = &small_data;
      sr.mt_small = run_experiment(small, mo).dev_metric[kShrunkTask];
      const std::vector<TaskData> one_small{small_data[kShrunkTask]}, one_full{data[kShrunkTask]};
      RunOptions so;
      so.data = &one_small;
      sr.st_small = run_experiment(single_task(small, kShrunkTask), so).dev_metric[0];
      so.data = &one_full;
      sr.st_full_task = run_experiment(single_task(c, kShrunkTask), so).dev_metric[0];
    }
  }
  have_mix = have_mix || need_mixtures;
  have_low = have_low || need_low_resource;
}

Outcome planted_multitask_advantage() {
  ensure_multitask_runs(true, false);
  std::size_t wins = 0;
  std::string per;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const SeedRuns& r = seed_runs()[s];
    const bool win = !r.flagged && r.mt_macro >= r.mixture_macro;
    wins += win;
    per += r.flagged ? fmt(" s%zu: no mixture fits;", s)
                     : fmt(" s%zu: %.3f@%.3f vs %.3f@%.3f;", s, r.mt_macro, r.mt_size, r.mixture_macro, r.mixture_size);
  }
  return {wins >= 4, fmt("multitask >= best equal-budget mixture in %zu/5 seeds (need 4):%s", wins, per.c_str())};
}

Outcome low_resource() {
  ensure_multitask_runs(false, true);
  std::size_t wins = 0, degrade = 0;
  std::string per;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const SeedRuns& r = seed_runs()[s];
    wins += r.mt_small > r.st_small;
    degrade += (r.st_full_task - r.st_small) > (r.mt_full_task - r.mt_small);
    per += fmt(" s%zu: mt %.3f vs st %.3f;", s, r.mt_small, r.st_small);
  }
  return {wins >= 4, fmt("multitask beats single-task on the 5%% task in %zu/5 seeds (need 4):%s single-task degrades "
                         "more in %zu/5",
                         wins, per.c_str(), degrade)};
}

// 10 -----------------------------------------------------------------------
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "prunekit_acceptance_determinism";
  fs::remove_all(dir);
  std::size_t same = 0, total = 0;
  for (Selector sel : {Selector::Magnitude, Selector::Movement})
    for (Structure st : {Structure::ElementWise, Structure::Rank})
      for (MaskMode mm : {MaskMode::Shared, MaskMode::Hybrid}) {
        if (mm == MaskMode::Hybrid && (sel != Selector::Movement || st != Structure::ElementWise)) continue;
        ExperimentConfig c;
        c.model = {1, 16, 32, 2, 4, 1};
        c.prune = {sel, st, Scope::Global, 0.3, 3, 1, 1};
        c.mask_mode = mm;
        c.data.dev_size = 32;
        c.training.batch_size = 16;
        c.tasks = {{"a", TaskKind::Classification, 3, 64, 1, 1.0}, {"b", TaskKind::Regression, 2, 64, 2, 0.5}};
        const std::string name = std::string(to_string(sel)) + "_" + std::string(to_string(st)) + "_" +
                                 std::string(to_string(mm));
        write_file_atomic(dir / (name + ".json"), to_json(c).dump(2));
        std::string reports[2];
        for (int rep = 0; rep < 2; ++rep) {
          const fs::path out = dir / (name + "_" + std::to_string(rep));
          const std::string cfg = (dir / (name + ".json")).string(), outs = out.string();
          const char* argv[] = {"prunekit", "run", cfg.c_str(), "--seed", "5", "--output", outs.c_str(), "--quiet"};
          std::ostringstream o, e;
          if (cli_main(8, argv, o, e) == 0) reports[rep] = read_file(out / "report.json");
        }
        ++total;
        same += !reports[0].empty() && reports[0] == reports[1];
      }
  fs::remove_all(dir);
  return {same == total, fmt("%zu/%zu configurations produced byte-identical report.json twice", same, total)};
}

// 11 -----------------------------------------------------------------------
Outcome pareto_correctness() {
  std::size_t agree = 0;
  Rng rng(1111);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(1000);
    const bool coarse = trial % 2 == 0;  // coarse grids produce ties and duplicates
    std::vector<BudgetPoint> pts(n);
    for (auto& p : pts) {
      p.size = coarse ? double(rng.uniform_index(50)) / 50.0 : 3.0 * rng.uniform();
      p.metric = coarse ? double(rng.uniform_index(40)) : rng.normal();
    }
    std::set<std::pair<double, double>> oracle;
    for (const auto& p : pts) {
      bool dominated = false;
      for (const auto& q : pts)
        if (q.size <= p.size && q.metric >= p.metric && (q.size < p.size || q.metric > p.metric)) {
          dominated = true;
          break;
        }
      if (!dominated) oracle.insert({p.size, p.metric});
    }
    const auto f = pareto_frontier(pts);
    std::set<std::pair<double, double>> got;
    bool sorted = true;
    for (std::size_t i = 0; i < f.size(); ++i) {
      got.insert({f[i].size, f[i].metric});
      if (i && !(f[i - 1].size < f[i].size)) sorted = false;
    }
    agree += sorted && got.size() == f.size() && got == oracle;
  }
  return {agree == 1000, fmt("%zu/1000 random sets match the O(n^2) dominance oracle", agree)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"STE contract", ste_contract},
      {"SVD suite", svd_suite},
      {"mask cardinality and scope", mask_cardinality},
      {"rank-38 parameter anchor", table2_anchor},
      {"factored count crossover", footnote_crossover},
      {"latency trend", latency_trend},
      {"planted multitask advantage", planted_multitask_advantage},
      {"low-resource task", low_resource},
      {"determinism", determinism},
      {"Pareto correctness", pareto_correctness},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
