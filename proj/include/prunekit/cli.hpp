#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "prunekit/bench.hpp"
#include "prunekit/config.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/experiments.hpp"
#include "prunekit/io.hpp"

namespace prunekit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

namespace cli {

// Seed precedence: --seed flag, then PRUNEKIT_SEED, then the config file.
inline void apply_seed(ExperimentConfig& c, const std::optional<std::uint64_t>& flag) {
  if (flag) {
    c.training.seed = *flag;
    return;
  }
  if (const char* env = std::getenv("PRUNEKIT_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      c.training.seed = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("PRUNEKIT_SEED is not an unsigned integer: ") + env);
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) throw ConfigError("no config given (use --config)");
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return config_from_text(text);
}

struct RunEntry {
  std::string id;
  fs::path dir;
  RunReport report;
};

// Run directories are those holding a report.json, searched recursively under each input.
inline std::vector<RunEntry> collect_runs(const std::vector<std::string>& inputs, std::vector<std::string>& missing) {
  std::vector<RunEntry> out;
  std::set<fs::path> seen;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (!fs::exists(p)) {
      missing.push_back(in);
      continue;
    }
    std::vector<fs::path> dirs;
    if (fs::exists(p / "report.json")) {
      dirs.push_back(p);
    } else if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().filename() == "report.json") dirs.push_back(e.path().parent_path());
      std::sort(dirs.begin(), dirs.end());
    }
    for (const auto& d : dirs) {
      if (!seen.insert(fs::weakly_canonical(d)).second) continue;
      RunReport r = read_run(d);
      if (r.status != "ok") continue;
      out.push_back({d.filename().string(), d, std::move(r)});
    }
  }
  return out;
}

struct Analysis {
  std::vector<BudgetPoint> mixtures;
  std::vector<BudgetPoint> frontier;
  std::vector<BudgetPoint> multitask;
  std::vector<BudgetRow> rows;
};

// Mixtures over the single-task runs of the multitask runs' tasks (or of every task
// seen, when there are no multitask runs).
inline Analysis analyse(const std::vector<RunEntry>& runs) {
  Analysis a;
  std::vector<std::string> tasks;
  for (const auto& r : runs) {
    if (r.report.task_ids.size() < 2) continue;
    a.multitask.push_back(multitask_point(RunSummary::from_report(r.id, r.report)));
    if (tasks.empty()) tasks = r.report.task_ids;
    if (r.report.task_ids != tasks) throw ConfigError("multitask runs cover different task sets");
  }
  if (tasks.empty())
    for (const auto& r : runs)
      if (r.report.task_ids.size() == 1 && std::find(tasks.begin(), tasks.end(), r.report.task_ids[0]) == tasks.end())
        tasks.push_back(r.report.task_ids[0]);
  std::vector<std::vector<RunSummary>> per_task(tasks.size());
  for (const auto& r : runs) {
    if (r.report.task_ids.size() != 1) continue;
    const auto it = std::find(tasks.begin(), tasks.end(), r.report.task_ids[0]);
    if (it != tasks.end()) per_task[std::size_t(it - tasks.begin())].push_back(RunSummary::from_report(r.id, r.report));
  }
  bool complete = !tasks.empty();
  for (const auto& v : per_task) complete = complete && !v.empty();
  if (complete) {
    a.mixtures = enumerate_mixtures(per_task);
    a.frontier = pareto_frontier(a.mixtures);
    if (!a.multitask.empty()) a.rows = budget_compare(a.multitask, a.frontier);
  }
  return a;
}

inline std::string setting_name(const RunReport& r) {
  return std::string(to_string(r.selector)) + "-" + std::string(to_string(r.structure)) + "-" +
         std::string(to_string(r.scope));
}

struct SweepJob {
  std::string id;
  ExperimentConfig config;
};

inline std::vector<SweepJob> sweep_jobs(const ExperimentConfig& base, const std::vector<double>& densities,
                                        const std::vector<std::uint64_t>& seeds, bool per_task) {
  std::vector<SweepJob> jobs;
  for (Selector sel : {Selector::Magnitude, Selector::Movement})
    for (Structure st : {Structure::ElementWise, Structure::Rank})
      for (Scope sc : {Scope::Global, Scope::Local})
        for (double d : densities)
          for (std::uint64_t seed : seeds) {
            ExperimentConfig c = base;
            c.prune.selector = sel;
            c.prune.structure = st;
            c.prune.scope = sc;
            c.prune.final_density = d;
            c.training.seed = seed;
            if (sel != Selector::Movement || st != Structure::ElementWise) c.mask_mode = MaskMode::Shared;
            const std::string id = std::string(to_string(sel)) + "-" + std::string(to_string(st)) + "-" +
                                   std::string(to_string(sc)) + "-d" + csv_number(d) + "-s" + std::to_string(seed);
            if (per_task) {
              for (std::size_t t = 0; t < base.tasks.size(); ++t)
                jobs.push_back({id + "-" + base.tasks[t].id, single_task(c, t)});
            } else {
              jobs.push_back({id, c});
            }
          }
  return jobs;
}

inline std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

}  // namespace cli

// Entry point shared by the binary and the tests. Returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"prunekit: pruning encoders for single- and multitask learning"};
  app.require_subcommand(1);

  std::string config_path, output, densities_text = "1.0,0.5,0.2,0.1,0.03", seeds_text = "0", fractions_text;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool quiet = false, per_task = false;
  std::vector<std::string> inputs;

  auto* run = app.add_subcommand("run", "train one configuration; writes report.json, timing.json, checkpoint/");
  run->add_option("config_file", config_path, "config JSON (same as --config)");
  run->add_option("--config", config_path, "config JSON");
  run->add_option("--seed", seed, "training seed (overrides PRUNEKIT_SEED and the config)");
  run->add_option("--output", output, "output directory (default: config output_dir)");
  run->add_flag("--quiet", quiet, "no per-epoch progress");

  auto* sweep = app.add_subcommand("sweep", "all 8 selector/structure/scope settings x densities x seeds");
  sweep->add_option("--config", config_path, "base config JSON")->required();
  sweep->add_option("--densities", densities_text, "comma-separated final densities")->capture_default_str();
  sweep->add_option("--seeds", seeds_text, "comma-separated seeds")->capture_default_str();
  sweep->add_option("--jobs", jobs, "parallel runs")->capture_default_str();
  sweep->add_option("--output", output, "output directory (default: config output_dir)");
  sweep->add_flag("--per-task", per_task, "train each task alone (mixture members)");
  sweep->add_flag("--quiet", quiet, "no progress lines");

  auto* pareto = app.add_subcommand("pareto", "mixture frontier and budget comparison over run directories");
  pareto->add_option("runs", inputs, "run directories (searched recursively)")->required();
  pareto->add_option("--output", output, "output directory")->required();

  BenchShape shape;
  BenchOptions bopt;
  fractions_text = "1.0,0.9,0.7,0.5,0.45,0.3,0.2,0.1,0.05";
  auto* bench = app.add_subcommand("bench", "dense vs rank-factored product latency");
  bench->add_option("--m", shape.m, "rows")->capture_default_str();
  bench->add_option("--n", shape.n, "columns")->capture_default_str();
  bench->add_option("--l", shape.l, "batch columns")->capture_default_str();
  bench->add_option("--fractions", fractions_text, "comma-separated rank fractions")->capture_default_str();
  bench->add_option("--reps", bopt.reps, "timed repetitions (>= 30)")->capture_default_str();
  bench->add_option("--warmup", bopt.warmup, "warmup iterations (>= 5)")->capture_default_str();
  bench->add_option("--jobs", bopt.threads, "threads per product")->capture_default_str();
  bench->add_option("--output", output, "CSV file (default: stdout)");

  auto* figdata = app.add_subcommand("figdata", "plot-ready CSVs: density vs metric, budget vs macro");
  figdata->add_option("runs", inputs, "run directories (searched recursively)");
  figdata->add_option("--output", output, "output directory")->required();

  auto* defaults = app.add_subcommand("default-config", "print the default 3-task config");
  defaults->add_option("--output", output, "write to file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      ExperimentConfig c = cli::load_config(config_path);
      cli::apply_seed(c, seed);
      c.validate();
      const fs::path dir = output.empty() ? fs::path(c.output_dir) : fs::path(output);
      RunOptions ro;
      ro.log = quiet ? nullptr : &err;
      try {
        const RunOutcome r = train(c, ro);
        write_run(dir, r);
        write_file_atomic(dir / "config.json", to_json(c).dump(2) + "\n");
        if (!quiet)
          err << "final fraction " << r.report.param_fraction << " macro " << r.report.macro << " -> " << dir.string()
              << '\n';
      } catch (const RunAborted& e) {
        write_file_atomic(dir / "diagnostic.json", report_to_json(e.report).dump(2) + "\n");
        throw;
      }
      return kExitOk;
    }

    if (*sweep) {
      const ExperimentConfig base = cli::load_config(config_path);
      const auto densities = cli::parse_list(densities_text, "density");
      std::vector<std::uint64_t> seeds;
      for (double s : cli::parse_list(seeds_text, "seed")) {
        if (s < 0 || s != std::floor(s)) throw ConfigError("seeds must be non-negative integers");
        seeds.push_back(std::uint64_t(s));
      }
      auto list = cli::sweep_jobs(base, densities, seeds, per_task);
      for (const auto& j : list) j.config.validate();
      if (jobs == 0) throw ConfigError("--jobs must be positive");
      const fs::path dir = output.empty() ? fs::path(base.output_dir) : fs::path(output);

      std::vector<std::optional<RunReport>> reports(list.size());
      std::vector<std::string> failures(list.size());
      std::atomic<std::size_t> next{0};
      std::mutex log_mu;
      auto worker = [&] {
        for (std::size_t i = next++; i < list.size(); i = next++) {
          try {
            const RunOutcome r = train(list[i].config);
            write_run(dir / "runs" / list[i].id, r, false);
            reports[i] = r.report;
            if (!quiet) {
              std::lock_guard lk(log_mu);
              err << list[i].id << " macro " << r.report.macro << " fraction " << r.report.param_fraction << '\n';
            }
          } catch (const std::exception& e) {
            failures[i] = e.what();
          }
        }
      };
      std::vector<std::thread> pool;
      for (std::size_t t = 1; t < std::min(jobs, list.size()); ++t) pool.emplace_back(worker);
      worker();
      for (auto& t : pool) t.join();

      std::string csv = sweep_csv_header();
      bool failed = false;
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (reports[i]) {
          csv += sweep_csv_rows(list[i].id, *reports[i]);
        } else {
          failed = true;
          err << "run " << list[i].id << " failed: " << failures[i] << '\n';
        }
      }
      if (failed) return kExitNumerical;
      write_file_atomic(dir / "summary.csv", csv);
      return kExitOk;
    }

    if (*pareto || *figdata) {
      std::vector<std::string> missing;
      const auto runs = cli::collect_runs(inputs, missing);
      if (!missing.empty()) {
        for (const auto& m : missing) err << "missing run directory: " << m << '\n';
        return kExitConfig;
      }
      if (runs.empty()) {
        err << "no run reports found\n";
        return kExitConfig;
      }
      const cli::Analysis a = cli::analyse(runs);
      if (*pareto) {
        if (a.frontier.empty()) {
          err << "no complete set of single-task runs to form mixtures\n";
          return kExitConfig;
        }
        std::string tasks_csv = a.rows.empty() ? std::string() : budget_csv(a.rows);
        write_file_atomic(fs::path(output) / "frontier.csv", frontier_csv(a.frontier));
        if (!a.rows.empty()) write_file_atomic(fs::path(output) / "budget.csv", tasks_csv);
        for (const auto& r : a.rows)
          out << "budget " << r.budget << ": "
              << (r.flagged() ? std::string("no mixture fits") : "delta " + csv_number(r.delta)) << '\n';
        return kExitOk;
      }
      std::string fig1 = "setting,selector,structure,scope,final_density,param_fraction,task_id,metric,run_id\n";
      for (const auto& r : runs)
        for (std::size_t t = 0; t < r.report.task_ids.size(); ++t)
          fig1 += cli::setting_name(r.report) + ',' + std::string(to_string(r.report.selector)) + ',' +
                  std::string(to_string(r.report.structure)) + ',' + std::string(to_string(r.report.scope)) + ',' +
                  csv_number(r.report.final_density) + ',' + csv_number(r.report.param_fraction) + ',' +
                  csv_escape(r.report.task_ids[t]) + ',' + csv_number(r.report.dev_metric[t]) + ',' +
                  csv_escape(r.id) + '\n';
      std::string fig2 = "series,budget,macro,runs\n";
      auto add = [&](const char* series, const BudgetPoint& p) {
        std::string ids;
        for (std::size_t i = 0; i < p.runs.size(); ++i) ids += (i ? ";" : "") + p.runs[i];
        fig2 += std::string(series) + ',' + csv_number(p.size) + ',' + csv_number(p.metric) + ',' + csv_escape(ids) +
                '\n';
      };
      for (const auto& p : a.multitask) add("multitask", p);
      for (const auto& p : a.frontier) add("mixture_frontier", p);
      write_file_atomic(fs::path(output) / "fig_density_metric.csv", fig1);
      write_file_atomic(fs::path(output) / "fig_budget_macro.csv", fig2);
      return kExitOk;
    }

    if (*bench) {
      const auto fractions = cli::parse_list(fractions_text, "fraction");
      const auto rows = bench_grid({shape}, fractions, bopt);
      const std::string csv = bench_csv(rows);
      if (output.empty())
        out << csv;
      else
        write_file_atomic(output, csv);
      return kExitOk;
    }

    if (*defaults) {
      const std::string text = to_json(preset_desk3()).dump(2) + "\n";
      if (output.empty())
        out << text;
      else
        write_file_atomic(output, text);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractViolation& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}

}  // namespace prunekit
