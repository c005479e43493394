// eoal_lab: run open-set active-learning experiments from TOML configs,
// sweep strategies and seeds, aggregate results and cluster feature files.
//
// Exit codes: 0 success, 2 configuration or usage error, 1 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "eoal/alloop.hpp"
#include "eoal/config.hpp"
#include "eoal/data.hpp"
#include "eoal/finch.hpp"
#include "eoal/io.hpp"
#include "eoal/report.hpp"

namespace fs = std::filesystem;
using namespace eoal;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  bool quiet = false;
  unsigned jobs = 0;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
  auto cfg = load_config(o.config);
  for (const auto& kv : o.overrides) apply_override(cfg, kv);
  cfg.validate();
  return cfg;
}

std::string progress_line(const RoundMetrics& m) {
  return "seed " + std::to_string(m.seed) + " cycle " + std::to_string(m.cycle) + " " + m.strategy +
         " accuracy " + io::format_double(m.accuracy) + " precision " + io::format_double(m.precision);
}

ProgressFn make_progress(bool quiet) {
  if (quiet) return {};
  return [](const RoundMetrics& m) { std::cout << progress_line(m) << '\n' << std::flush; };
}

// Writes rounds.csv, config_echo.toml and any score dumps into `dir`.
// Returns the number of failed seeds.
std::size_t write_run(const fs::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result) {
  io::write_file_atomic(dir / "rounds.csv", rounds_csv(result, cfg.output.record_timing));
  io::write_file_atomic(dir / "config_echo.toml", to_toml(cfg));
  std::size_t failed = 0;
  for (const auto& s : result.seeds) {
    for (const auto& [cycle, csv] : s.score_dumps) {
      io::write_file_atomic(dir / "scores" / ("seed" + std::to_string(s.seed) + "_cycle" + std::to_string(cycle) + ".csv"),
                            csv);
    }
    if (s.error) {
      ++failed;
      std::cerr << "seed " << s.seed << " failed: " << *s.error << '\n';
    }
  }
  return failed;
}

int cmd_run(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto ds = make_dataset(cfg.dataset);
  const auto result = run_experiment(cfg, ds, o.jobs, make_progress(o.quiet));
  const auto failed = write_run(o.out, cfg, result);
  return failed == 0 ? kOk : kRuntimeError;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : io::split_line(s)) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

int cmd_sweep(const CommonOptions& o, const std::string& strategies_arg, const std::string& seeds_arg) {
  const auto base = resolve_config(o);
  std::vector<std::string> strategies = strategies_arg.empty() ? std::vector<std::string>{base.strategy.name}
                                                               : split_list(strategies_arg);
  std::vector<std::int64_t> seeds = base.split.seeds;
  if (!seeds_arg.empty()) {
    seeds.clear();
    for (const auto& s : split_list(seeds_arg)) {
      try {
        seeds.push_back(std::stoll(s));
      } catch (const std::logic_error&) {
        throw ConfigError("--seeds: '" + s + "' is not an integer");
      }
    }
  }
  if (strategies.empty() || seeds.empty()) throw ConfigError("sweep: need at least one strategy and one seed");

  struct Cell {
    ExperimentConfig cfg;
    fs::path dir;
    ExperimentResult result;
  };
  std::vector<Cell> cells;
  for (const auto& name : strategies) {
    for (const auto seed : seeds) {
      Cell c{base, fs::path(o.out) / name / ("seed_" + std::to_string(seed)), {}};
      c.cfg.strategy.name = name;
      c.cfg.split.seeds = {seed};
      c.cfg.validate();
      cells.push_back(std::move(c));
    }
  }

  const auto ds = make_dataset(base.dataset);
  const auto progress = make_progress(o.quiet);
  std::mutex mu;
  ProgressFn locked;
  if (progress) {
    locked = [&](const RoundMetrics& m) {
      std::lock_guard<std::mutex> lock(mu);
      progress(m);
    };
  }
  const unsigned workers = std::min<unsigned>(resolve_threads(o.jobs), static_cast<unsigned>(cells.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) cells[i].result = run_experiment(cells[i].cfg, ds, 1, locked);
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::size_t failed = 0;
  ExperimentResult merged;
  for (const auto& c : cells) {
    failed += write_run(c.dir, c.cfg, c.result);
    merged.seeds.insert(merged.seeds.end(), c.result.seeds.begin(), c.result.seeds.end());
  }
  io::write_file_atomic(fs::path(o.out) / "sweep.csv", rounds_csv(merged, base.output.record_timing));
  return failed == 0 ? kOk : kRuntimeError;
}

int cmd_report(const std::string& dir, const std::string& out_arg) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw ConfigError("report: " + dir + " is not a directory");
  std::vector<RoundMetrics> rounds;
  if (fs::exists(root / "sweep.csv")) {
    rounds = report::parse_rounds_csv(io::read_file(root / "sweep.csv"), (root / "sweep.csv").string());
  } else {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && e.path().filename() == "rounds.csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto r = report::parse_rounds_csv(io::read_file(f), f.string());
      rounds.insert(rounds.end(), r.begin(), r.end());
    }
  }
  if (rounds.empty()) throw ConfigError("report: no rounds found under " + dir);
  const fs::path out = out_arg.empty() ? root / "summary.csv" : fs::path(out_arg);
  io::write_file_atomic(out, report::summary_csv(report::summarize_rounds(rounds)));
  return kOk;
}

// Accepts `id,label,f1,...` dataset files and plain `id,f1,...` feature files.
std::pair<std::vector<SampleId>, Matrix> load_features(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("cluster: features file not found: " + path);
  const auto text = io::read_file(path);
  const auto lines = io::read_lines(text);
  if (lines.empty()) throw ParseError(path + ": empty file");
  const auto header = io::split_line(lines.front());
  if (header.size() >= 2 && header[1] == "label") {
    const auto ds = parse_csv(text);
    return {ds.ids(), ds.features()};
  }
  if (header.size() < 2 || header[0] != "id") throw ParseError(path + ": header must start with id");
  std::string rewritten = "id,label";
  for (std::size_t i = 1; i < header.size(); ++i) rewritten += ",f" + std::to_string(i);
  rewritten += '\n';
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto comma = lines[n].find(',');
    rewritten += comma == std::string::npos ? lines[n] + ",0" : lines[n].substr(0, comma) + ",0" + lines[n].substr(comma);
    rewritten += '\n';
  }
  const auto ds = parse_csv(rewritten);
  return {ds.ids(), ds.features()};
}

int cmd_cluster(const std::string& features, int k, const std::string& metric, const std::string& out) {
  const auto m = finch::parse_metric(metric);
  const auto [ids, x] = load_features(features);
  if (k < 1 || k > static_cast<int>(ids.size())) {
    throw ConfigError("cluster: k = " + std::to_string(k) + " must be in [1, " + std::to_string(ids.size()) + "]");
  }
  const auto p = finch::partition_at_k(x, k, m);
  std::string csv = "id,cluster\n";
  for (std::size_t i = 0; i < ids.size(); ++i) csv += std::to_string(ids[i]) + ',' + std::to_string(p.labels[i]) + '\n';
  io::write_file_atomic(out, csv);
  return kOk;
}

void add_common(CLI::App* sub, CommonOptions& o, bool out_required) {
  sub->add_option("config", o.config, "Experiment config (TOML)")->required();
  sub->add_option("--set", o.overrides, "Override a config value, section.key=value (repeatable)");
  auto* out = sub->add_option("-o,--out", o.out, "Output directory");
  if (out_required) out->required();
  sub->add_flag("-q,--quiet", o.quiet, "Suppress progress lines");
  sub->add_option("-j,--jobs", o.jobs, "Parallel workers (0 = all cores; capped by EOAL_LAB_THREADS)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set active learning lab"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  run_opts.out = "results";
  auto* run = app.add_subcommand("run", "Run an experiment");
  add_common(run, run_opts, false);

  CommonOptions sweep_opts;
  std::string strategies;
  std::string seeds;
  auto* sweep = app.add_subcommand("sweep", "Run strategies x seeds, one directory per cell");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--strategies", strategies, "Comma-separated strategy names (default: the config's)");
  sweep->add_option("--seeds", seeds, "Comma-separated seeds (default: split.seeds)");

  std::string report_dir;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Aggregate a sweep or run directory into summary.csv");
  rep->add_option("dir", report_dir, "Sweep or run directory")->required();
  rep->add_option("-o,--out", report_out, "Summary path (default: <dir>/summary.csv)");

  std::string features;
  int k = 0;
  std::string metric = "euclidean";
  std::string cluster_out;
  auto* clu = app.add_subcommand("cluster", "Partition a feature CSV into exactly k clusters");
  clu->add_option("features", features, "CSV with id,label,f1,... or id,f1,...")->required();
  clu->add_option("-k,--k", k, "Number of clusters")->required();
  clu->add_option("--metric", metric, "euclidean or cosine");
  clu->add_option("-o,--out", cluster_out, "Output id,cluster CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, strategies, seeds);
    if (*rep) return cmd_report(report_dir, report_out);
    if (*clu) return cmd_cluster(features, k, metric, cluster_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}
