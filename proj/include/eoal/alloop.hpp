#pragma once

// The active-learning loop: per-cycle training of the scoring models, pool
// scoring, querying, oracle annotation, target-model training and evaluation,
// repeated over cycles and seeds.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "eoal/common.hpp"
#include "eoal/config.hpp"
#include "eoal/data.hpp"
#include "eoal/finch.hpp"
#include "eoal/io.hpp"
#include "eoal/losses.hpp"
#include "eoal/nn.hpp"
#include "eoal/samplers.hpp"
#include "eoal/scoring.hpp"

namespace eoal {

struct RoundMetrics {
  std::int64_t seed = 0;
  int cycle = 0;
  std::string strategy;
  double accuracy = 0.0;
  double precision = 0.0;
  std::size_t n_labeled = 0;
  std::size_t n_active_unknown = 0;
  std::size_t n_unlabeled = 0;
  double wall_ms = 0.0;
  std::size_t n_queried = 0;
  std::size_t n_known_queried = 0;
};

struct TrainLog {
  std::vector<double> epoch_losses;  // mean L_total per epoch
  int clusterings = 0;               // active-unknown re-clusterings performed
};

/// Everything a cycle needs that does not change across cycles.
struct ExperimentContext {
  const Dataset& dataset;
  const OpenSetSplit& split;
  const ExperimentConfig& config;
};

/// Mutable per-seed state carried from one cycle to the next.
struct CycleState {
  PoolState pools;
  std::optional<nn::TargetModel> target;  // trained on the current labeled set
  std::optional<nn::ModelBundle> bundle;  // previous cycle's scoring models
};

struct CycleOutput {
  RoundMetrics metrics;
  std::optional<scoring::ScoreTable> scores;
  TrainLog train_log;
};

namespace alloop_detail {

inline std::vector<int> hidden_dims(const TrainingSpec& t) {
  return {t.hidden.begin(), t.hidden.end()};
}

inline nn::SgdState make_sgd(const TrainingSpec& t) {
  nn::SgdState s;
  s.learning_rate = t.learning_rate;
  s.momentum = t.momentum;
  s.weight_decay = t.weight_decay;
  s.step_decay_factor = t.step_decay_factor;
  s.step_decay_every = t.step_decay_every;
  return s;
}

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Active-unknown clustering in the current feature space; nullopt when fewer
// than two clusters can be formed.
inline std::optional<finch::Partition> cluster_unknowns(const nn::Mlp& feature, const Matrix& x_au, int num_known,
                                                        finch::Metric metric) {
  const int k = std::min<int>(num_known, static_cast<int>(x_au.rows()));
  if (k < 2) return std::nullopt;
  return finch::partition_at_k(nn::predict(feature, x_au), k, metric);
}

}  // namespace alloop_detail

/// Which loss terms the ablation flags leave in the objective.
inline losses::LossTerms loss_terms(const AblationFlags& a) {
  losses::LossTerms t;
  t.bce = a.use_bc;
  t.em = a.use_bc && a.use_s_c;
  t.tuplet = a.use_s_d;
  return t;
}

/// Trains F, C and the binary heads on the labeled set and the active
/// unknowns. With active unknowns in play they are re-clustered at the start of
/// every epoch and the tuplet term pulls them toward those centers.
inline nn::ModelBundle train_cycle_models(const ExperimentContext& ctx, const PoolState& pools, std::uint64_t seed,
                                          const nn::ModelBundle* warm = nullptr, TrainLog* log = nullptr) {
  const auto& cfg = ctx.config;
  const int num_known = ctx.split.num_known();
  if (pools.labeled.empty()) throw ConfigError("train_cycle_models: labeled set is empty");

  Rng rng(seed);
  nn::ModelBundle model = warm != nullptr
                              ? *warm
                              : nn::init_bundle(static_cast<int>(ctx.dataset.dim()),
                                                alloop_detail::hidden_dims(cfg.training), num_known, rng);

  const auto labeled_ids = pools.labeled_ids();
  std::vector<int> labeled_y;
  for (const auto& l : pools.labeled) labeled_y.push_back(l.label);
  const Matrix x_l = ctx.dataset.gather(labeled_ids);
  const bool use_au = cfg.ablation.use_d_au && !pools.active_unknown.empty();
  const Matrix x_au = use_au ? ctx.dataset.gather(pools.active_unknown) : Matrix(0, x_l.cols());

  const auto terms = loss_terms(cfg.ablation);
  const losses::LossWeights weights{cfg.training.lambda, cfg.training.beta};
  const auto metric = cfg.metric();
  auto sgd = alloop_detail::make_sgd(cfg.training);

  const std::size_t n_l = labeled_ids.size();
  const std::size_t n_total = n_l + static_cast<std::size_t>(x_au.rows());
  std::vector<std::size_t> order(n_total);
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.training.batch_size);

  for (int epoch = 0; epoch < cfg.training.epochs; ++epoch) {
    std::optional<finch::Partition> clusters;
    if (use_au && terms.tuplet && weights.lambda != 0.0) {
      clusters = alloop_detail::cluster_unknowns(model.feature, x_au, num_known, metric);
      if (log != nullptr) ++log->clusterings;
    }
    shuffle_in_place(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_total; start += batch) {
      const std::size_t end = std::min(n_total, start + batch);
      std::vector<std::size_t> rows_l;
      std::vector<std::size_t> rows_au;
      std::vector<int> y;
      losses::ClusterTargets targets;
      for (std::size_t t = start; t < end; ++t) {
        const auto r = order[t];
        if (r < n_l) {
          rows_l.push_back(r);
          y.push_back(labeled_y[r]);
        } else {
          rows_au.push_back(r - n_l);
          if (clusters) targets.labels.push_back(clusters->labels[r - n_l]);
        }
      }
      auto batch_terms = terms;
      if (!clusters) batch_terms.tuplet = false;
      if (clusters) targets.centers = clusters->centroids;

      losses::TotalLoss tl;
      try {
        tl = losses::total_loss(model, alloop_detail::gather_rows(x_l, rows_l), y,
                                alloop_detail::gather_rows(x_au, rows_au), clusters ? &targets : nullptr, weights,
                                batch_terms);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch starting " +
                              std::to_string(start));
      }
      epoch_loss += tl.value * static_cast<double>(end - start);
      nn::sgd_step(model.params(), tl.grad.params(), sgd, epoch);
    }
    if (!model.feature.all_finite()) throw DivergenceError("train_cycle_models: parameters became non-finite");
    if (log != nullptr) log->epoch_losses.push_back(epoch_loss / static_cast<double>(n_total));
  }
  return model;
}

/// Cross-entropy training of the K-way target classifier on the labeled set.
inline nn::TargetModel train_target(const ExperimentContext& ctx, const PoolState& pools, std::uint64_t seed,
                                    const nn::TargetModel* warm = nullptr) {
  const auto& cfg = ctx.config;
  if (pools.labeled.empty()) throw ConfigError("train_target: labeled set is empty");
  Rng rng(seed);
  nn::TargetModel model = warm != nullptr ? *warm
                                          : nn::init_target(static_cast<int>(ctx.dataset.dim()),
                                                            alloop_detail::hidden_dims(cfg.training),
                                                            ctx.split.num_known(), rng);
  const Matrix x = ctx.dataset.gather(pools.labeled_ids());
  std::vector<int> y;
  for (const auto& l : pools.labeled) y.push_back(l.label - 1);
  auto sgd = alloop_detail::make_sgd(cfg.training);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.training.batch_size);
  for (int epoch = 0; epoch < cfg.training.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> yb;
      for (const auto r : rows) yb.push_back(y[r]);
      const Matrix xb = alloop_detail::gather_rows(x, rows);
      const auto f_act = nn::forward(model.feature, xb);
      const auto h_act = nn::forward(model.head, f_act.output());
      const auto ce = losses::ce_loss(h_act.output(), yb);
      if (!std::isfinite(ce.value)) throw DivergenceError("train_target: non-finite loss at epoch " + std::to_string(epoch));
      auto gh = nn::backward(model.head, h_act, ce.grad);
      auto gf = nn::backward(model.feature, f_act, gh.input);
      nn::TargetModel grad{std::move(gf.params), std::move(gh.params)};
      nn::sgd_step(model.params(), grad.params(), sgd, epoch);
    }
  }
  return model;
}

inline Matrix target_probs(const nn::TargetModel& t, const Matrix& x) {
  return losses::softmax_rows(nn::predict(t.head, nn::predict(t.feature, x)));
}

/// Fraction of test samples whose argmax class matches.
inline double target_accuracy(const nn::TargetModel& t, const Dataset& ds, const PoolState& pools) {
  if (pools.test.empty()) return 0.0;
  std::vector<SampleId> ids;
  for (const auto& s : pools.test) ids.push_back(s.id);
  const Matrix logits = nn::predict(t.head, nn::predict(t.feature, ds.gather(ids)));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Eigen::Index arg = 0;
    logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    if (static_cast<int>(arg) + 1 == pools.test[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

/// Accuracy of F + C restricted to the known classes 1..K (no target model).
inline double bundle_accuracy(const nn::ModelBundle& m, const Dataset& ds, const PoolState& pools) {
  if (pools.test.empty()) return 0.0;
  std::vector<SampleId> ids;
  for (const auto& s : pools.test) ids.push_back(s.id);
  const Matrix logits = nn::predict(m.closed, nn::predict(m.feature, ds.gather(ids)));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Eigen::Index arg = 0;
    logits.row(static_cast<Eigen::Index>(i)).tail(logits.cols() - 1).maxCoeff(&arg);
    if (static_cast<int>(arg) + 1 == pools.test[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

/// Sub-seeds for one experiment seed.
struct SeedPlan {
  std::uint64_t base;

  std::uint64_t split() const { return derive_seed(base, 1); }
  std::uint64_t pools() const { return derive_seed(base, 2); }
  std::uint64_t scoring_models(int cycle) const { return derive_seed(base, 100, static_cast<std::uint64_t>(cycle)); }
  std::uint64_t target(int cycle) const { return derive_seed(base, 200, static_cast<std::uint64_t>(cycle)); }
  std::uint64_t query(int cycle) const { return derive_seed(base, 300, static_cast<std::uint64_t>(cycle)); }
};

/// One full cycle: train, score, query b samples, annotate, update pools,
/// retrain the target model and evaluate it.
inline CycleOutput run_cycle(const ExperimentContext& ctx, CycleState& state, int cycle, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto& cfg = ctx.config;
  const auto strategy = cfg.strategy_kind();
  const SeedPlan plan{seed};
  const int num_known = ctx.split.num_known();
  const int budget = cfg.strategy.budget;

  CycleOutput out;
  if (state.pools.unlabeled.empty()) throw ConfigError("run_cycle: unlabeled pool is exhausted");
  const std::size_t before_total = state.pools.total();

  samplers::QueryResult query;
  std::optional<nn::ModelBundle> bundle;
  if (strategy == samplers::Strategy::eoal) {
    bundle = train_cycle_models(ctx, state.pools, plan.scoring_models(cycle),
                                cfg.training.warm_start && state.bundle ? &*state.bundle : nullptr, &out.train_log);
    std::optional<finch::Partition> au_clusters;
    if (!state.pools.active_unknown.empty() && cfg.ablation.use_s_d) {
      au_clusters = alloop_detail::cluster_unknowns(bundle->feature, ctx.dataset.gather(state.pools.active_unknown),
                                                    num_known, cfg.metric());
    }
    scoring::ScoringOptions sopts{cfg.ablation.use_s_c, cfg.ablation.use_s_d, cfg.ablation.use_bc};
    // With fewer active unknowns than two clusters the distance score stays 0.
    if (!au_clusters) sopts.use_s_d = false;
    auto table = scoring::score_pool(ctx.dataset, state.pools, *bundle, au_clusters ? &au_clusters->centroids : nullptr,
                                     scoring::Temperature(cfg.training.temperature), sopts);
    samplers::EoalQueryOptions qopts;
    qopts.use_diversity = cfg.ablation.use_diversity;
    qopts.diversity_only = cfg.ablation.diversity_only;
    qopts.domain = cfg.cluster_domain();
    qopts.metric = cfg.metric();
    qopts.seed = plan.query(cycle);
    query = samplers::eoal_query(table, budget, num_known, qopts);
    out.scores = std::move(table);
  } else if (strategy == samplers::Strategy::random) {
    query = samplers::random_query(state.pools.unlabeled, budget, plan.query(cycle));
  } else {
    if (!state.target) state.target = train_target(ctx, state.pools, plan.target(cycle));
    const Matrix x_u = ctx.dataset.gather(state.pools.unlabeled);
    if (strategy == samplers::Strategy::coreset) {
      const Matrix f_l = nn::predict(state.target->feature, ctx.dataset.gather(state.pools.labeled_ids()));
      const Matrix f_u = nn::predict(state.target->feature, x_u);
      query = samplers::coreset_query(f_l, f_u, state.pools.unlabeled, budget);
    } else {
      const Matrix probs = target_probs(*state.target, x_u);
      query = strategy == samplers::Strategy::entropy ? samplers::entropy_query(probs, state.pools.unlabeled, budget)
                                                      : samplers::certainty_query(probs, state.pools.unlabeled, budget);
    }
  }

  auto [known, unknown] = oracle_annotate(ctx.dataset, ctx.split, query.selected_ids);
  out.metrics.n_queried = query.selected_ids.size();
  out.metrics.n_known_queried = known.size();
  out.metrics.precision =
      query.selected_ids.empty() ? 0.0 : static_cast<double>(known.size()) / static_cast<double>(query.selected_ids.size());
  state.pools = apply_annotations(ctx.dataset, ctx.split, std::move(state.pools), known, unknown);
  if (state.pools.total() != before_total) throw ConsistencyError("run_cycle: pool total changed");
  check_pool_invariants(ctx.dataset, ctx.split, state.pools);

  const bool needs_target = strategy != samplers::Strategy::eoal || cfg.ablation.use_target_model;
  if (needs_target) {
    const nn::TargetModel* warm = cfg.training.warm_start && state.target ? &*state.target : nullptr;
    state.target = train_target(ctx, state.pools, plan.target(cycle + 1), warm);
    out.metrics.accuracy = target_accuracy(*state.target, ctx.dataset, state.pools);
  } else {
    out.metrics.accuracy = bundle_accuracy(*bundle, ctx.dataset, state.pools);
  }
  if (bundle) state.bundle = std::move(bundle);

  out.metrics.seed = 0;
  out.metrics.cycle = cycle;
  out.metrics.strategy = cfg.strategy.name;
  out.metrics.n_labeled = state.pools.labeled.size();
  out.metrics.n_active_unknown = state.pools.active_unknown.size();
  out.metrics.n_unlabeled = state.pools.unlabeled.size();
  out.metrics.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  return out;
}

struct SeedResult {
  std::int64_t seed = 0;
  std::vector<RoundMetrics> rounds;
  std::optional<std::string> error;
  std::size_t initial_labeled = 0;
  std::vector<std::pair<int, std::string>> score_dumps;  // (cycle, csv)
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
};

/// Builds the configured dataset (generated blobs or a CSV file).
inline Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.kind == "csv") return load_csv(spec.path);
  return generate_blobs(spec.n_classes, spec.per_class, spec.dim, spec.radius, spec.sigma,
                        static_cast<std::uint64_t>(spec.seed));
}

/// Worker count: EOAL_LAB_THREADS caps `requested` (0 = hardware concurrency).
inline unsigned resolve_threads(unsigned requested) {
  unsigned n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  if (const char* env = std::getenv("EOAL_LAB_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return std::max(1u, n);
}

using ProgressFn = std::function<void(const RoundMetrics&)>;
// Sees the pools after every cycle's update, with that cycle's metrics.
// Called from the seed workers, so it must be safe to call concurrently.
using PoolObserver = std::function<void(const Dataset&, const OpenSetSplit&, const PoolState&, const RoundMetrics&)>;

/// One seed: fresh split, fresh pools, R cycles. Pool observers and score
/// dumps see the standardized features when `standardize_inputs` is on.
inline SeedResult run_seed(const Dataset& raw, const ExperimentConfig& cfg, std::int64_t seed,
                           const ProgressFn& progress = {}, const PoolObserver& observer = {}) {
  SeedResult res;
  res.seed = seed;
  std::optional<Dataset> scaled;
  if (cfg.training.standardize_inputs) scaled = standardize(raw);
  const Dataset& ds = scaled ? *scaled : raw;
  try {
    const SeedPlan plan{static_cast<std::uint64_t>(seed)};
    const auto split = make_split(ds, cfg.split.mismatch_ratio, plan.split());
    CycleState state;
    state.pools = init_pools(ds, split, cfg.split.initial_label_fraction, cfg.split.test_fraction, plan.pools());
    res.initial_labeled = state.pools.labeled.size();
    const ExperimentContext ctx{ds, split, cfg};
    for (int c = 0; c < cfg.strategy.cycles; ++c) {
      auto out = run_cycle(ctx, state, c, plan.base);
      out.metrics.seed = seed;
      if (cfg.output.dump_scores && out.scores) {
        res.score_dumps.emplace_back(c, scoring::score_table_csv(*out.scores, ds, split));
      }
      if (observer) observer(ds, split, state.pools, out.metrics);
      if (progress) progress(out.metrics);
      res.rounds.push_back(std::move(out.metrics));
    }
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  return res;
}

/// Runs every configured seed; seeds are independent and may run in parallel.
/// A failing seed is recorded and does not stop the others.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& ds, unsigned threads = 1,
                                       const ProgressFn& progress = {}, const PoolObserver& observer = {}) {
  cfg.validate();
  ExperimentResult result;
  result.seeds.resize(cfg.split.seeds.size());
  std::mutex progress_mutex;
  ProgressFn locked;
  if (progress) {
    locked = [&](const RoundMetrics& m) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(m);
    };
  }
  const unsigned workers = std::min<unsigned>(resolve_threads(threads), static_cast<unsigned>(cfg.split.seeds.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cfg.split.seeds.size(); i = next++) {
      result.seeds[i] = run_seed(ds, cfg, cfg.split.seeds[i], locked, observer);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, unsigned threads = 1,
                                       const ProgressFn& progress = {}) {
  cfg.validate();
  const auto ds = make_dataset(cfg.dataset);
  return run_experiment(cfg, ds, threads, progress);
}

inline constexpr std::string_view kRoundsHeader =
    "seed,cycle,strategy,accuracy,precision,n_labeled,n_active_unknown,n_unlabeled,wall_ms";

/// Rounds in seed order. Wall time is written only when `with_timing`, so
/// that identical configurations produce identical files.
inline std::string rounds_csv(const ExperimentResult& r, bool with_timing) {
  std::string out(kRoundsHeader);
  out += '\n';
  for (const auto& s : r.seeds) {
    for (const auto& m : s.rounds) {
      out += std::to_string(m.seed) + ',' + std::to_string(m.cycle) + ',' + m.strategy + ',' +
             io::format_double(m.accuracy) + ',' + io::format_double(m.precision) + ',' +
             std::to_string(m.n_labeled) + ',' + std::to_string(m.n_active_unknown) + ',' +
             std::to_string(m.n_unlabeled) + ',' + (with_timing ? io::format_double(std::round(m.wall_ms)) : "0") +
             '\n';
    }
  }
  return out;
}

struct CycleSummary {
  int cycle = 0;
  std::size_t n = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double precision_mean = 0.0;
  double precision_std = 0.0;
};

/// Mean and sample standard deviation; std is 0 for a single value.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (const double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Per-cycle aggregates over the seeds that completed.
inline std::vector<CycleSummary> summarize(const ExperimentResult& r) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_cycle;
  for (const auto& s : r.seeds) {
    for (const auto& m : s.rounds) {
      by_cycle[m.cycle].first.push_back(m.accuracy);
      by_cycle[m.cycle].second.push_back(m.precision);
    }
  }
  std::vector<CycleSummary> out;
  for (const auto& [cycle, vals] : by_cycle) {
    CycleSummary c;
    c.cycle = cycle;
    c.n = vals.first.size();
    std::tie(c.accuracy_mean, c.accuracy_std) = mean_std(vals.first);
    std::tie(c.precision_mean, c.precision_std) = mean_std(vals.second);
    out.push_back(c);
  }
  return out;
}

}  // namespace eoal
