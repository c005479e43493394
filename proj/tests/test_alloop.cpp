#include <gtest/gtest.h>

#include <algorithm>

#include "eoal/alloop.hpp"

using namespace eoal;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.dataset.n_classes = 5;
  cfg.dataset.per_class = 40;
  cfg.dataset.dim = 4;
  cfg.dataset.radius = 4.0;
  cfg.split.mismatch_ratio = 0.6;
  cfg.split.initial_label_fraction = 0.1;
  cfg.training.epochs = 6;
  cfg.training.batch_size = 16;
  cfg.training.hidden = {8, 4};
  cfg.training.step_decay_every = 3;
  cfg.strategy.budget = 10;
  cfg.strategy.cycles = 3;
  return cfg;
}

struct World {
  ExperimentConfig cfg;
  Dataset ds;
  OpenSetSplit split;
  PoolState pools;

  explicit World(ExperimentConfig c, std::uint64_t seed = 3) : cfg(std::move(c)) {
    ds = make_dataset(cfg.dataset);
    split = make_split(ds, cfg.split.mismatch_ratio, seed);
    pools = init_pools(ds, split, cfg.split.initial_label_fraction, cfg.split.test_fraction, seed);
  }

  ExperimentContext ctx() const { return {ds, split, cfg}; }

  // Moves n unknown-class samples from the pool to the active unknowns.
  void add_unknowns(std::size_t n) {
    std::vector<SampleId> u;
    for (const auto id : pools.unlabeled) {
      if (u.size() < n && !split.is_known(ds.label_of(id))) u.push_back(id);
    }
    pools = apply_annotations(ds, split, pools, {}, u);
  }
};

std::vector<double> flat(nn::ModelBundle m) {
  std::vector<double> out;
  for (const auto& p : m.params()) out.insert(out.end(), p.data, p.data + p.size);
  return out;
}

}  // namespace

TEST(LossTerms, FollowAblationFlags) {
  AblationFlags a;
  auto t = loss_terms(a);
  EXPECT_TRUE(t.bce && t.em && t.tuplet);
  a.use_s_c = false;
  t = loss_terms(a);
  EXPECT_TRUE(t.bce && !t.em && t.tuplet);
  a = {};
  a.use_s_d = false;
  EXPECT_FALSE(loss_terms(a).tuplet);
  a = {};
  a.use_bc = false;
  t = loss_terms(a);
  EXPECT_FALSE(t.bce || t.em);
}

TEST(TrainCycle, NoClusteringWithoutActiveUnknowns) {
  World w(small_config());
  TrainLog log;
  const auto m = train_cycle_models(w.ctx(), w.pools, 1, nullptr, &log);
  EXPECT_EQ(log.clusterings, 0);
  EXPECT_EQ(log.epoch_losses.size(), 6u);
  EXPECT_TRUE(m.feature.all_finite());
}

TEST(TrainCycle, ReclustersEveryEpochWithActiveUnknowns) {
  World w(small_config());
  w.add_unknowns(8);
  TrainLog log;
  train_cycle_models(w.ctx(), w.pools, 1, nullptr, &log);
  EXPECT_EQ(log.clusterings, 6);
}

TEST(TrainCycle, LossTrendsDown) {
  auto cfg = small_config();
  cfg.training.epochs = 30;
  cfg.training.step_decay_every = 10;
  World w(cfg);
  w.add_unknowns(10);
  TrainLog log;
  train_cycle_models(w.ctx(), w.pools, 2, nullptr, &log);
  EXPECT_LT(log.epoch_losses.back(), log.epoch_losses.front());
}

TEST(TrainCycle, ZeroLambdaEqualsNoTupletTerm) {
  auto a = small_config();
  a.training.lambda = 0.0;
  auto b = a;
  b.ablation.use_s_d = false;
  World wa(a), wb(b);
  wa.add_unknowns(8);
  wb.add_unknowns(8);
  EXPECT_EQ(flat(train_cycle_models(wa.ctx(), wa.pools, 5)), flat(train_cycle_models(wb.ctx(), wb.pools, 5)));
}

TEST(TrainCycle, DeterministicPerSeed) {
  World w(small_config());
  w.add_unknowns(5);
  EXPECT_EQ(flat(train_cycle_models(w.ctx(), w.pools, 9)), flat(train_cycle_models(w.ctx(), w.pools, 9)));
  EXPECT_NE(flat(train_cycle_models(w.ctx(), w.pools, 9)), flat(train_cycle_models(w.ctx(), w.pools, 10)));
}

TEST(TrainCycle, DivergenceIsReported) {
  auto cfg = small_config();
  cfg.training.learning_rate = 1e6;
  cfg.dataset.radius = 1e3;
  World w(cfg);
  try {
    train_cycle_models(w.ctx(), w.pools, 1);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(RunCycle, FirstCycleHasNoDistanceScore) {
  World w(small_config());
  CycleState state{w.pools, {}, {}};
  const auto out = run_cycle(w.ctx(), state, 0, 11);
  ASSERT_TRUE(out.scores.has_value());
  for (const auto& r : out.scores->rows) EXPECT_EQ(r.s_d, 0.0);
}

TEST(RunCycle, OraclePartitionsTheBudget) {
  World w(small_config());
  CycleState state{w.pools, {}, {}};
  const auto total = w.pools.total();
  for (int c = 0; c < 3; ++c) {
    const auto before_l = state.pools.labeled.size();
    const auto before_au = state.pools.active_unknown.size();
    const auto out = run_cycle(w.ctx(), state, c, 11);
    EXPECT_EQ(out.metrics.n_queried, 10u);
    EXPECT_EQ(state.pools.labeled.size() - before_l, out.metrics.n_known_queried);
    EXPECT_EQ(state.pools.active_unknown.size() - before_au, 10u - out.metrics.n_known_queried);
    EXPECT_EQ(state.pools.total(), total);
    EXPECT_GE(out.metrics.precision, 0.0);
    EXPECT_LE(out.metrics.precision, 1.0);
    EXPECT_GE(out.metrics.accuracy, 0.0);
    EXPECT_LE(out.metrics.accuracy, 1.0);
  }
}

TEST(RunCycle, EveryStrategyAndAblationRuns) {
  for (const auto* name : {"random", "entropy", "certainty", "coreset"}) {
    auto cfg = small_config();
    cfg.strategy.name = name;
    World w(cfg);
    CycleState state{w.pools, {}, {}};
    EXPECT_NO_THROW(run_cycle(w.ctx(), state, 0, 1)) << name;
    EXPECT_NO_THROW(run_cycle(w.ctx(), state, 1, 1)) << name;
  }
  std::vector<std::function<void(AblationFlags&)>> variants{
      [](AblationFlags& a) { a.use_s_c = false; },     [](AblationFlags& a) { a.use_s_d = false; },
      [](AblationFlags& a) { a.use_d_au = false; },    [](AblationFlags& a) { a.use_diversity = false; },
      [](AblationFlags& a) { a.diversity_only = true; }, [](AblationFlags& a) { a.use_bc = false; },
      [](AblationFlags& a) { a.use_target_model = false; }};
  for (std::size_t v = 0; v < variants.size(); ++v) {
    auto cfg = small_config();
    variants[v](cfg.ablation);
    World w(cfg);
    CycleState state{w.pools, {}, {}};
    for (int c = 0; c < 3; ++c) EXPECT_NO_THROW(run_cycle(w.ctx(), state, c, 2)) << "variant " << v;
  }
}

TEST(RunSeed, BookkeepingReplay) {
  const auto cfg = small_config();
  const auto ds = make_dataset(cfg.dataset);
  const auto res = run_seed(ds, cfg, 4);
  ASSERT_FALSE(res.error.has_value()) << *res.error;
  ASSERT_EQ(res.rounds.size(), 3u);
  std::size_t known = 0, queried = 0;
  for (const auto& m : res.rounds) {
    known += m.n_known_queried;
    queried += m.n_queried;
    EXPECT_EQ(m.n_labeled, res.initial_labeled + known);
    EXPECT_EQ(m.n_active_unknown, queried - known);
  }
  EXPECT_EQ(queried, 30u);
}

TEST(RunExperiment, OneSeedOneCycleOneRow) {
  auto cfg = small_config();
  cfg.strategy.cycles = 1;
  const auto r = run_experiment(cfg);
  const auto csv = rounds_csv(r, false);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kRoundsHeader);
}

TEST(RunExperiment, DeterministicAcrossThreadCounts) {
  auto cfg = small_config();
  cfg.split.seeds = {0, 1, 2};
  const auto a = rounds_csv(run_experiment(cfg, 1), false);
  const auto b = rounds_csv(run_experiment(cfg, 3), false);
  EXPECT_EQ(a, b);
}

TEST(RunExperiment, FailedSeedDoesNotStopOthers) {
  auto cfg = small_config();
  cfg.split.seeds = {0, 1};
  cfg.strategy.budget = 60;
  cfg.strategy.cycles = 4;  // the pool runs dry in the last cycle
  const auto r = run_experiment(cfg);
  ASSERT_EQ(r.seeds.size(), 2u);
  for (const auto& s : r.seeds) {
    EXPECT_TRUE(s.error.has_value());
    EXPECT_FALSE(s.rounds.empty());
  }
}

TEST(Summary, MeanAndSampleStd) {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_EQ(mean_std({0.7}).second, 0.0);

  ExperimentResult r;
  for (int seed = 0; seed < 4; ++seed) {
    SeedResult s;
    for (int c = 0; c < 2; ++c) {
      RoundMetrics rm;
      rm.seed = seed;
      rm.cycle = c;
      rm.accuracy = 0.1 * seed + c;
      rm.precision = 0.5;
      s.rounds.push_back(rm);
    }
    r.seeds.push_back(s);
  }
  const auto sum = summarize(r);
  ASSERT_EQ(sum.size(), 2u);
  EXPECT_EQ(sum[1].n, 4u);
  EXPECT_NEAR(sum[1].accuracy_mean, 1.15, 1e-12);
  EXPECT_EQ(sum[0].precision_std, 0.0);
}

TEST(RunCycle, KnownSamplesScoreLowerThanUnknowns) {
  auto cfg = small_config();
  cfg.dataset.n_classes = 10;
  cfg.dataset.per_class = 60;
  cfg.dataset.dim = 8;
  cfg.split.mismatch_ratio = 0.4;
  cfg.training.epochs = 20;
  cfg.training.step_decay_every = 10;
  cfg.training.hidden = {16, 8};
  cfg.strategy.budget = 30;
  World w(cfg);
  CycleState state{w.pools, {}, {}};
  std::optional<scoring::ScoreTable> last;
  for (int c = 0; c < 3; ++c) last = run_cycle(w.ctx(), state, c, 21).scores;
  ASSERT_TRUE(last.has_value());
  double known = 0.0, unknown = 0.0;
  int n_known = 0, n_unknown = 0;
  for (const auto& r : last->rows) {
    if (w.split.is_known(w.ds.label_of(r.id))) {
      known += r.s;
      ++n_known;
    } else {
      unknown += r.s;
      ++n_unknown;
    }
  }
  EXPECT_LT(known / n_known, unknown / n_unknown);
}
