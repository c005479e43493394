#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "eoal/data.hpp"

using namespace eoal;

namespace {

Dataset small_blobs(std::uint64_t seed = 3) { return generate_blobs(10, 20, 4, 5.0, 1.0, seed); }

}  // namespace

TEST(GenerateBlobs, ZeroNoiseSamplesSitOnTheSphere) {
  const auto ds = generate_blobs(2, 1, 2, 1.0, 0.0, 11);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_NE(ds.labels()[0], ds.labels()[1]);
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_NEAR(ds.features().row(i).norm(), 1.0, 1e-12);
}

TEST(GenerateBlobs, DeterministicForSeed) {
  EXPECT_EQ(to_csv(generate_blobs(3, 5, 4, 2.0, 0.5, 7)), to_csv(generate_blobs(3, 5, 4, 2.0, 0.5, 7)));
  EXPECT_NE(to_csv(generate_blobs(3, 5, 4, 2.0, 0.5, 7)), to_csv(generate_blobs(3, 5, 4, 2.0, 0.5, 8)));
}

TEST(GenerateBlobs, EmpiricalClassMeansMatchGeneratedMeans) {
  const auto noisy = generate_blobs(10, 500, 16, 10.0, 1.0, 1);
  // sigma = 0 consumes the same random stream, so every sample is its mean
  const auto means = generate_blobs(10, 500, 16, 10.0, 0.0, 1);
  ASSERT_EQ(noisy.size(), 5000u);
  for (int c = 0; c < 10; ++c) {
    RowVector empirical = RowVector::Zero(16);
    for (int s = 0; s < 500; ++s) empirical += noisy.features().row(c * 500 + s);
    empirical /= 500.0;
    const RowVector truth = means.features().row(c * 500);
    EXPECT_NEAR(truth.norm(), 10.0, 1e-9);
    for (int j = 0; j < 16; ++j) EXPECT_NEAR(empirical(j), truth(j), 0.2) << "class " << c << " coord " << j;
  }
}

TEST(GenerateBlobs, RejectsBadParameters) {
  EXPECT_THROW(generate_blobs(1, 5, 2, 1.0, 1.0, 0), ConfigError);
  EXPECT_THROW(generate_blobs(2, 0, 2, 1.0, 1.0, 0), ConfigError);
  EXPECT_THROW(generate_blobs(2, 5, 1, 1.0, 1.0, 0), ConfigError);
  EXPECT_THROW(generate_blobs(2, 5, 2, 0.0, 1.0, 0), ConfigError);
  EXPECT_THROW(generate_blobs(2, 5, 2, 1.0, -1.0, 0), ConfigError);
}

TEST(Csv, ParsesWellFormedFile) {
  const auto ds = parse_csv("id,label,f1,f2\n0,1,0.5,1\n1,2,-2,3e-1\n5,1,0,0\n");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 2u);
  EXPECT_EQ(ds.ids()[2], 5);
  EXPECT_DOUBLE_EQ(ds.features()(1, 1), 0.3);
}

TEST(Csv, RaggedRowNamesTheLine) {
  try {
    parse_csv("id,label,f1,f2\n0,1,0.5,1\n1,2,0.5\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Csv, RejectsNonNumericAndDuplicates) {
  EXPECT_THROW(parse_csv("id,label,f1\n0,1,abc\n"), ParseError);
  EXPECT_THROW(parse_csv("id,label,f1\n0,x,1\n"), ParseError);
  EXPECT_THROW(parse_csv("id,label,f1\n0,1,1\n0,2,2\n"), ParseError);
  EXPECT_THROW(parse_csv("label,id,f1\n0,1,1\n"), ParseError);
  EXPECT_THROW(parse_csv(""), ParseError);
}

TEST(Csv, RoundTripsGeneratedData) {
  const auto ds = generate_blobs(4, 25, 6, 3.0, 0.7, 99);
  const auto path = std::filesystem::temp_directory_path() / "eoal_roundtrip.csv";
  save_csv(ds, path);
  EXPECT_EQ(load_csv(path), ds);
  std::filesystem::remove(path);
}

TEST(Split, KnownClassCountFromRatio) {
  const auto ds = small_blobs();
  EXPECT_EQ(make_split(ds, 0.4, 1).num_known(), 4);
  EXPECT_EQ(make_split(ds, 0.2, 1).num_known(), 2);
}

TEST(Split, DisjointAndContiguouslyRemapped) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 5);
  EXPECT_EQ(split.known_classes.size() + split.unknown_classes.size(), 10u);
  for (const int k : split.known_classes) {
    EXPECT_EQ(std::count(split.unknown_classes.begin(), split.unknown_classes.end(), k), 0);
  }
  for (std::size_t i = 0; i < split.known_classes.size(); ++i) {
    EXPECT_EQ(split.remap_label(split.known_classes[i]), static_cast<int>(i) + 1);
  }
  EXPECT_DOUBLE_EQ(split.mismatch_ratio(), 0.4);
  EXPECT_EQ(make_split(ds, 0.4, 5), split);
}

TEST(Split, RejectsDegenerateRatios) {
  const auto ds = small_blobs();
  EXPECT_THROW(make_split(ds, 0.1, 0), ConfigError);   // K = 1
  EXPECT_THROW(make_split(ds, 1.0, 0), ConfigError);   // no unknowns
  EXPECT_THROW(make_split(ds, 0.45, 0), ConfigError);  // not an integer count
}

TEST(Pools, InitialPartitionInvariants) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  const auto pools = init_pools(ds, split, 0.1, 0.2, 3);
  EXPECT_NO_THROW(check_pool_invariants(ds, split, pools));
  EXPECT_TRUE(pools.active_unknown.empty());
  EXPECT_EQ(pools.labeled.size() + pools.unlabeled.size() + pools.test.size(), ds.size());
  for (const auto& t : pools.test) EXPECT_TRUE(split.is_known(ds.label_of(t.id)));
  // 20 per class, 20% test -> 4 per known class
  EXPECT_EQ(pools.test.size(), 16u);
}

TEST(Pools, EveryKnownClassHasALabeledSample) {
  const auto ds = generate_blobs(10, 50, 4, 5.0, 1.0, 4);
  const auto split = make_split(ds, 0.4, 9);
  // 2% of 160 remaining knowns rounds to 3 samples, fewer than K = 4
  const auto pools = init_pools(ds, split, 0.02, 0.2, 1);
  std::set<int> labels;
  for (const auto& l : pools.labeled) labels.insert(l.label);
  EXPECT_EQ(labels.size(), 4u);
}

TEST(Pools, DeterministicForSeed) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  EXPECT_EQ(init_pools(ds, split, 0.1, 0.2, 3), init_pools(ds, split, 0.1, 0.2, 3));
}

TEST(Pools, RejectsBadFractions) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  EXPECT_THROW(init_pools(ds, split, 0.0, 0.2, 0), ConfigError);
  EXPECT_THROW(init_pools(ds, split, 0.1, 1.0, 0), ConfigError);
  EXPECT_THROW(init_pools(ds, split, 0.1, 0.001, 0), ConfigError);  // empty test split
}

TEST(Annotations, EmptyUpdateIsIdentity) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  const auto pools = init_pools(ds, split, 0.1, 0.2, 3);
  EXPECT_EQ(apply_annotations(ds, split, pools, {}, {}), pools);
}

TEST(Annotations, MovesAnnotatedIds) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  const auto pools = init_pools(ds, split, 0.1, 0.2, 3);
  std::vector<LabeledId> known;
  std::vector<SampleId> unknown;
  for (const auto id : pools.unlabeled) {
    const int cls = ds.label_of(id);
    if (split.is_known(cls) && known.size() < 3) known.push_back({id, split.remap_label(cls)});
    if (!split.is_known(cls) && unknown.size() < 2) unknown.push_back(id);
  }
  const auto next = apply_annotations(ds, split, pools, known, unknown);
  EXPECT_EQ(next.unlabeled.size(), pools.unlabeled.size() - 5);
  EXPECT_EQ(next.labeled.size(), pools.labeled.size() + 3);
  EXPECT_EQ(next.active_unknown.size(), 2u);
  EXPECT_NO_THROW(check_pool_invariants(ds, split, next));
}

TEST(Annotations, RejectsInconsistentUpdates) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  const auto pools = init_pools(ds, split, 0.1, 0.2, 3);
  SampleId known_id = -1, unknown_id = -1;
  for (const auto id : pools.unlabeled) {
    if (split.is_known(ds.label_of(id))) known_id = id;
    else unknown_id = id;
  }
  const int right = split.remap_label(ds.label_of(known_id));
  EXPECT_THROW(apply_annotations(ds, split, pools, {{known_id, right % 4 + 1}}, {}), ConsistencyError);
  EXPECT_THROW(apply_annotations(ds, split, pools, {}, {known_id}), ConsistencyError);
  EXPECT_THROW(apply_annotations(ds, split, pools, {{unknown_id, 1}}, {}), ConsistencyError);
  EXPECT_THROW(apply_annotations(ds, split, pools, {}, {pools.test.front().id}), ConsistencyError);
  EXPECT_THROW(apply_annotations(ds, split, pools, {}, {unknown_id, unknown_id}), ConsistencyError);
}

TEST(Annotations, RandomValidUpdatesPreservePartition) {
  const auto ds = small_blobs(21);
  const auto split = make_split(ds, 0.4, 6);
  auto pools = init_pools(ds, split, 0.05, 0.2, 8);
  const auto total = pools.total();
  Rng rng(1234);
  for (int step = 0; step < 1000 && !pools.unlabeled.empty(); ++step) {
    std::vector<SampleId> pick;
    const auto n = 1 + uniform_index(rng, 2);
    auto candidates = pools.unlabeled;
    shuffle_in_place(candidates, rng);
    // Mostly empty updates keep the pool alive for all 1000 steps.
    if (uniform_index(rng, 10) == 0) pick.assign(candidates.begin(), candidates.begin() + std::min(n, candidates.size()));
    auto [known, unknown] = oracle_annotate(ds, split, pick);
    pools = apply_annotations(ds, split, pools, known, unknown);
    ASSERT_EQ(pools.total(), total);
    ASSERT_NO_THROW(check_pool_invariants(ds, split, pools));
  }
}

TEST(Oracle, SplitsByTrueClass) {
  const auto ds = small_blobs();
  const auto split = make_split(ds, 0.4, 2);
  std::vector<SampleId> knowns, unknowns;
  for (const auto id : ds.ids()) (split.is_known(ds.label_of(id)) ? knowns : unknowns).push_back(id);

  auto [k1, u1] = oracle_annotate(ds, split, {knowns[0], knowns[1]});
  EXPECT_EQ(k1.size(), 2u);
  EXPECT_TRUE(u1.empty());
  auto [k2, u2] = oracle_annotate(ds, split, {unknowns[0], unknowns[1]});
  EXPECT_TRUE(k2.empty());
  auto [k3, u3] = oracle_annotate(ds, split, {knowns[0], unknowns[0], knowns[1], unknowns[1], knowns[2]});
  EXPECT_DOUBLE_EQ(static_cast<double>(k3.size()) / 5.0, 0.6);
  for (const auto& k : k3) EXPECT_EQ(k.label, split.remap_label(ds.label_of(k.id)));
}

TEST(Standardize, ZeroMeanUnitVariance) {
  const auto ds = generate_blobs(4, 25, 3, 50.0, 2.0, 5);
  const auto z = standardize(ds);
  EXPECT_EQ(z.ids(), ds.ids());
  EXPECT_EQ(z.labels(), ds.labels());
  const RowVector mean = z.features().colwise().mean();
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(z.features().col(j).squaredNorm() / 100.0, 1.0, 1e-12);
}

TEST(Standardize, ConstantFeatureIsOnlyCentered) {
  Matrix x(3, 2);
  x << 1.0, 5.0, 2.0, 5.0, 3.0, 5.0;
  const auto z = standardize(Dataset({0, 1, 2}, {1, 1, 2}, x));
  EXPECT_TRUE(z.features().col(1).isZero());
}
