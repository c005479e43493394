#include <gtest/gtest.h>

#include <cmath>

#include "eoal/nn.hpp"
#include "grad_check.hpp"

using namespace eoal;
using eoal::testing::random_matrix;

namespace {

// Straight-line re-evaluation with explicit loops, no Eigen products.
Matrix reference_forward(const nn::Mlp& m, const Matrix& x) {
  std::vector<std::vector<double>> h(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) h[static_cast<std::size_t>(i)].assign(x.row(i).data(), x.row(i).data() + x.cols());
  for (std::size_t l = 0; l < m.depth(); ++l) {
    const auto& layer = m.layers()[l];
    for (auto& row : h) {
      std::vector<double> next(static_cast<std::size_t>(layer.out_dim()));
      for (Eigen::Index o = 0; o < layer.out_dim(); ++o) {
        double acc = layer.bias(o);
        for (Eigen::Index in = 0; in < layer.in_dim(); ++in) acc += row[static_cast<std::size_t>(in)] * layer.weight(in, o);
        next[static_cast<std::size_t>(o)] = (l + 1 < m.depth()) ? std::max(acc, 0.0) : acc;
      }
      row = std::move(next);
    }
  }
  Matrix out(x.rows(), m.out_dim());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index o = 0; o < out.cols(); ++o) out(i, o) = h[static_cast<std::size_t>(i)][static_cast<std::size_t>(o)];
  }
  return out;
}

std::vector<int> random_dims(Rng& rng) {
  std::vector<int> dims;
  const auto depth = 2 + uniform_index(rng, 3);
  for (std::size_t i = 0; i < depth; ++i) dims.push_back(1 + static_cast<int>(uniform_index(rng, 6)));
  return dims;
}

}  // namespace

TEST(Forward, IdentityLayerPassesInputThrough) {
  nn::Mlp m({nn::Layer{Matrix::Identity(3, 3), RowVector::Zero(3)}});
  Rng rng(1);
  const Matrix x = random_matrix(4, 3, rng);
  EXPECT_TRUE(nn::predict(m, x).isApprox(x));
}

TEST(Forward, ZeroParametersGiveZeroOutput) {
  nn::Mlp m({nn::Layer{Matrix::Zero(3, 5), RowVector::Zero(5)}, nn::Layer{Matrix::Zero(5, 2), RowVector::Zero(2)}});
  Rng rng(2);
  EXPECT_TRUE(nn::predict(m, random_matrix(4, 3, rng)).isZero());
}

TEST(Forward, MatchesStraightLineReevaluation) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto dims = random_dims(rng);
    auto m = nn::init_params(dims, rng);
    for (auto& l : m.layers()) l.bias = random_matrix(1, l.bias.size(), rng).row(0);
    const Matrix x = random_matrix(5, dims.front(), rng);
    const Matrix got = nn::predict(m, x);
    const Matrix want = reference_forward(m, x);
    ASSERT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, RejectsDimensionMismatch) {
  auto m = nn::init_params({3, 2}, 0);
  EXPECT_THROW(nn::forward(m, Matrix::Zero(2, 4)), ConsistencyError);
  EXPECT_THROW(nn::forward(m, Matrix::Zero(0, 3)), ConsistencyError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(4);
  auto m = nn::init_params({4, 6, 3}, rng);
  const auto act = nn::forward(m, random_matrix(5, 4, rng));
  auto g = nn::backward(m, act, Matrix::Zero(5, 3));
  for (const auto& p : g.params.layers()) {
    EXPECT_TRUE(p.weight.isZero());
    EXPECT_TRUE(p.bias.isZero());
  }
  EXPECT_TRUE(g.input.isZero());
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto dims = random_dims(rng);
    auto m = nn::init_params(dims, rng);
    for (auto& l : m.layers()) l.bias = random_matrix(1, l.bias.size(), rng, 0.1).row(0);
    Matrix x = random_matrix(3, dims.front(), rng);
    const Matrix w = random_matrix(3, dims.back(), rng);
    // L = sum(w .* out): upstream gradient is w
    auto loss = [&] { return nn::predict(m, x).cwiseProduct(w).sum(); };
    auto g = nn::backward(m, nn::forward(m, x), w);
    std::vector<nn::ParamRef> refs, grads;
    nn::collect_params(m, "m", refs);
    nn::collect_params(g.params, "g", grads);
    const auto numeric = eoal::testing::numeric_gradient(refs, loss);
    ASSERT_LT(eoal::testing::relative_error(eoal::testing::flatten(grads), numeric), 1e-4) << "trial " << trial;
    const Matrix numeric_x = eoal::testing::numeric_gradient(x, loss);
    ASSERT_LT(eoal::testing::relative_error(eoal::testing::to_vector(g.input), eoal::testing::to_vector(numeric_x)), 1e-4);
  }
}

TEST(Backward, LinearLeastSquaresClosedForm) {
  Rng rng(6);
  const Matrix x = random_matrix(20, 4, rng);
  const Matrix y = random_matrix(20, 1, rng);
  Matrix w = random_matrix(4, 1, rng);
  nn::Mlp m({nn::Layer{w, RowVector::Zero(1)}});
  const auto act = nn::forward(m, x);
  const Matrix residual = act.output() - y;
  const auto g = nn::backward(m, act, 2.0 * residual / 20.0);
  const Matrix closed_form = 2.0 * x.transpose() * (x * w - y) / 20.0;
  EXPECT_LT((g.params.layers()[0].weight - closed_form).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, RejectsStaleActivations) {
  Rng rng(7);
  auto a = nn::init_params({3, 4, 2}, rng);
  auto b = nn::init_params({3, 5, 2}, rng);
  auto c = nn::init_params({3, 2}, rng);
  const auto act = nn::forward(a, random_matrix(2, 3, rng));
  EXPECT_THROW(nn::backward(b, act, Matrix::Zero(2, 2)), ConsistencyError);
  EXPECT_THROW(nn::backward(c, act, Matrix::Zero(2, 2)), ConsistencyError);
  EXPECT_THROW(nn::backward(a, act, Matrix::Zero(3, 2)), ConsistencyError);
}

TEST(Backward, ShapeClosureOverRandomArchitectures) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto dims = random_dims(rng);
    auto m = nn::init_params(dims, rng);
    const auto n = 1 + static_cast<Eigen::Index>(uniform_index(rng, 5));
    const auto act = nn::forward(m, random_matrix(n, dims.front(), rng));
    const auto g = nn::backward(m, act, random_matrix(n, dims.back(), rng));
    ASSERT_EQ(g.input.rows(), n);
    ASSERT_EQ(g.input.cols(), dims.front());
    for (std::size_t l = 0; l < m.depth(); ++l) {
      ASSERT_EQ(g.params.layers()[l].weight.rows(), m.layers()[l].weight.rows());
      ASSERT_EQ(g.params.layers()[l].weight.cols(), m.layers()[l].weight.cols());
      ASSERT_EQ(g.params.layers()[l].bias.size(), m.layers()[l].bias.size());
    }
  }
}

TEST(Sgd, PlainGradientDescentWithoutMomentumOrDecay) {
  Matrix p(1, 2);
  p << 1.0, -2.0;
  Matrix g(1, 2);
  g << 0.5, 0.25;
  std::vector<nn::ParamRef> ps{{"p", p.data(), 2, 1, 2, true}};
  std::vector<nn::ParamRef> gs{{"g", g.data(), 2, 1, 2, true}};
  nn::SgdState s;
  s.learning_rate = 0.1;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  nn::sgd_step(ps, gs, s, 0);
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(p(0, 1), -2.0 - 0.025);
}

TEST(Sgd, MomentumRecurrence) {
  Matrix p = Matrix::Zero(1, 1);
  Matrix g = Matrix::Constant(1, 1, 2.0);
  std::vector<nn::ParamRef> ps{{"p", p.data(), 1, 1, 1, true}};
  std::vector<nn::ParamRef> gs{{"g", g.data(), 1, 1, 1, true}};
  nn::SgdState s;
  s.learning_rate = 0.1;
  s.momentum = 0.9;
  s.weight_decay = 0.0;
  nn::sgd_step(ps, gs, s, 0);
  EXPECT_DOUBLE_EQ(s.velocity[0][0], 2.0);
  nn::sgd_step(ps, gs, s, 0);
  EXPECT_DOUBLE_EQ(s.velocity[0][0], 1.9 * 2.0);
  EXPECT_DOUBLE_EQ(p(0, 0), -0.1 * 2.0 - 0.1 * 3.8);
}

TEST(Sgd, WeightDecaySkipsBiases) {
  Matrix w = Matrix::Constant(1, 1, 1.0);
  Matrix b = Matrix::Constant(1, 1, 1.0);
  Matrix z = Matrix::Zero(1, 1);
  std::vector<nn::ParamRef> ps{{"w", w.data(), 1, 1, 1, true}, {"b", b.data(), 1, 1, 1, false}};
  std::vector<nn::ParamRef> gs{{"gw", z.data(), 1, 1, 1, true}, {"gb", z.data(), 1, 1, 1, false}};
  nn::SgdState s;
  s.learning_rate = 0.5;
  s.momentum = 0.0;
  s.weight_decay = 0.1;
  nn::sgd_step(ps, gs, s, 0);
  EXPECT_DOUBLE_EQ(w(0, 0), 1.0 - 0.5 * 0.1);
  EXPECT_DOUBLE_EQ(b(0, 0), 1.0);
}

TEST(Sgd, StepScheduleHalvesAtMultiples) {
  nn::SgdState s;
  s.learning_rate = 0.01;
  s.step_decay_factor = 0.5;
  s.step_decay_every = 20;
  EXPECT_DOUBLE_EQ(s.lr_at(0), 0.01);
  EXPECT_DOUBLE_EQ(s.lr_at(19), 0.01);
  EXPECT_DOUBLE_EQ(s.lr_at(20), 0.005);
  EXPECT_DOUBLE_EQ(s.lr_at(39), 0.005);
  EXPECT_DOUBLE_EQ(s.lr_at(40), 0.0025);
}

TEST(InitParams, DeterministicAndBounded) {
  const auto a = nn::init_params({7, 5, 3}, 42);
  const auto b = nn::init_params({7, 5, 3}, 42);
  for (std::size_t l = 0; l < a.depth(); ++l) {
    EXPECT_EQ(a.layers()[l].weight, b.layers()[l].weight);
    EXPECT_TRUE(a.layers()[l].bias.isZero());
    const double bound = std::sqrt(6.0 / static_cast<double>(a.layers()[l].in_dim()));
    EXPECT_LE(a.layers()[l].weight.cwiseAbs().maxCoeff(), bound);
  }
}

TEST(InitParams, WeightMeanIsStatisticallyZero) {
  const auto m = nn::init_params({100, 100}, 2024);
  const auto& w = m.layers()[0].weight;
  const double bound = std::sqrt(6.0 / 100.0);
  const double se = bound / std::sqrt(3.0 * static_cast<double>(w.size()));
  EXPECT_EQ(w.size(), 10000);
  EXPECT_LT(std::abs(w.mean()), 3.0 * se);
}

TEST(Checkpoint, DumpsNamedTensors) {
  Rng rng(9);
  auto bundle = nn::init_bundle(4, {6, 3}, 2, rng);
  const auto csv = nn::checkpoint_csv(bundle.params());
  EXPECT_NE(csv.find("feature.0.weight,4,6,"), std::string::npos);
  EXPECT_NE(csv.find("binary2.0.bias,1,2,"), std::string::npos);
}
