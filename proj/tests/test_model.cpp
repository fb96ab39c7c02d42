#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "auseq/model.hpp"
#include "lstm_oracle.hpp"
#include "test_util.hpp"

using namespace auseq;

namespace {

Eigen::MatrixXd random_chunk(int T, int D, Rng& rng) {
  Eigen::MatrixXd x(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) x(t, d) = normal01(rng);
  return x;
}

/// H=2, D=2 instance whose forward pass was evaluated by hand, gate by gate.
ModelParams hand_params() {
  auto p = ModelParams::zeros(2, 2);
  p.W[kForget] << 0.5, -0.3, 0.2, 0.1;
  p.W[kInput] << -0.4, 0.6, 0.3, -0.2;
  p.W[kOutput] << 0.1, 0.2, -0.5, 0.4;
  p.W[kCandidate] << 0.7, -0.1, -0.3, 0.8;
  p.U[kForget] << 0.1, 0.0, 0.0, 0.1;
  p.U[kInput] << 0.2, -0.1, 0.1, 0.2;
  p.U[kOutput] << -0.2, 0.3, 0.1, 0.0;
  p.U[kCandidate] << 0.3, 0.2, -0.1, 0.1;
  p.b[kForget] << 1.0, 1.0;
  p.b[kInput] << 0.0, 0.1;
  p.b[kOutput] << -0.1, 0.0;
  p.b[kCandidate] << 0.05, -0.05;
  p.w << 0.9, -1.2;
  p.dense_bias = 0.3;
  return p;
}

}  // namespace

TEST(InitParams, DeterministicForSeed) {
  EXPECT_EQ(init_params(5, 7, 3), init_params(5, 7, 3));
  EXPECT_FALSE(init_params(5, 7, 3) == init_params(5, 7, 4));
}

TEST(InitParams, BiasConvention) {
  const auto p = init_params(3, 4, 1);
  EXPECT_TRUE(p.b[kForget] == Eigen::VectorXd::Ones(4));
  EXPECT_TRUE(p.b[kInput].isZero(0));
  EXPECT_TRUE(p.b[kOutput].isZero(0));
  EXPECT_TRUE(p.b[kCandidate].isZero(0));
  EXPECT_EQ(p.dense_bias, 0.0);
}

TEST(InitParams, WeightsWithinBound) {
  const auto p = init_params(32, 64, 9);
  const double bound = 1.0 / 8.0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_LE(p.W[k].cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(p.U[k].cwiseAbs().maxCoeff(), bound);
  }
}

TEST(InitParams, ParameterCount) {
  const auto p = init_params(32, 64, 0);
  EXPECT_EQ(p.count(), 24897u);
  std::size_t n = 0;
  p.for_each_block([&](const std::string&, std::span<const double> s) { n += s.size(); });
  EXPECT_EQ(n, 24897u);
}

TEST(InitParams, RejectsStackedLayers) {
  EXPECT_THROW(init_params(ModelConfig{32, 64, 2}, 0), Error);
  EXPECT_THROW(init_params(ModelConfig{0, 64, 1}, 0), Error);
}

TEST(LstmForward, ZeroParamsGiveHalf) {
  Rng rng(1);
  const auto p = ModelParams::zeros(4, 3);
  const auto pred = predict_chunk(p, random_chunk(30, 4, rng));
  EXPECT_EQ(pred.probability, 0.5);
  EXPECT_EQ(pred.logit, 0.0);
  EXPECT_EQ(pred.label_hat, 1);
}

TEST(LstmForward, MatchesHandComputation) {
  Eigen::MatrixXd x(2, 2);
  x << 1.0, 0.5, -0.5, 2.0;
  const auto pred = predict_chunk(hand_params(), x);
  EXPECT_NEAR(pred.logit, -0.12313958924849144, 1e-14);
  EXPECT_NEAR(pred.probability, 0.46925394399518117, 1e-14);
  EXPECT_EQ(pred.label_hat, 0);

  Rng rng(2);
  const auto train = lstm_forward(hand_params(), x, TrainMode{0.0, &rng});
  ASSERT_TRUE(train.cache.has_value());
  EXPECT_NEAR(train.cache->h(1, 0), 0.1467063480157932, 1e-14);
  EXPECT_NEAR(train.cache->c(2, 1), 0.38889237147930356, 1e-14);
  EXPECT_EQ(train.prediction.probability, pred.probability);
}

TEST(LstmForward, EvalIsDeterministic) {
  Rng rng(3);
  const auto p = init_params(6, 5, 7);
  const auto x = random_chunk(30, 6, rng);
  const auto a = predict_chunk(p, x);
  const auto b = predict_chunk(p, x);
  EXPECT_EQ(std::memcmp(&a.probability, &b.probability, sizeof(double)), 0);
  EXPECT_EQ(a.logit, b.logit);
  EXPECT_FALSE(lstm_forward(p, x, EvalMode{}).cache.has_value());
}

TEST(LstmForward, Errors) {
  Rng rng(4);
  const auto p = init_params(6, 5, 7);
  EXPECT_THROW(predict_chunk(p, random_chunk(30, 5, rng)), Error);
  const auto x = random_chunk(30, 6, rng);
  EXPECT_THROW(lstm_forward(p, x, TrainMode{1.0, &rng}), Error);
  EXPECT_THROW(lstm_forward(p, x, TrainMode{-0.1, &rng}), Error);
}

TEST(LstmForward, ProbabilityStrictlyInsideUnitInterval) {
  auto p = ModelParams::zeros(2, 2);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
  for (double bias : {-1000.0, -40.0, 40.0, 1000.0}) {
    p.dense_bias = bias;
    const auto pred = predict_chunk(p, x);
    EXPECT_GT(pred.probability, 0.0);
    EXPECT_LT(pred.probability, 1.0);
    EXPECT_GE(bce_loss(pred.probability, 0), 0.0);
    EXPECT_TRUE(std::isfinite(bce_loss(pred.probability, bias > 0 ? 0 : 1)));
  }
}

TEST(LstmForward, InvertedDropoutPreservesExpectation) {
  Rng rng(5);
  const auto p = init_params(3, 4, 11);
  const auto x = random_chunk(3, 3, rng);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd h;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto fwd = lstm_forward(p, x, TrainMode{0.5, &rng});
    sum += fwd.cache->dropped;
    if (i == 0) h = fwd.cache->h.row(3).transpose();
  }
  for (Eigen::Index j = 0; j < 4; ++j) {
    ASSERT_GT(std::abs(h(j)), 1e-3);
    EXPECT_LT(std::abs(sum(j) / draws - h(j)), 0.01 * std::abs(h(j))) << "unit " << j;
  }
}

TEST(BceLoss, KnownValues) {
  EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(0.9, 0), 2.302585092994046, 1e-12);
  EXPECT_NEAR(bce_loss(1.0, 1), 0.0, 1e-11);
  EXPECT_GT(bce_loss(0.0, 1), 27.0);  // clamped at 1e-12, so finite
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = oracle::check_instance(seed);
    EXPECT_EQ(r.components, ModelParams::count(3, 2));
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, MatchesFiniteDifferencesWithoutDropoutAndWiderShapes) {
  // Central differences bottom out near 1e-11 absolute, so components below
  // ~1e-6 are compared against a 1e-6 floor here.
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    EXPECT_LT(oracle::check_instance(seed, 4, 3, 6, 0.0, 1e-6).max_relative_error, 1e-4) << "seed " << seed;
    EXPECT_LT(oracle::check_instance(seed, 2, 5, 3, 0.3, 1e-6).max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, ZeroInputGivesZeroInputWeightGradients) {
  Rng rng(6);
  const auto p = oracle::random_params(3, 4, rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(5, 3);
  const auto fwd = lstm_forward(p, x, TrainMode{0.0, &rng});
  const auto g = backward(p, *fwd.cache, 1);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(g.W[k].isZero(0));
  EXPECT_FALSE(g.b[kForget].isZero(0));
}

TEST(Backward, SaturatedCorrectPredictionHasNearZeroGradients) {
  Rng rng(7);
  auto p = init_params(3, 4, 2);
  p.dense_bias = 40.0;
  const auto x = random_chunk(5, 3, rng);
  const auto fwd = lstm_forward(p, x, TrainMode{0.5, &rng});
  const auto g = backward(p, *fwd.cache, 1);
  g.for_each_block([](const std::string& name, std::span<const double> s) {
    for (double v : s) EXPECT_LT(std::abs(v), 1e-10) << name;
  });
}

TEST(Backward, RejectsMismatchedCache) {
  Rng rng(8);
  const auto p = init_params(3, 4, 2);
  const auto fwd = lstm_forward(p, random_chunk(5, 3, rng), TrainMode{0.0, &rng});
  EXPECT_THROW(backward(init_params(3, 5, 2), *fwd.cache, 0), Error);
}
