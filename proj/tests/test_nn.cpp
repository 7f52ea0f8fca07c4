#include <gtest/gtest.h>

#include <cmath>

#include "aircombat/nn.hpp"
#include "support.hpp"

using namespace aircombat;
using namespace aircombat::nn;
using testing_support::loop_forward;
using testing_support::random_matrix;

namespace {

// Half squared error against a fixed target, averaged over rows.
struct HalfSquaredError {
  Matrix target;
  double operator()(const Matrix& out) const {
    return 0.5 * (out - target).squaredNorm() / static_cast<double>(out.rows());
  }
  Matrix grad(const Matrix& out) const { return out - target; }
};

Mlp random_net(Rng& rng, int max_width, OutputActivation act) {
  std::vector<int> sizes;
  const int layers = 2 + static_cast<int>(rng.index(3));
  for (int i = 0; i < layers; ++i) sizes.push_back(1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_width))));
  Mlp net = init_mlp(sizes, act, rng.next_u64());
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.1, 0.1);
  return net;
}

}  // namespace

TEST(Init, ShapesFollowLayerSizes) {
  const Mlp net = init_mlp({14, 256, 256, 2}, OutputActivation::Tanh, 1);
  ASSERT_EQ(net.num_layers(), 3u);
  EXPECT_EQ(net.weights[0].rows(), 256);
  EXPECT_EQ(net.weights[0].cols(), 14);
  EXPECT_EQ(net.weights[1].rows(), 256);
  EXPECT_EQ(net.weights[1].cols(), 256);
  EXPECT_EQ(net.weights[2].rows(), 2);
  EXPECT_EQ(net.weights[2].cols(), 256);
  EXPECT_EQ(net.biases[2].size(), 2);
}

TEST(Init, SameSeedSameParameters) {
  const Mlp a = init_mlp({5, 7, 3}, OutputActivation::Linear, 9);
  const Mlp b = init_mlp({5, 7, 3}, OutputActivation::Linear, 9);
  const Mlp c = init_mlp({5, 7, 3}, OutputActivation::Linear, 10);
  for (std::size_t k = 0; k < a.num_layers(); ++k) EXPECT_EQ(a.weights[k], b.weights[k]);
  EXPECT_NE(a.weights[0], c.weights[0]);
}

TEST(Init, WeightsWithinFanInBound) {
  const Mlp net = init_mlp({14, 256, 256, 2}, OutputActivation::Tanh, 3);
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const double bound = std::sqrt(6.0 / net.layer_sizes[k]);
    EXPECT_LE(net.weights[k].cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(net.weights[k].cwiseAbs().maxCoeff(), 0.9 * bound);
    EXPECT_EQ(net.biases[k].cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Init, RejectsBadSizes) {
  EXPECT_THROW(init_mlp({3}, OutputActivation::Linear, 1), InputError);
  EXPECT_THROW(init_mlp({3, 0, 2}, OutputActivation::Linear, 1), InputError);
}

TEST(Forward, IdentityLayer) {
  Mlp net = init_mlp({3, 3}, OutputActivation::Linear, 1);
  net.weights[0] = Matrix::Identity(3, 3);
  Rng rng(2);
  const Matrix x = random_matrix(rng, 4, 3, 5.0);
  EXPECT_EQ(predict(net, x), x);
}

TEST(Forward, TanhOutputBounded) {
  Rng rng(3);
  const Mlp net = init_mlp({4, 8, 2}, OutputActivation::Tanh, 4);
  const Matrix y = predict(net, random_matrix(rng, 200, 4, 1000.0));
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Forward, MatchesLoopOracle) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Mlp net = random_net(rng, 12, i % 2 ? OutputActivation::Tanh : OutputActivation::Linear);
    const Matrix x = random_matrix(rng, 5, net.input_size());
    const Matrix diff = predict(net, x) - loop_forward(net, x);
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, WrongWidthIsInputError) {
  const Mlp net = init_mlp({4, 3}, OutputActivation::Linear, 1);
  EXPECT_THROW(predict(net, Matrix::Zero(2, 5)), InputError);
}

TEST(ForwardProperty, BatchOrderEquivariant) {
  Rng rng(5);
  const Mlp net = init_mlp({6, 10, 10, 3}, OutputActivation::Tanh, 6);
  const Matrix x = random_matrix(rng, 16, 6);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(16);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 16, rng.engine());
  EXPECT_EQ(predict(net, perm * x), perm * predict(net, x));
}

TEST(Backward, ZeroOutputGradientGivesZeroGradients) {
  Rng rng(6);
  const Mlp net = init_mlp({3, 5, 2}, OutputActivation::Tanh, 7);
  const auto cache = forward(net, random_matrix(rng, 4, 3));
  const auto r = backward(net, cache, Matrix::Zero(4, 2));
  EXPECT_EQ(r.params.max_abs(), 0.0);
  EXPECT_EQ(r.input.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, LinearScalarInputGradientIsWeight) {
  Mlp net = init_mlp({3, 1}, OutputActivation::Linear, 1);
  net.weights[0] << 0.5, -2.0, 3.0;
  const auto cache = forward(net, Matrix::Ones(1, 3));
  const auto r = backward(net, cache, Matrix::Ones(1, 1));
  EXPECT_EQ(r.input, net.weights[0]);
}

TEST(BackwardProperty, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    const auto act = trial % 2 ? OutputActivation::Tanh : OutputActivation::Linear;
    Mlp net = random_net(rng, 16, act);
    const Matrix x = random_matrix(rng, 1 + static_cast<Eigen::Index>(rng.index(6)), net.input_size());
    HalfSquaredError loss{random_matrix(rng, x.rows(), net.output_size())};
    const auto cache = forward(net, x);
    const auto analytic = backward(net, cache, loss.grad(cache.output())).params;
    const auto numeric = finite_difference_grad(net, x, loss);
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-5) << "trial " << trial;
  }
}

TEST(FiniteDifference, ConstantLossHasZeroGradient) {
  const Mlp net = init_mlp({2, 3, 1}, OutputActivation::Linear, 1);
  const auto g = finite_difference_grad(net, Matrix::Ones(2, 2), [](const Matrix&) { return 4.2; });
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(FiniteDifference, LinearInOneWeight) {
  Mlp net = init_mlp({1, 1}, OutputActivation::Linear, 1);
  net.weights[0](0, 0) = 0.3;
  const auto g = finite_difference_grad(net, Matrix::Constant(1, 1, 2.5), [](const Matrix& y) { return 7.0 * y(0, 0); });
  EXPECT_NEAR(g.weights[0](0, 0), 17.5, 1e-6);
  EXPECT_NEAR(g.biases[0](0), 7.0, 1e-6);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstSign) {
  Rng rng(9);
  Mlp net = init_mlp({3, 4, 2}, OutputActivation::Linear, 1);
  const Mlp before = net;
  auto g = GradientSet::zeros_like(net);
  for (auto& w : g.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform() < 0.5 ? -0.7 : 2.0;
  for (auto& b : g.biases) b.setConstant(-3.0);
  auto state = AdamState::for_network(net);
  const double lr = 1e-3;
  adam_step(net, g, state, lr);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    for (Eigen::Index i = 0; i < g.weights[k].size(); ++i) {
      const double gi = g.weights[k].data()[i];
      EXPECT_NEAR(net.weights[k].data()[i] - before.weights[k].data()[i], -lr * gi / (std::abs(gi) + 1e-8), 1e-15);
    }
    for (Eigen::Index i = 0; i < g.biases[k].size(); ++i)
      EXPECT_NEAR(net.biases[k](i) - before.biases[k](i), lr * 3.0 / (3.0 + 1e-8), 1e-15);
  }
}

TEST(Adam, ZeroGradientFromFreshStateLeavesParameters) {
  Mlp net = init_mlp({3, 4, 2}, OutputActivation::Linear, 1);
  const Mlp before = net;
  auto state = AdamState::for_network(net);
  adam_step(net, GradientSet::zeros_like(net), state, 0.1);
  adam_step(net, GradientSet::zeros_like(net), state, 0.1);
  EXPECT_EQ(state.step, 2);
  for (std::size_t k = 0; k < net.num_layers(); ++k) EXPECT_EQ(net.weights[k], before.weights[k]);
}

TEST(Adam, ZeroLearningRateStillAdvancesMoments) {
  Mlp net = init_mlp({2, 2}, OutputActivation::Linear, 1);
  const Mlp before = net;
  auto state = AdamState::for_network(net);
  auto g = GradientSet::zeros_like(net);
  g.weights[0].setConstant(1.0);
  adam_step(net, g, state, 0.0);
  EXPECT_EQ(net.weights[0], before.weights[0]);
  EXPECT_EQ(state.step, 1);
  EXPECT_NEAR(state.first_moment.weights[0](0, 0), 0.1, 1e-15);
}

TEST(Adam, NonFiniteGradientRejectedWithoutChanges) {
  Mlp net = init_mlp({2, 2}, OutputActivation::Linear, 1);
  const Mlp before = net;
  auto state = AdamState::for_network(net);
  auto g = GradientSet::zeros_like(net);
  g.weights[0](1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(net, g, state, 0.1), DivergenceError);
  EXPECT_EQ(state.step, 0);
  EXPECT_EQ(net.weights[0], before.weights[0]);
}

TEST(Adam, IncongruentGradientRejected) {
  Mlp net = init_mlp({2, 2}, OutputActivation::Linear, 1);
  auto state = AdamState::for_network(net);
  const Mlp other = init_mlp({2, 3}, OutputActivation::Linear, 1);
  EXPECT_THROW(adam_step(net, GradientSet::zeros_like(other), state, 0.1), InputError);
}
