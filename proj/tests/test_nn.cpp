#include <gtest/gtest.h>

#include "byols/error.hpp"
#include "byols/nn/adam.hpp"
#include "byols/nn/ops.hpp"
#include "byols/trainer.hpp"
#include "gradcheck.hpp"

using namespace byols;
using namespace byols::nn;
using byols::testing::check_gradients;

namespace {

// Scalar probe of an output: sum(y * r) with a fixed random r, so every output entry matters.
Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor r(y.shape());
  for (auto& v : r.data) v = n(rng);
  return sum_all(mul(y, y.graph->constant(r)));
}

struct Fixture {
  ParameterStore store;
  Rng rng{17};
  Parameter& make(const std::string& name, Shape s, double scale = 1.0) {
    Parameter& p = store.create(name, std::move(s), 0.0);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& v : p.value.data) v = n(rng);
    return p;
  }
};

void expect_grads(Fixture& f, const std::function<Var(Graph&)>& build, int samples = 60, double tol = 1e-6) {
  const auto r = check_gradients(f.store.trainable(), build, samples, 5);
  EXPECT_GE(r.checked, samples / 2) << "too many kink crossings";
  EXPECT_LT(r.max_rel_error, tol);
}

}  // namespace

TEST(Tensor, MatrixViewsAreRowMajor) {
  Tensor t({2, 3, 4});
  for (Index i = 0; i < t.size(); ++i) t.data(i) = static_cast<double>(i);
  EXPECT_EQ(t.matrix(1).rows(), 2);
  EXPECT_EQ(t.matrix(1).cols(), 12);
  EXPECT_EQ(t.matrix().rows(), 6);
  EXPECT_EQ(t.matrix()(1, 2), 6.0);
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 3, 4;
  EXPECT_EQ(Tensor::from_matrix(m).data(1), 2.0);
  EXPECT_EQ(Tensor::from_matrix(m).to_matrix(), m);
}

TEST(Graph, ConstantsGetNoGradient) {
  Graph g;
  ParameterStore s;
  Parameter& p = s.create("p", {3}, 2.0);
  const Var c = g.constant(Tensor({3}, 5.0));
  const Var loss = sum_all(mul(g.param(p), c));
  g.backward(loss);
  EXPECT_EQ(p.grad.data, Eigen::VectorXd::Constant(3, 5.0));
  EXPECT_FALSE(c.needs_grad());
}

TEST(Graph, UntrackedParametersAreConstants) {
  Graph g;
  ParameterStore s;
  Parameter& p = s.create("p", {2}, 1.0);
  const Var v = g.param(p, false);
  EXPECT_FALSE(v.needs_grad());
  g.backward(sum_all(scale(v, 3.0)));
  EXPECT_EQ(p.grad.data.cwiseAbs().sum(), 0.0);
}

TEST(Graph, GradientsAccumulateAcrossUses) {
  Graph g;
  ParameterStore s;
  Parameter& p = s.create("p", {1}, 3.0);
  const Var x = g.param(p);
  g.backward(sum_all(mul(x, x)));  // d(x^2)/dx = 2x
  EXPECT_EQ(p.grad.data(0), 6.0);
}

TEST(OpGradients, Elementwise) {
  Fixture f;
  Parameter& a = f.make("a", {3, 4});
  Parameter& b = f.make("b", {3, 4});
  expect_grads(f, [&](Graph& g) {
    const Var x = g.param(a), y = g.param(b);
    return weighted_sum(add(sub(mul(x, y), scale(tanh(x), 0.7)), add(sigmoid(y), gelu(x))), 1);
  });
}

TEST(OpGradients, Relu) {
  Fixture f;
  Parameter& a = f.make("a", {5, 6});
  expect_grads(f, [&](Graph& g) { return weighted_sum(relu(g.param(a)), 2); });
}

TEST(OpGradients, ShapeOps) {
  Fixture f;
  Parameter& a = f.make("a", {2, 3, 4});
  Parameter& b = f.make("b", {2, 3, 4});
  expect_grads(f, [&](Graph& g) {
    const Var x = g.param(a), y = g.param(b);
    const Var p = permute(x, {2, 0, 1});
    const Var r = reshape(p, {4, 6});
    const Var s = slice(y, 2, 1, 2);
    const Var c = concat({s, slice(x, 2, 0, 3)}, 2);
    const Var st = stack({x, y}, 1);
    return add(add(weighted_sum(r, 3), weighted_sum(c, 4)), weighted_sum(st, 5));
  });
}

TEST(OpGradients, LinearAndBatchedMatmul) {
  Fixture f;
  Parameter& x = f.make("x", {2, 3, 5});
  Parameter& w = f.make("w", {4, 5});
  Parameter& bias = f.make("bias", {4});
  Parameter& m = f.make("m", {2, 6, 5});
  expect_grads(f, [&](Graph& g) {
    const Var y = linear(g.param(x), g.param(w), g.param(bias));
    const Var z = batched_matmul(g.param(x), g.param(m), true);
    return add(weighted_sum(y, 6), weighted_sum(z, 7));
  });
}

TEST(OpGradients, Conv2dStridedPaddedGrouped) {
  Fixture f;
  Parameter& x = f.make("x", {2, 4, 7, 6});
  Parameter& w = f.make("w", {6, 2, 3, 2});
  Parameter& bias = f.make("bias", {6});
  Conv2dOptions opt;
  opt.stride_h = 2;
  opt.pad_h = 1;
  opt.pad_w = 1;
  opt.groups = 2;
  expect_grads(f, [&](Graph& g) { return weighted_sum(conv2d(g.param(x), g.param(w), g.param(bias), opt), 8); });
}

TEST(OpGradients, MaxPoolAndMaxAxis) {
  Fixture f;
  Parameter& x = f.make("x", {2, 2, 6, 5});
  expect_grads(f, [&](Graph& g) {
    const Var p = max_pool2d(g.param(x), PoolOptions{3, 3, 2, 2, 1, 1});
    return add(weighted_sum(p, 9), weighted_sum(max_axis(g.param(x), 3), 10));
  });
}

TEST(OpGradients, Normalisation) {
  Fixture f;
  Parameter& x = f.make("x", {4, 3, 5});
  Parameter& gamma = f.make("gamma", {3});
  Parameter& beta = f.make("beta", {3});
  Parameter& lg = f.make("lg", {5});
  Parameter& lb = f.make("lb", {5});
  Tensor rm({3}, 0.0), rv({3}, 1.0);
  expect_grads(f, [&](Graph& g) {
    const Var bn = batch_norm(g.param(x), g.param(gamma), g.param(beta), rm, rv, true);
    const Var ln = layer_norm(g.param(x), g.param(lg), g.param(lb));
    return add(weighted_sum(bn, 11), weighted_sum(ln, 12));
  });
}

TEST(OpGradients, ReductionsAndSoftmax) {
  Fixture f;
  Parameter& x = f.make("x", {3, 4, 5});
  expect_grads(f, [&](Graph& g) {
    const Var v = g.param(x);
    return add(add(weighted_sum(softmax(v), 13), weighted_sum(mean_axis(v, 1), 14)), mean_all(mul(v, v)));
  });
}

TEST(OpGradients, Losses) {
  Fixture f;
  Parameter& a = f.make("a", {4, 6});
  Parameter& b = f.make("b", {4, 6});
  Tensor targets({4, 6});
  for (Index i = 0; i < targets.size(); ++i) targets.data(i) = static_cast<double>(i % 3 == 0);
  expect_grads(f, [&](Graph& g) {
    const Var x = g.param(a), y = g.param(b);
    const Var l1 = mse(l2_normalize_rows(x), l2_normalize_rows(y));
    const Var l2 = cross_entropy(x, {0, 5, 2, 2});
    const Var l3 = bce_with_logits(y, targets);
    return add(add(l1, l2), l3);
  });
}

TEST(OpGradients, DropoutWithFixedSeed) {
  Fixture f;
  Parameter& a = f.make("a", {6, 7});
  expect_grads(f, [&](Graph& g) { return weighted_sum(dropout(g.param(a), 0.3, 99), 15); });
}

TEST(OpGradients, LstmAndTemporalPool) {
  Fixture f;
  Lstm fwd(f.store, "lstm", 3, 4, false, f.rng);
  Lstm bwd(f.store, "lstm_r", 3, 4, true, f.rng);
  Parameter& x = f.make("x", {2, 5, 3});
  expect_grads(f, [&](Graph& g) {
    ForwardContext ctx{g, true};
    const Var seq = concat({fwd(ctx, g.param(x)), bwd(ctx, g.param(x))}, 2);
    return weighted_sum(temporal_pool(seq), 16);
  });
}

TEST(Ops, ForwardValues) {
  Graph g;
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, -1, 0, 4;
  const Var x = g.constant(Tensor::from_matrix(m));
  const Eigen::MatrixXd sm = softmax(x).value().to_matrix();
  EXPECT_NEAR(sm.row(0).sum(), 1.0, 1e-15);
  EXPECT_NEAR(sm(0, 2) / sm(0, 1), std::exp(1.0), 1e-12);
  EXPECT_EQ(max_axis(x, 1).value().data, Eigen::Vector2d(3, 4));
  EXPECT_NEAR(mean_all(x).value().data(0), 1.5, 1e-15);
  const Eigen::MatrixXd n = l2_normalize_rows(x).value().to_matrix();
  EXPECT_NEAR(n.row(1).norm(), 1.0, 1e-12);
  EXPECT_NEAR(cross_entropy(x, {2, 0}).value().data(0),
              0.5 * (-std::log(sm(0, 2)) - std::log(sm(1, 0))), 1e-12);
  EXPECT_NEAR(gelu(g.constant(Tensor({1}, 1.0))).value().data(0), 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
}

TEST(Ops, DropoutScalesKeptUnits) {
  Graph g;
  const Var x = g.constant(Tensor({10000}, 1.0));
  const Tensor y = dropout(x, 0.3, 7).value();
  int kept = 0;
  for (double v : y.data) {
    if (v != 0.0) {
      EXPECT_NEAR(v, 1.0 / 0.7, 1e-12);
      ++kept;
    }
  }
  EXPECT_NEAR(kept / 10000.0, 0.7, 0.02);
  EXPECT_EQ(dropout(x, 0.3, 7).value().data, y.data);
}

TEST(Ops, BatchNormRunningStatistics) {
  Graph g;
  Tensor rm({2}, 0.0), rv({2}, 1.0);
  Eigen::MatrixXd m(4, 2);
  m << 1, 10, 2, 20, 3, 30, 4, 40;
  const Var x = g.constant(Tensor::from_matrix(m));
  const Var gamma = g.constant(Tensor({2}, 1.0)), beta = g.constant(Tensor({2}, 0.0));
  const Eigen::MatrixXd y = batch_norm(x, gamma, beta, rm, rv, true, 0.1).value().to_matrix();
  EXPECT_NEAR(y.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(rm.data(0), 0.1 * 2.5, 1e-12);
  // Running variance uses the unbiased estimate.
  EXPECT_NEAR(rv.data(0), 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
  const Eigen::MatrixXd e = batch_norm(x, gamma, beta, rm, rv, false).value().to_matrix();
  EXPECT_NEAR(e(0, 0), (1 - rm.data(0)) / std::sqrt(rv.data(0) + 1e-5), 1e-12);
}

TEST(Ops, ShapeErrors) {
  Graph g;
  const Var a = g.constant(Tensor({2, 3}));
  const Var b = g.constant(Tensor({3, 2}));
  EXPECT_THROW(add(a, b), Error);
  EXPECT_THROW(mse(a, b), Error);
  EXPECT_THROW(reshape(a, {4}), Error);
}

TEST(Adam, MatchesReferenceUpdate) {
  ParameterStore s;
  Parameter& p = s.create("p", {3}, 0.0);
  p.value.data << 1.0, -2.0, 0.5;
  AdamOptions opt;
  opt.learning_rate = 0.01;
  Adam adam({&p}, opt);
  Eigen::Vector3d theta = p.value.data, m = Eigen::Vector3d::Zero(), v = Eigen::Vector3d::Zero();
  for (int t = 1; t <= 5; ++t) {
    const Eigen::Vector3d grad = 2.0 * theta + Eigen::Vector3d(0.1, -0.3, 0.2) * t;
    adam.zero_grad();
    p.grad = Tensor({3}, Eigen::VectorXd(grad));
    adam.step();
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad.cwiseProduct(grad);
    const Eigen::Vector3d mh = m / (1 - std::pow(0.9, t));
    const Eigen::Vector3d vh = v / (1 - std::pow(0.999, t));
    theta -= (0.01 * mh.array() / (vh.array().sqrt() + 1e-8)).matrix();
    EXPECT_LT((p.value.data - theta).cwiseAbs().maxCoeff(), 1e-14) << t;
  }
  EXPECT_EQ(adam.steps(), 5);
}

namespace {

augment::ViewPair random_pair(Index frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  augment::ViewPair p;
  p.view_a.values.resize(64, frames);
  p.view_b.values.resize(64, frames);
  for (Index i = 0; i < p.view_a.values.size(); ++i) {
    p.view_a.values.data()[i] = n(rng);
    p.view_b.values.data()[i] = n(rng);
  }
  return p;
}

class EncoderGradients : public ::testing::TestWithParam<encoders::Arch> {};

}  // namespace

// End to end: encoder, projector and predictor under the hybrid loss.
TEST_P(EncoderGradients, HybridLossMatchesFiniteDifferences) {
  encoders::EncoderConfig ec;
  ec.arch = GetParam();
  ec.width_multiplier = 0.125;
  ec.seed = 21;
  train::TrainConfig tc;
  tc.hybrid = true;
  tc.weights = {0.5, 1.0};
  tc.seed = 21;
  const Index d_sup = 12;
  train::TrainerState state(ec, train::HeadConfig::for_width(0.125, d_sup), tc);
  std::vector<augment::ViewPair> pairs;
  for (std::uint64_t i = 0; i < 4; ++i) pairs.push_back(random_pair(32, i + 1));
  const Eigen::MatrixXd feats = Eigen::MatrixXd::Random(4, d_sup);

  std::vector<Parameter*> params;
  const auto stores = state.online_stores();
  for (std::size_t i = 0; i < 3; ++i) {
    for (auto* p : stores[i]->trainable()) params.push_back(p);
  }
  // Batch norm over a handful of examples is sharply curved at random init, so the step stays
  // small; gradients under 1e-6 are then at the rounding noise of the difference quotient.
  const auto r = check_gradients(
      params, [&](Graph& g) { return train::build_loss(g, state, pairs, &feats, 77).loss; }, 200, 31, 1e-5, 4000,
      1e-6);
  EXPECT_GE(r.checked, 200) << "skipped " << r.skipped;
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_analytic << " vs " << r.worst_numeric;
  RecordProperty("max_rel_error", std::to_string(r.max_rel_error));
}

INSTANTIATE_TEST_SUITE_P(AllArchitectures, EncoderGradients,
                         ::testing::Values(encoders::Arch::kDefaultCnn, encoders::Arch::kResnetish34,
                                           encoders::Arch::kClstm, encoders::Arch::kCvtLite),
                         [](const auto& info) { return encoders::arch_name(info.param); });
