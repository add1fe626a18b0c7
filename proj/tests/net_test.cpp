#include "rf/net.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "testutil.hpp"

using namespace rf;
using rftest::close_rel;

namespace {

Batch random_batch(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Batch x(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) x(i, j) = u(rng);
  return x;
}

double scalar_loss(const Mlp& net, const Batch& x, const Batch& upstream) {
  return (mlp_forward(net, x).cwiseProduct(upstream)).sum();
}

// Checks every parameter and input coordinate against central differences.
void gradient_check(Mlp net, const Batch& x, std::mt19937_64& rng, double tol = 1e-4) {
  const Batch y = mlp_forward(net, x);
  const Batch upstream = random_batch(static_cast<int>(y.rows()), static_cast<int>(y.cols()), rng);
  Tape tape;
  mlp_forward(net, x, &tape);
  const BackwardResult back = mlp_backward(net, tape, upstream);

  const double h = 1e-6;
  for (size_t li = 0; li < net.layers.size(); ++li) {
    auto& w = net.layers[li].w;
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) {
        const double save = w(i, j);
        w(i, j) = save + h;
        const double lp = scalar_loss(net, x, upstream);
        w(i, j) = save - h;
        const double lm = scalar_loss(net, x, upstream);
        w(i, j) = save;
        EXPECT_TRUE(close_rel(back.params.w[li](i, j), (lp - lm) / (2 * h), tol))
            << "w[" << li << "](" << i << "," << j << ")";
      }
    auto& b = net.layers[li].b;
    for (int i = 0; i < b.size(); ++i) {
      const double save = b(i);
      b(i) = save + h;
      const double lp = scalar_loss(net, x, upstream);
      b(i) = save - h;
      const double lm = scalar_loss(net, x, upstream);
      b(i) = save;
      EXPECT_TRUE(close_rel(back.params.b[li](i), (lp - lm) / (2 * h), tol))
          << "b[" << li << "](" << i << ")";
    }
  }
  Batch xv = x;
  for (int i = 0; i < xv.rows(); ++i)
    for (int j = 0; j < xv.cols(); ++j) {
      const double save = xv(i, j);
      xv(i, j) = save + h;
      const double lp = scalar_loss(net, xv, upstream);
      xv(i, j) = save - h;
      const double lm = scalar_loss(net, xv, upstream);
      xv(i, j) = save;
      EXPECT_TRUE(close_rel(back.inputs(i, j), (lp - lm) / (2 * h), tol))
          << "x(" << i << "," << j << ")";
    }
}

}  // namespace

TEST(Net, ForwardIdentityLayer) {
  Mlp net;
  Layer l;
  l.w = Eigen::MatrixXd::Identity(3, 3);
  l.b = Eigen::VectorXd::Zero(3);
  l.act = Act::linear;
  net.layers.push_back(l);

  std::mt19937_64 rng(1);
  const Batch x = random_batch(5, 3, rng);
  EXPECT_TRUE(mlp_forward(net, x).isApprox(x));
}

TEST(Net, ForwardZeroWeightHeads) {
  std::mt19937_64 rng(2);
  const Batch x = random_batch(4, 2, rng);

  Mlp sig;
  Layer l;
  l.w = Eigen::MatrixXd::Zero(1, 2);
  l.b = Eigen::VectorXd::Zero(1);
  l.act = Act::scaled_sigmoid;
  l.act_param = 2.0;
  sig.layers.push_back(l);
  const Batch ys = mlp_forward(sig, x);
  for (int i = 0; i < ys.rows(); ++i) EXPECT_DOUBLE_EQ(ys(i, 0), 1.0);

  Mlp th = sig;
  th.layers[0].act = Act::tanh_fn;
  const Batch yt = mlp_forward(th, x);
  for (int i = 0; i < yt.rows(); ++i) EXPECT_DOUBLE_EQ(yt(i, 0), 0.0);
}

TEST(Net, ForwardDeterminism) {
  std::mt19937_64 rng(3);
  const Mlp net = make_mlp(2, {64, 64}, 1, Act::scaled_sigmoid, 2.0, rng);
  const Batch x = random_batch(16, 2, rng);
  const Batch a = mlp_forward(net, x);
  const Batch b = mlp_forward(net, x);
  EXPECT_EQ(a, b);  // bit identical
}

TEST(Net, ShapeErrors) {
  std::mt19937_64 rng(4);
  const Mlp net = make_mlp(3, {4}, 2, Act::linear, 0.0, rng);
  const Batch bad = random_batch(5, 2, rng);
  EXPECT_THROW(mlp_forward(net, bad), std::invalid_argument);

  const Batch good = random_batch(5, 3, rng);
  Tape tape;
  mlp_forward(net, good, &tape);
  EXPECT_THROW(mlp_backward(net, tape, random_batch(5, 3, rng)), std::invalid_argument);
}

TEST(Net, BackwardLinearLayerClosedForm) {
  std::mt19937_64 rng(5);
  Mlp net;
  Layer l;
  l.w = random_batch(3, 2, rng);
  l.b = Eigen::VectorXd::Random(3);
  l.act = Act::linear;
  net.layers.push_back(l);

  const Batch x = random_batch(7, 2, rng);
  const Batch u = random_batch(7, 3, rng);
  Tape tape;
  mlp_forward(net, x, &tape);
  const auto back = mlp_backward(net, tape, u);

  EXPECT_TRUE(back.params.w[0].isApprox(u.transpose() * x, 1e-12));
  EXPECT_TRUE(back.params.b[0].isApprox(u.colwise().sum().transpose(), 1e-12));
  EXPECT_TRUE(back.inputs.isApprox(u * l.w, 1e-12));
}

TEST(Net, BackwardZeroUpstream) {
  std::mt19937_64 rng(6);
  const Mlp net = make_mlp(2, {8}, 3, Act::tanh_fn, 0.0, rng);
  const Batch x = random_batch(4, 2, rng);
  Tape tape;
  mlp_forward(net, x, &tape);
  const auto back = mlp_backward(net, tape, Batch::Zero(4, 3));
  EXPECT_DOUBLE_EQ(back.params.squared_norm(), 0.0);
  EXPECT_DOUBLE_EQ(back.inputs.squaredNorm(), 0.0);
}

TEST(Net, GradientCheckTwoLayer) {
  std::mt19937_64 rng(7);
  Mlp net = make_mlp(3, {5}, 2, Act::linear, 0.0, rng);
  gradient_check(net, random_batch(6, 3, rng), rng);
}

TEST(Net, GradientCheckAllActivations) {
  std::mt19937_64 rng(8);
  const std::pair<Act, double> heads[] = {
      {Act::linear, 0.0},         {Act::sigmoid, 0.0},  {Act::scaled_sigmoid, 2.0},
      {Act::scaled_sigmoid, 5.0}, {Act::tanh_fn, 0.0},  {Act::leaky_relu, 0.2},
  };
  for (auto [act, p] : heads) {
    Mlp net = make_mlp(2, {6, 6}, 2, act, p, rng);
    // keep relu kinks away from the probe points
    gradient_check(net, random_batch(4, 2, rng), rng, 2e-4);
  }
}

TEST(Net, GradientCheckTrainingShapes) {
  std::mt19937_64 rng(9);
  Mlp ratio = make_mlp(2, {64, 64}, 1, Act::scaled_sigmoid, 2.0, rng);
  gradient_check(ratio, random_batch(3, 2, rng), rng);
}

TEST(Net, ScaledSigmoidRange) {
  std::mt19937_64 rng(10);
  for (double c : {2.0, 5.0}) {
    const Mlp net = make_mlp(2, {32, 32}, 1, Act::scaled_sigmoid, c, rng);
    const Batch x = random_batch(256, 2, rng, 5.0);
    const Batch y = mlp_forward(net, x);
    for (int i = 0; i < y.rows(); ++i) {
      EXPECT_GT(y(i, 0), 0.0);
      EXPECT_LT(y(i, 0), c);
    }
  }
}

TEST(Net, AdamZeroGradientLeavesParamsUnchanged) {
  std::mt19937_64 rng(11);
  Mlp net = make_mlp(2, {4}, 1, Act::linear, 0.0, rng);
  const Mlp before = net;
  Adam state = Adam::like(net, 1e-3);
  adam_step(state, net, MlpGrads::zeros_like(net));
  for (size_t i = 0; i < net.layers.size(); ++i) {
    EXPECT_EQ(net.layers[i].w, before.layers[i].w);
    EXPECT_EQ(net.layers[i].b, before.layers[i].b);
  }
  EXPECT_EQ(state.t, 1);
}

TEST(Net, AdamFirstStepMagnitude) {
  // With bias correction, the first step is lr * g / (|g| + eps') with
  // magnitude ~ lr regardless of gradient scale.
  std::mt19937_64 rng(12);
  Mlp net = make_mlp(2, {3}, 1, Act::linear, 0.0, rng);
  const Mlp before = net;
  Adam state = Adam::like(net, 1e-3);

  MlpGrads g = MlpGrads::zeros_like(net);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  for (auto& m : g.w) m = m.unaryExpr([&](double) { return u(rng); });
  for (auto& v : g.b) v = v.unaryExpr([&](double) { return u(rng); });

  adam_step(state, net, g);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const Eigen::MatrixXd dw = before.layers[i].w - net.layers[i].w;
    for (int r = 0; r < dw.rows(); ++r)
      for (int c = 0; c < dw.cols(); ++c) {
        const double expected = 1e-3 * g.w[i](r, c) / (std::abs(g.w[i](r, c)) + state.eps);
        EXPECT_NEAR(dw(r, c), expected, 1e-9);
      }
  }
}

TEST(Net, AdamDeterminism) {
  auto run = [] {
    std::mt19937_64 rng(13);
    Mlp net = make_mlp(2, {8}, 1, Act::sigmoid, 0.0, rng);
    Adam state = Adam::like(net, 1e-2);
    Batch x = random_batch(8, 2, rng);
    for (int step = 0; step < 5; ++step) {
      Tape tape;
      Batch y = mlp_forward(net, x, &tape);
      auto back = mlp_backward(net, tape, Batch::Ones(8, 1));
      adam_step(state, net, back.params);
    }
    return net;
  };
  const Mlp a = run();
  const Mlp b = run();
  for (size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].w, b.layers[i].w);
    EXPECT_EQ(a.layers[i].b, b.layers[i].b);
  }
}
