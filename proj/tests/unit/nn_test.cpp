#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "loopflow/nn/adam.hpp"
#include "loopflow/nn/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace loopflow;
using namespace loopflow::testsupport;

namespace {

// Direct nested-loop convolution: x row [Cin][H][W], W row co over [Cin][kh][kw].
Mat naive_conv(const Mat& x, const Mat& w, const Mat& b, const nn::ConvShape& cs) {
  const int ho = cs.out_height(), wo = cs.out_width();
  Mat y = Mat::Zero(x.rows(), static_cast<Index>(cs.out_channels) * ho * wo);
  for (Index s = 0; s < x.rows(); ++s) {
    for (int co = 0; co < cs.out_channels; ++co) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b(0, co);
          for (int ci = 0; ci < cs.in_channels; ++ci) {
            for (int ky = 0; ky < cs.kernel_h; ++ky) {
              for (int kx = 0; kx < cs.kernel_w; ++kx) {
                const int iy = oy * cs.stride + ky - cs.pad_h, ix = ox * cs.stride + kx - cs.pad_w;
                if (iy < 0 || iy >= cs.height || ix < 0 || ix >= cs.width) continue;
                acc += w(co, (ci * cs.kernel_h + ky) * cs.kernel_w + kx) * x(s, (ci * cs.height + iy) * cs.width + ix);
              }
            }
          }
          y(s, (co * ho + oy) * wo + ox) = acc;
        }
      }
    }
  }
  return y;
}

}  // namespace

TEST(Ops, ReverseModeMatchesFiniteDifferences) {
  for (const auto& op : op_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      const auto r = op.run(rng);
      EXPECT_LT(r.worst, 1e-4) << op.name << " seed " << seed << " at " << r.where;
      EXPECT_GT(r.entries, 0u) << op.name;
    }
  }
}

TEST(Ops, CheckerCatchesADetachedPath) {
  // The middle of the chain is re-entered as a constant, so the reverse pass
  // never reaches the input while the loss still depends on it.
  std::mt19937_64 rng(4);
  std::vector<Mat> in{random_mat(rng, 2, 3)};
  const auto r = check_gradients(in, {}, [](Graph& g, const std::vector<Graph::Var>& v) {
    const auto cut = g.constant(g.value(g.tanh(v[0])));
    return g.add(g.sum(g.mul(cut, cut)), g.sum(g.mul(v[0], g.constant(Mat::Zero(2, 3)))));
  });
  EXPECT_GT(r.worst, 0.5);
}

TEST(Ops, DenseForwardHandValue) {
  Graph g(false);
  Mat x(1, 2), w(2, 2), b(1, 2);
  x << 1, 2;
  w << 1, 2, 3, 4;
  b << 0.5, -1;
  const Mat& y = g.value(g.dense(g.constant(x), g.constant(w), g.constant(b)));
  EXPECT_DOUBLE_EQ(y(0, 0), 5.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 10.0);
  EXPECT_THROW(g.dense(g.constant(x), g.constant(Mat::Zero(2, 3)), g.constant(b)), UsageError);
}

TEST(Ops, ConvolutionHandValueAndOracle) {
  nn::ConvShape cs;
  cs.height = 3;
  cs.width = 3;
  cs.kernel_h = 2;
  cs.kernel_w = 2;
  Mat x(1, 9);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Graph g(false);
  const Mat& y = g.value(g.conv2d(g.constant(x), g.constant(Mat::Ones(1, 4)), g.constant(Mat::Constant(1, 1, 0.5)), cs));
  ASSERT_EQ(y.cols(), 4);
  EXPECT_DOUBLE_EQ(y(0, 0), 12.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 16.5);
  EXPECT_DOUBLE_EQ(y(0, 2), 24.5);
  EXPECT_DOUBLE_EQ(y(0, 3), 28.5);

  std::mt19937_64 rng(8);
  for (int k = 0; k < 200; ++k) {
    nn::ConvShape s;
    s.in_channels = uniform_int(rng, 1, 3);
    s.out_channels = uniform_int(rng, 1, 3);
    s.height = uniform_int(rng, 1, 6);
    s.width = uniform_int(rng, 1, 6);
    s.pad_h = uniform_int(rng, 0, 2);
    s.pad_w = uniform_int(rng, 0, 2);
    s.kernel_h = uniform_int(rng, 1, s.height + 2 * s.pad_h);
    s.kernel_w = uniform_int(rng, 1, s.width + 2 * s.pad_w);
    s.stride = uniform_int(rng, 1, 2);
    const Mat xi = random_mat(rng, uniform_int(rng, 1, 3), s.in_channels * s.height * s.width);
    const Mat wi = random_mat(rng, s.out_channels, s.patch());
    const Mat bi = random_mat(rng, 1, s.out_channels);
    Graph gi(false);
    const Mat& got = gi.value(gi.conv2d(gi.constant(xi), gi.constant(wi), gi.constant(bi), s));
    EXPECT_LT((got - naive_conv(xi, wi, bi, s)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ops, LstmCellHandValue) {
  Graph g(false);
  const auto gates = g.lstm_gates(g.constant(Mat::Zero(1, 4)));  // i = f = o = 0.5, g = 0
  const auto c = g.lstm_state(gates, g.constant(Mat::Constant(1, 1, 2.0)));
  const auto h = g.lstm_output(gates, c);
  EXPECT_DOUBLE_EQ(g.value(c)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.value(h)(0, 0), 0.5 * std::tanh(1.0));
}

TEST(Ops, MseIsTheMeanOverAllEntries) {
  Graph g(false);
  Mat p(1, 2), t(1, 2);
  p << 1, 2;
  t << 1, 4;
  EXPECT_DOUBLE_EQ(g.value(g.mse(g.constant(p), t))(0, 0), 2.0);
}

TEST(Adam, FirstStepMovesByTheLearningRate) {
  Parameter p("w", 1, 3, true);
  p.value << 1.0, -2.0, 0.5;
  nn::AdamConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.l2_weight = 0.0;
  nn::Adam opt({&p}, cfg);
  p.grad << 3.0, -0.001, 250.0;
  opt.step();
  EXPECT_NEAR(p.value(0, 0), 0.99, 1e-9);
  EXPECT_NEAR(p.value(0, 1), -1.99, 1e-6);
  EXPECT_NEAR(p.value(0, 2), 0.49, 1e-9);
}

TEST(Adam, MatchesScalarRecurrence) {
  Parameter p("w", 1, 1, true);
  p.value(0, 0) = 0.3;
  nn::AdamConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.l2_weight = 0.1;
  nn::Adam opt({&p}, cfg);
  double w = 0.3, m = 0.0, v = 0.0;
  const double grads[] = {1.0, -0.5, 2.0, 0.25, -3.0};
  for (int t = 1; t <= 5; ++t) {
    p.grad(0, 0) = grads[t - 1];
    opt.step();
    const double gr = grads[t - 1] + 0.1 * w;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    w -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), w, 1e-12) << "step " << t;
  }
}

TEST(Adam, BiasesAreNotDecayed) {
  Parameter b("b", 1, 1, false);
  b.value(0, 0) = 5.0;
  nn::AdamConfig cfg;
  cfg.l2_weight = 1.0;
  nn::Adam opt({&b}, cfg);
  b.zero_grad();
  opt.step();
  EXPECT_DOUBLE_EQ(b.value(0, 0), 5.0);
}

TEST(EarlyStopping, EqualLossIsAMiss) {
  nn::EarlyStopping s(2);
  EXPECT_FALSE(s.observe(3.0));
  EXPECT_FALSE(s.observe(3.0));
  EXPECT_TRUE(s.observe(3.0));
  EXPECT_EQ(s.best_epoch(), 1);
  EXPECT_THROW(nn::EarlyStopping(0), UsageError);
}

TEST(Fit, StopsAfterPatienceAndRestoresTheBestEpoch) {
  Parameter marker("m", 1, 1, true);
  const std::vector<double> losses{5.0, 4.0, 4.5, 4.6, 4.7, 1.0};
  nn::TrainConfig cfg;
  cfg.patience = 3;
  auto h = nn::fit({&marker}, cfg, [&](int e) {
    marker.value(0, 0) = e;
    return 1.0;
  }, [&](int e) { return losses[static_cast<std::size_t>(e - 1)]; });
  EXPECT_TRUE(h.early_stopped);
  EXPECT_EQ(h.epochs.size(), 5u);
  EXPECT_EQ(h.best_epoch, 2);
  EXPECT_DOUBLE_EQ(h.best_val_loss(), 4.0);
  EXPECT_DOUBLE_EQ(marker.value(0, 0), 2.0);
}

TEST(Fit, RunsToMaxEpochsWhileImproving) {
  Parameter marker("m", 1, 1, true);
  nn::TrainConfig cfg;
  cfg.max_epochs = 4;
  auto h = nn::fit({&marker}, cfg, [&](int e) {
    marker.value(0, 0) = e;
    return 1.0;
  }, [](int e) { return 10.0 - e; });
  EXPECT_FALSE(h.early_stopped);
  EXPECT_EQ(h.best_epoch, 4);
  EXPECT_DOUBLE_EQ(marker.value(0, 0), 4.0);
}

TEST(Fit, NonFiniteLossIsADivergence) {
  Parameter marker("m", 1, 1, true);
  nn::TrainConfig cfg;
  try {
    nn::fit({&marker}, cfg, [](int e) { return e == 3 ? std::nan("") : 1.0; }, [](int) { return 1.0; });
    FAIL() << "expected divergence";
  } catch (const nn::DivergenceError& e) {
    EXPECT_EQ(e.history.epochs.size(), 2u);
  }
  EXPECT_THROW(nn::fit({&marker}, cfg, [](int) { return 1.0; }, [](int) { return INFINITY; }), TrainingError);
}

TEST(Fit, ConfigIsValidated) {
  nn::TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.learning_rate = -1;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.patience = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
}
