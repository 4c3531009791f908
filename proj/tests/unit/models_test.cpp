#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "loopflow/models/arima.hpp"
#include "loopflow/models/checkpoint.hpp"
#include "loopflow/models/predictor.hpp"
#include "support/gradcheck.hpp"

using namespace loopflow;
using namespace loopflow::testsupport;

namespace {

const Date kMonday{std::chrono::year{2017} / 2 / 6};

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Scalar-loop LSTM over a step-major batch, written without the graph.
Mat lstm_oracle(Network& net, const Mat& seq, Index B) {
  const Mat& Wx = net.parameter("lstm.input_weight").value;
  const Mat& Wh = net.parameter("lstm.hidden_weight").value;
  const Mat& bl = net.parameter("lstm.bias").value;
  const Mat& Wo = net.parameter("out.weight").value;
  const Mat& bo = net.parameter("out.bias").value;
  const Index H = Wh.cols(), R = seq.rows() / B;
  Mat out(B, Wo.rows());
  for (Index b = 0; b < B; ++b) {
    std::vector<double> h(static_cast<std::size_t>(H), 0.0), c(static_cast<std::size_t>(H), 0.0);
    for (Index r = 0; r < R; ++r) {
      std::vector<double> z(static_cast<std::size_t>(4 * H));
      for (Index k = 0; k < 4 * H; ++k) {
        double acc = bl(0, k);
        for (Index j = 0; j < seq.cols(); ++j) acc += Wx(k, j) * seq(r * B + b, j);
        for (Index j = 0; j < H; ++j) acc += Wh(k, j) * h[static_cast<std::size_t>(j)];
        z[static_cast<std::size_t>(k)] = acc;
      }
      for (Index j = 0; j < H; ++j) {
        const auto u = static_cast<std::size_t>(j), uh = static_cast<std::size_t>(H);
        const double i = sigmoid(z[u]), f = sigmoid(z[uh + u]), g = std::tanh(z[2 * uh + u]), o = sigmoid(z[3 * uh + u]);
        c[u] = f * c[u] + i * g;
        h[u] = o * std::tanh(c[u]);
      }
    }
    for (Index n = 0; n < Wo.rows(); ++n) {
      double acc = bo(0, n);
      for (Index j = 0; j < H; ++j) acc += Wo(n, j) * h[static_cast<std::size_t>(j)];
      out(b, n) = acc;
    }
  }
  return out;
}

Mat run(Network& net, const Mat& x, Index B) {
  Graph g(false);
  return g.value(net.forward(g, g.constant(x), B));
}

}  // namespace

TEST(Networks, GradientsMatchFiniteDifferences) {
  for (auto kind : {ModelKind::bpnn, ModelKind::sep_bpnn, ModelKind::cnn, ModelKind::lstm, ModelKind::cnn_lstm}) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const auto r = check_network(kind, 300 + seed);
      EXPECT_LT(r.worst, 1e-4) << to_string(kind) << " seed " << seed << " at " << r.where;
    }
  }
}

TEST(Networks, BpnnForwardMatchesDirectAlgebra) {
  auto spec = default_spec(ModelKind::bpnn, 3, 1, 2, FeatureSet::parse("fs"));
  spec.bpnn_hidden = 5;
  auto net = build_network(spec, 7);
  std::mt19937_64 rng(1);
  const Mat x = random_mat(rng, 4, 12);
  const Mat hidden =
      ((x * net->parameter("hidden.weight").value.transpose()).rowwise() + net->parameter("hidden.bias").value.row(0)).cwiseMax(0.0);
  const Mat want = (hidden * net->parameter("out.weight").value.transpose()).rowwise() + net->parameter("out.bias").value.row(0);
  EXPECT_LT((run(*net, x, 4) - want).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(net->parameter_count(), 12u * 5 + 5 + 5 * 2 + 2);
}

TEST(Networks, LstmForwardMatchesScalarOracle) {
  auto spec = default_spec(ModelKind::lstm, 4, 1, 3, FeatureSet::parse("fo"));
  spec.lstm_hidden = 3;
  auto net = build_network(spec, 11);
  std::mt19937_64 rng(2);
  const Mat seq = random_mat(rng, 4 * 2, 6);
  EXPECT_LT((run(*net, seq, 2) - lstm_oracle(*net, seq, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Networks, SeparateNetsIgnoreOtherStations) {
  auto spec = default_spec(ModelKind::sep_bpnn, 3, 1, 3, FeatureSet::parse("fs"));
  auto net = build_network(spec, 5);
  std::mt19937_64 rng(3);
  Mat x = random_mat(rng, 1, 2 * 3 * 3);
  const Mat before = run(*net, x, 1);
  // image layout [F][R][N]: perturb station 2 only
  for (int f = 0; f < 2; ++f) {
    for (int r = 0; r < 3; ++r) x(0, (f * 3 + r) * 3 + 2) += 1.0;
  }
  const Mat after = run(*net, x, 1);
  EXPECT_DOUBLE_EQ(after(0, 0), before(0, 0));
  EXPECT_DOUBLE_EQ(after(0, 1), before(0, 1));
  EXPECT_NE(after(0, 2), before(0, 2));
}

TEST(Networks, IdentityKernelReducesHybridToPlainLstm) {
  for (int k : {1, 3, 5}) {
    auto hs = default_spec(ModelKind::cnn_lstm, 5, 1, 4, FeatureSet::parse("fso"));
    hs.lstm_hidden = 6;
    hs.hybrid_kernel = k;
    auto hybrid = build_network(hs, 21);
    static_cast<CnnLstm&>(*hybrid).set_identity_kernel();
    auto ls = hs;
    ls.kind = ModelKind::lstm;
    auto plain = build_network(ls, 99);
    for (auto* p : plain->parameters()) p->value = hybrid->parameter(p->name).value;
    std::mt19937_64 rng(static_cast<std::uint64_t>(k));
    const Mat seq = random_mat(rng, 5 * 3, 12);
    const Mat a = run(*hybrid, seq, 3), b = run(*plain, seq, 3);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0) << "k=" << k;
  }
}

TEST(Networks, SeededInitialisationIsReproducible) {
  const auto spec = default_spec(ModelKind::cnn, 6, 1, 5);
  auto a = build_network(spec, 3), b = build_network(spec, 3), c = build_network(spec, 4);
  EXPECT_EQ(a->parameter("out.weight").value, b->parameter("out.weight").value);
  EXPECT_NE(a->parameter("out.weight").value, c->parameter("out.weight").value);
  EXPECT_EQ(a->layout(), Layout::image);
  EXPECT_EQ(build_network(default_spec(ModelKind::lstm, 2, 1, 2), 1)->layout(), Layout::sequence);
}

TEST(ModelSpec, ValidationAndJson) {
  auto s = default_spec(ModelKind::cnn, 2, 1, 2);
  s.cnn_kernel = 5;
  s.cnn_pad = 0;
  EXPECT_THROW(s.validate(), UsageError);
  s = default_spec(ModelKind::cnn_lstm, 3, 1, 3);
  s.hybrid_kernel = 2;
  EXPECT_THROW(s.validate(), UsageError);
  s = default_spec(ModelKind::arima, 3, 1, 1);
  s.arima_q = 1;
  EXPECT_THROW(s.validate(), UsageError);
  EXPECT_THROW(build_network(default_spec(ModelKind::dpp, 3, 1, 1), 1), UsageError);

  auto t = default_spec(ModelKind::lstm, 7, 3, 4, FeatureSet::parse("fo"));
  t.lstm_hidden = 9;
  const auto back = model_spec_from_json(to_json(t));
  EXPECT_EQ(back.kind, t.kind);
  EXPECT_EQ(back.R, 7);
  EXPECT_EQ(back.P, 3);
  EXPECT_EQ(back.features, t.features);
  EXPECT_EQ(back.lstm_hidden, 9);
  EXPECT_FALSE(parse_model_kind("transformer"));
}

TEST(Checkpoint, RoundTripKeepsParametersExactly) {
  TrainedModel m;
  m.spec = default_spec(ModelKind::cnn_lstm, 3, 2, 3, FeatureSet::parse("fs"));
  m.spec.lstm_hidden = 4;
  m.stations = {"1A", "2A", "3A"};
  m.network = build_network(m.spec, 12);
  m.normalization = Normalization::identity(3, 2);
  m.normalization.in_mean[1] = 1.0 / 3.0;
  m.history.epochs = {{1, 0.5, 0.4}, {2, 0.3, 0.35}};
  m.history.best_epoch = 2;
  m.profile_ranges = {{kMonday, kMonday + std::chrono::days{6}}};
  m.seed = 12;
  const auto back = model_from_json(nlohmann::json::parse(checkpoint_json(m).dump()));
  ASSERT_TRUE(back.network);
  for (auto* p : m.network->parameters()) EXPECT_EQ(back.network->parameter(p->name).value, p->value) << p->name;
  EXPECT_EQ(back.normalization.in_mean, m.normalization.in_mean);
  EXPECT_EQ(back.history.best_epoch, 2);
  EXPECT_EQ(back.history.epochs.size(), 2u);
  EXPECT_EQ(back.profile_ranges.front().last, m.profile_ranges.front().last);
  EXPECT_EQ(back.stations, m.stations);
  std::mt19937_64 rng(6);
  const Mat seq = random_mat(rng, 3 * 2, 6);
  const Mat a = run(*m.network, seq, 2), b = run(*back.network, seq, 2);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
}

TEST(Checkpoint, RejectsForeignAndMismatchedDocuments) {
  EXPECT_THROW(model_from_json(nlohmann::json{{"format", "other"}}), DataError);
  TrainedModel m;
  m.spec = default_spec(ModelKind::bpnn, 2, 1, 2);
  m.spec.bpnn_hidden = 3;
  m.stations = {"1A", "2A"};
  m.network = build_network(m.spec, 1);
  m.normalization = Normalization::identity(2, 1);
  auto j = checkpoint_json(m);
  j["parameters"][0]["rows"] = 99;
  EXPECT_THROW(model_from_json(j), DataError);
  j = checkpoint_json(m);
  j["version"] = 42;
  EXPECT_THROW(model_from_json(j), DataError);
}

TEST(Dpp, PredictsTheProfileMeanOfTheTargetSlot) {
  SeriesStore s(TimeGrid(kMonday, 14), {"1A"});
  for (std::int64_t t = 0; t < s.time_count(); ++t) {
    const double v = static_cast<double>(s.grid().slot_of_day(t)) + (t >= 7 * 480 ? 10.0 : 0.0);
    for (Feature f : kAllFeatures) s.set_observed(0, f, t, v);
  }
  DppPredictor dpp(build_profiles(s, DateRange{kMonday, kMonday + std::chrono::days{13}}));
  const auto ws = build_windows(make_frame(s, FeatureSet::parse("f")), 4, 3, DateRange{kMonday, kMonday});
  const auto y = dpp.predict_all(ws);
  for (std::size_t i = 0; i < ws.size(); i += 37) {
    const auto slot = s.grid().slot_of_day(ws.target_index(i));
    EXPECT_DOUBLE_EQ(y(static_cast<Index>(i), 0), slot + 5.0);
  }
}

TEST(Arima, ForecastRecurrenceHandTrace) {
  ArimaModel m;
  m.p = 1;
  m.d = 1;
  m.phi = {0.5};
  m.mean = 1.0;
  m.tail = {10.0, 12.0};
  const auto f = arima_forecast(m, 2);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_DOUBLE_EQ(f[0], 13.5);   // next difference 1 + 0.5 * (2 - 1)
  EXPECT_DOUBLE_EQ(f[1], 14.75);  // then 1 + 0.5 * 0.5
}

TEST(Arima, LinearRampIsContinuedExactly) {
  std::vector<double> ramp;
  for (int t = 0; t < 60; ++t) ramp.push_back(40.0 + 2.5 * t);
  const auto m = arima_fit(ramp, 2, 1, 0, 100);
  const auto f = arima_forecast(m, 5);
  for (int h = 0; h < 5; ++h) EXPECT_DOUBLE_EQ(f[static_cast<std::size_t>(h)], 40.0 + 2.5 * (60 + h));
}

TEST(Arima, RecoversAutoregressiveCoefficients) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> e(0.0, 1.0);
  std::vector<double> x{0.0, 0.0};
  for (int t = 0; t < 5000; ++t) x.push_back(0.6 * x[x.size() - 1] - 0.3 * x[x.size() - 2] + e(rng));
  const auto m = arima_fit(x, 2, 0, 0, 5000);
  EXPECT_NEAR(m.phi[0], 0.6, 0.05);
  EXPECT_NEAR(m.phi[1], -0.3, 0.05);
}

TEST(Arima, InvalidInputs) {
  const std::vector<double> short_series(10, 1.0);
  EXPECT_THROW(arima_fit(short_series, 2, 1), DataError);
  std::vector<double> x(50, 1.0);
  EXPECT_THROW(arima_fit(x, 2, 1, 1), UsageError);
  x[20] = std::nan("");
  EXPECT_THROW(arima_fit(x, 2, 1), DataError);
  EXPECT_THROW(arima_forecast(ArimaModel{}, 0), UsageError);
}

TEST(Arima, LineSearchPrefersTheSmallestExactOrder) {
  std::vector<double> quad;
  for (int t = 0; t < 80; ++t) quad.push_back(static_cast<double>(t * t));
  const auto best = arima_line_search(quad, 10, 3, 3);
  EXPECT_EQ(best.p, 1);
  EXPECT_EQ(best.d, 2);
  EXPECT_NEAR(best.rmse, 0.0, 1e-9);
}
