#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "loopflow/features.hpp"
#include "loopflow/models/spec.hpp"
#include "loopflow/nn/adam.hpp"
#include "loopflow/nn/graph.hpp"
#include "loopflow/nn/trainer.hpp"

namespace loopflow {

using nn::Graph;
using nn::Index;
using nn::Mat;
using nn::Parameter;

/// A trainable predictor of the N flows at t+P, in normalised units.
class Network {
 public:
  explicit Network(ModelSpec spec) : spec_{std::move(spec)} { spec_.validate(); }
  virtual ~Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const ModelSpec& spec() const { return spec_; }
  virtual Layout layout() const = 0;

  /// `input` holds `batch` samples in layout(); returns a [batch x N] node.
  virtual Graph::Var forward(Graph& g, Graph::Var input, Index batch) = 0;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter& parameter(const std::string& name) {
    for (auto& p : params_) {
      if (p->name == name) return *p;
    }
    throw UsageError("no parameter named '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  /// Seeded uniform(+-sqrt(1/fan_in)) initialisation of every parameter.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < params_.size(); ++k) params_[k]->init_uniform(rng, fan_in_[k]);
  }

 protected:
  Parameter& add(const std::string& name, Index rows, Index cols, bool weight, double fan_in) {
    params_.push_back(std::make_unique<Parameter>(name, rows, cols, weight));
    fan_in_.push_back(fan_in);
    return *params_.back();
  }

  ModelSpec spec_;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<double> fan_in_;
};

/// flatten(R*N*F) -> dense(hidden) -> ReLU -> dense(N).
class Bpnn final : public Network {
 public:
  explicit Bpnn(ModelSpec s) : Network(std::move(s)) {
    const auto in = static_cast<Index>(spec_.R * spec_.N * spec_.features.size());
    const Index h = spec_.bpnn_hidden, n = static_cast<Index>(spec_.N);
    w1_ = &add("hidden.weight", h, in, true, static_cast<double>(in));
    b1_ = &add("hidden.bias", 1, h, false, static_cast<double>(in));
    w2_ = &add("out.weight", n, h, true, static_cast<double>(h));
    b2_ = &add("out.bias", 1, n, false, static_cast<double>(h));
  }
  Layout layout() const override { return Layout::image; }
  Graph::Var forward(Graph& g, Graph::Var x, Index) override {
    auto hdn = g.relu(g.dense(g.flatten(x), g.param(*w1_), g.param(*b1_)));
    return g.dense(hdn, g.param(*w2_), g.param(*b2_));
  }

 private:
  Parameter *w1_, *b1_, *w2_, *b2_;
};

/// N independent nets, each seeing only its own station's history.
class SepBpnn final : public Network {
 public:
  explicit SepBpnn(ModelSpec s) : Network(std::move(s)) {
    const auto F = spec_.features.size();
    const auto in = static_cast<Index>(static_cast<std::size_t>(spec_.R) * F);
    const Index h = spec_.sep_hidden;
    for (std::size_t j = 0; j < spec_.N; ++j) {
      const auto tag = "station" + std::to_string(j);
      Sub sub;
      sub.w1 = &add(tag + ".hidden.weight", h, in, true, static_cast<double>(in));
      sub.b1 = &add(tag + ".hidden.bias", 1, h, false, static_cast<double>(in));
      sub.w2 = &add(tag + ".out.weight", 1, h, true, static_cast<double>(h));
      sub.b2 = &add(tag + ".out.bias", 1, 1, false, static_cast<double>(h));
      for (std::size_t f = 0; f < F; ++f) {
        for (int r = 0; r < spec_.R; ++r) {
          sub.columns.push_back(static_cast<Index>((f * static_cast<std::size_t>(spec_.R) + static_cast<std::size_t>(r)) * spec_.N + j));
        }
      }
      subs_.push_back(std::move(sub));
    }
  }
  Layout layout() const override { return Layout::image; }
  Graph::Var forward(Graph& g, Graph::Var x, Index) override {
    std::vector<Graph::Var> outs;
    for (auto& s : subs_) {
      auto own = g.gather_cols(x, s.columns);
      auto hdn = g.relu(g.dense(own, g.param(*s.w1), g.param(*s.b1)));
      outs.push_back(g.dense(hdn, g.param(*s.w2), g.param(*s.b2)));
    }
    return g.concat_cols(outs);
  }
  std::size_t nets() const { return subs_.size(); }

 private:
  struct Sub {
    Parameter *w1, *b1, *w2, *b2;
    std::vector<Index> columns;
  };
  std::vector<Sub> subs_;
};

/// conv2D -> ReLU -> conv2D -> ReLU -> flatten -> dense(N) over the R x N image.
class Cnn final : public Network {
 public:
  explicit Cnn(ModelSpec s) : Network(std::move(s)) {
    const int F = static_cast<int>(spec_.features.size());
    c1_ = {F, spec_.R, static_cast<int>(spec_.N), spec_.cnn_channels1, spec_.cnn_kernel, spec_.cnn_kernel,
           spec_.cnn_pad, spec_.cnn_pad, 1};
    c2_ = {spec_.cnn_channels1, c1_.out_height(), c1_.out_width(), spec_.cnn_channels2, spec_.cnn_kernel,
           spec_.cnn_kernel, spec_.cnn_pad, spec_.cnn_pad, 1};
    c1_.validate();
    c2_.validate();
    k1_ = &add("conv1.weight", c1_.out_channels, c1_.patch(), true, c1_.patch());
    kb1_ = &add("conv1.bias", 1, c1_.out_channels, false, c1_.patch());
    k2_ = &add("conv2.weight", c2_.out_channels, c2_.patch(), true, c2_.patch());
    kb2_ = &add("conv2.bias", 1, c2_.out_channels, false, c2_.patch());
    const Index flat = static_cast<Index>(c2_.out_channels) * c2_.out_height() * c2_.out_width();
    w_ = &add("out.weight", static_cast<Index>(spec_.N), flat, true, static_cast<double>(flat));
    b_ = &add("out.bias", 1, static_cast<Index>(spec_.N), false, static_cast<double>(flat));
  }
  Layout layout() const override { return Layout::image; }
  Graph::Var forward(Graph& g, Graph::Var x, Index) override {
    auto a = g.relu(g.conv2d(x, g.param(*k1_), g.param(*kb1_), c1_));
    auto b = g.relu(g.conv2d(a, g.param(*k2_), g.param(*kb2_), c2_));
    return g.dense(g.flatten(b), g.param(*w_), g.param(*b_));
  }

 private:
  nn::ConvShape c1_, c2_;
  Parameter *k1_, *kb1_, *k2_, *kb2_, *w_, *b_;
};

/// Shared recurrent core: R cell steps over a step-major batch, then a dense head.
class RecurrentBase : public Network {
 protected:
  explicit RecurrentBase(ModelSpec s) : Network(std::move(s)) {}

  void add_recurrent(Index in) {
    const Index H = spec_.lstm_hidden, n = static_cast<Index>(spec_.N);
    wx_ = &add("lstm.input_weight", 4 * H, in, true, static_cast<double>(in));
    wh_ = &add("lstm.hidden_weight", 4 * H, H, true, static_cast<double>(H));
    bl_ = &add("lstm.bias", 1, 4 * H, false, static_cast<double>(H));
    wo_ = &add("out.weight", n, H, true, static_cast<double>(H));
    bo_ = &add("out.bias", 1, n, false, static_cast<double>(H));
  }

  Graph::Var recurrent(Graph& g, Graph::Var seq, Index batch) {
    const Index H = spec_.lstm_hidden;
    auto xw = g.dense(seq, g.param(*wx_), g.param(*bl_));
    const auto wh = g.param(*wh_);
    Graph::Var h = 0, c = g.constant(Mat::Zero(batch, H));
    for (int r = 0; r < spec_.R; ++r) {
      auto pre = g.rows(xw, r * batch, batch);
      if (r > 0) pre = g.add(pre, g.matmul_t(h, wh));
      auto gates = g.lstm_gates(pre);
      c = g.lstm_state(gates, c);
      h = g.lstm_output(gates, c);
    }
    return g.dense(h, g.param(*wo_), g.param(*bo_));
  }

 private:
  Parameter *wx_ = nullptr, *wh_ = nullptr, *bl_ = nullptr, *wo_ = nullptr, *bo_ = nullptr;
};

/// R LSTM steps over S^{t-R+1}..S^t, last output -> dense(N).
class Lstm final : public RecurrentBase {
 public:
  explicit Lstm(ModelSpec s) : RecurrentBase(std::move(s)) {
    add_recurrent(static_cast<Index>(spec_.N * spec_.features.size()));
  }
  Layout layout() const override { return Layout::sequence; }
  Graph::Var forward(Graph& g, Graph::Var x, Index batch) override { return recurrent(g, x, batch); }
};

/// A 1 x k convolution along the station axis, shared by every step, feeding the LSTM.
class CnnLstm final : public RecurrentBase {
 public:
  explicit CnnLstm(ModelSpec s) : RecurrentBase(std::move(s)) {
    const int F = static_cast<int>(spec_.features.size());
    conv_ = {F, 1, static_cast<int>(spec_.N), F, 1, spec_.hybrid_kernel, 0, spec_.hybrid_kernel / 2, 1};
    conv_.validate();
    k_ = &add("conv.weight", F, conv_.patch(), true, conv_.patch());
    kb_ = &add("conv.bias", 1, F, false, conv_.patch());
    add_recurrent(static_cast<Index>(spec_.N) * F);
  }
  Layout layout() const override { return Layout::sequence; }
  Graph::Var forward(Graph& g, Graph::Var x, Index batch) override {
    return recurrent(g, g.conv2d(x, g.param(*k_), g.param(*kb_), conv_), batch);
  }

  /// Centred identity kernel with zero bias: the conv passes its input through.
  void set_identity_kernel() {
    k_->value.setZero();
    const int F = conv_.in_channels, k = conv_.kernel_w;
    for (int c = 0; c < F; ++c) k_->value(c, c * k + k / 2) = 1.0;
    kb_->value.setZero();
  }

 private:
  nn::ConvShape conv_;
  Parameter *k_, *kb_;
};

inline std::unique_ptr<Network> build_network(const ModelSpec& spec, std::uint64_t seed) {
  std::unique_ptr<Network> net;
  switch (spec.kind) {
    case ModelKind::bpnn: net = std::make_unique<Bpnn>(spec); break;
    case ModelKind::sep_bpnn: net = std::make_unique<SepBpnn>(spec); break;
    case ModelKind::cnn: net = std::make_unique<Cnn>(spec); break;
    case ModelKind::lstm: net = std::make_unique<Lstm>(spec); break;
    case ModelKind::cnn_lstm: net = std::make_unique<CnnLstm>(spec); break;
    default: throw UsageError(std::string("'") + to_string(spec.kind) + "' is not a neural model");
  }
  net->initialize(seed);
  return net;
}

/// Specs with the documented default architecture for a window shape.
inline ModelSpec default_spec(ModelKind kind, int R, int P, std::size_t N, FeatureSet fs = {}) {
  ModelSpec s;
  s.kind = kind;
  s.R = R;
  s.P = P;
  s.N = N;
  s.features = std::move(fs);
  return s;
}

inline ModelSpec build_bpnn(int R, std::size_t N, FeatureSet fs = {}) { return default_spec(ModelKind::bpnn, R, 1, N, fs); }
inline ModelSpec build_sep_bpnn(int R, std::size_t N, FeatureSet fs = {}) { return default_spec(ModelKind::sep_bpnn, R, 1, N, fs); }
inline ModelSpec build_cnn(int R, std::size_t N, FeatureSet fs = {}) { return default_spec(ModelKind::cnn, R, 1, N, fs); }
inline ModelSpec build_lstm(int R, std::size_t N, FeatureSet fs = {}, int hidden = 128) {
  auto s = default_spec(ModelKind::lstm, R, 1, N, fs);
  s.lstm_hidden = hidden;
  return s;
}
inline ModelSpec build_cnn_lstm(int R, std::size_t N, FeatureSet fs = {}, int hidden = 128) {
  auto s = default_spec(ModelKind::cnn_lstm, R, 1, N, fs);
  s.lstm_hidden = hidden;
  return s;
}

// ---------------------------------------------------------------------------
// Training and inference over window sets.

/// Forward pass without gradients; result in normalised units.
inline Mat forward_normalized(Network& net, const WindowSet& ws, std::span<const std::size_t> idx, const Normalization& norm) {
  Mat x;
  ws.fill_inputs(idx, net.layout(), norm, x);
  Graph g(false);
  const auto in = g.constant(std::move(x));
  return g.value(net.forward(g, in, static_cast<Index>(idx.size())));
}

/// Predictions in raw flow units, [idx.size() x N].
inline Mat predict_raw(Network& net, const WindowSet& ws, std::span<const std::size_t> idx, const Normalization& norm) {
  Mat y = forward_normalized(net, ws, idx, norm);
  for (Index b = 0; b < y.rows(); ++b) {
    for (Index n = 0; n < y.cols(); ++n) y(b, n) = norm.denormalize_target(y(b, n), static_cast<std::size_t>(n));
  }
  return y;
}

/// Mean squared error in normalised space over every window of `ws`.
inline double evaluate_loss(Network& net, const WindowSet& ws, const Normalization& norm, std::size_t chunk = 1024) {
  if (ws.empty()) throw UsageError("cannot evaluate a loss on an empty window set");
  double ss = 0.0;
  double count = 0.0;
  std::vector<std::size_t> idx;
  Mat y;
  for (std::size_t s = 0; s < ws.size(); s += chunk) {
    idx.resize(std::min(chunk, ws.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const Mat pred = forward_normalized(net, ws, idx, norm);
    ws.fill_targets(idx, &norm, y);
    ss += (pred - y).squaredNorm();
    count += static_cast<double>(pred.size());
  }
  return ss / count;
}

inline void check_compatible(const Network& net, const WindowSet& ws) {
  const auto& s = net.spec();
  if (ws.R() != s.R || ws.P() != s.P || ws.N() != s.N || ws.frame().features != s.features) {
    throw UsageError("window set does not match the model's R, P, stations or features");
  }
}

/// Mini-batch MSE training with Adam and early stopping on the validation loss.
inline nn::TrainHistory train_network(Network& net, const DatasetSplit& split, const nn::TrainConfig& cfg) {
  cfg.validate();
  if (split.train.empty() || split.validation.empty()) throw UsageError("training needs non-empty train and validation sets");
  check_compatible(net, split.train);
  check_compatible(net, split.validation);
  nn::Adam opt(net.parameters(), {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.l2_weight});
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  std::vector<std::size_t> order = split.train.all_indices();
  Mat x, y;
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  auto run_epoch = [&](int) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += B) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(B, order.size() - s));
      split.train.fill_inputs(idx, net.layout(), split.normalization, x);
      split.train.fill_targets(idx, &split.normalization, y);
      Graph g(true);
      const auto in = g.constant(x);
      const auto loss = g.mse(net.forward(g, in, static_cast<Index>(idx.size())), y);
      opt.zero_grad();
      g.backward(loss);
      opt.step();
      total += g.value(loss)(0, 0) * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(order.size());
  };
  auto validate = [&](int) { return evaluate_loss(net, split.validation, split.normalization); };
  return nn::fit(net.parameters(), cfg, run_epoch, validate);
}

}  // namespace loopflow
