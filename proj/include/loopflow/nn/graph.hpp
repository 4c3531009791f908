#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "loopflow/core/error.hpp"
#include "loopflow/nn/tensor.hpp"

namespace loopflow::nn {

using Index = Eigen::Index;

/// Trainable matrix with its gradient accumulator. `decay` marks weights that
/// receive the L2 penalty (biases do not).
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols, bool is_weight)
      : name{std::move(n)}, value{Mat::Zero(rows, cols)}, grad{Mat::Zero(rows, cols)}, decay{is_weight} {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

  /// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
  void init_uniform(std::mt19937_64& rng, double fan_in) {
    const double a = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> u(-a, a);
    for (Index i = 0; i < value.size(); ++i) value.data()[i] = u(rng);
  }
};

struct ConvShape {
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int stride = 1;

  int out_height() const { return (height + 2 * pad_h - kernel_h) / stride + 1; }
  int out_width() const { return (width + 2 * pad_w - kernel_w) / stride + 1; }
  int patch() const { return in_channels * kernel_h * kernel_w; }

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || height < 1 || width < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 ||
        pad_h < 0 || pad_w < 0) {
      throw UsageError("invalid convolution shape");
    }
    if (height + 2 * pad_h < kernel_h || width + 2 * pad_w < kernel_w) {
      throw UsageError("convolution kernel does not fit the padded input");
    }
  }
};

/// Reverse-mode tape. Every value is a matrix with one sample per row; ops
/// record a closure that pushes gradients to their inputs.
class Graph {
 public:
  using Var = std::size_t;

  explicit Graph(bool training = true) : training_{training} {}

  bool training() const { return training_; }
  std::size_t size() const { return nodes_.size(); }

  /// Input that never receives a gradient.
  Var constant(Mat v) { return push(std::move(v), false); }

  /// Input leaf that does receive a gradient (used by gradient checks).
  Var variable(Mat v) { return push(std::move(v), true); }

  /// Parameter leaf; gradients accumulate into `p.grad` during backward.
  Var param(Parameter& p) {
    Node n;
    n.ext = &p.value;
    n.ext_grad = &p.grad;
    n.needs_grad = training_;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Mat& value(Var v) const { return nodes_[v].ext ? *nodes_[v].ext : nodes_[v].value; }

  /// Gradient of a leaf created with `variable` (zero-sized if untouched).
  const Mat& grad(Var v) const { return nodes_[v].grad; }

  bool needs_grad(Var v) const { return nodes_[v].needs_grad; }

  // -------------------------------------------------------------------------
  // Ops.

  /// x * W^T + b, with W [out x in] and b [1 x out].
  Var dense(Var x, Var W, Var b) {
    const Mat& X = value(x);
    const Mat& Wm = value(W);
    const Mat& bm = value(b);
    if (X.cols() != Wm.cols() || bm.rows() != 1 || bm.cols() != Wm.rows()) throw UsageError("dense: shape mismatch");
    Mat y(X.rows(), Wm.rows());
    y.noalias() = X * Wm.transpose();
    y.rowwise() += bm.row(0);
    const Var out = push(std::move(y), any_grad({x, W, b}));
    set_back(out, [x, W, b](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x).noalias() += gy * g.value(W);
      if (g.needs_grad(W)) g.acc(W).noalias() += gy.transpose() * g.value(x);
      if (g.needs_grad(b)) g.acc(b) += gy.colwise().sum();
    });
    return out;
  }

  /// x * W^T without bias.
  Var matmul_t(Var x, Var W) {
    const Mat& X = value(x);
    const Mat& Wm = value(W);
    if (X.cols() != Wm.cols()) throw UsageError("matmul: shape mismatch");
    Mat y(X.rows(), Wm.rows());
    y.noalias() = X * Wm.transpose();
    const Var out = push(std::move(y), any_grad({x, W}));
    set_back(out, [x, W](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x).noalias() += gy * g.value(W);
      if (g.needs_grad(W)) g.acc(W).noalias() += gy.transpose() * g.value(x);
    });
    return out;
  }

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    const Var out = push(value(a) + value(b), any_grad({a, b}));
    set_back(out, [a, b](Graph& g, const Mat& gy) {
      if (g.needs_grad(a)) g.acc(a) += gy;
      if (g.needs_grad(b)) g.acc(b) += gy;
    });
    return out;
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    const Var out = push(value(a).cwiseProduct(value(b)), any_grad({a, b}));
    set_back(out, [a, b](Graph& g, const Mat& gy) {
      if (g.needs_grad(a)) g.acc(a) += gy.cwiseProduct(g.value(b));
      if (g.needs_grad(b)) g.acc(b) += gy.cwiseProduct(g.value(a));
    });
    return out;
  }

  /// max(x, 0); the subgradient at 0 is 0.
  Var relu(Var x) {
    const Var out = push(value(x).cwiseMax(0.0), any_grad({x}));
    set_back(out, [x](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x).array() += (g.value(x).array() > 0.0).select(gy.array(), 0.0);
    });
    return out;
  }

  Var sigmoid(Var x) {
    Mat y = value(x).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    const Var out = push(std::move(y), any_grad({x}));
    set_back(out, [x, out](Graph& g, const Mat& gy) {
      if (!g.needs_grad(x)) return;
      const auto& s = g.value(out).array();
      g.acc(x).array() += gy.array() * s * (1.0 - s);
    });
    return out;
  }

  Var tanh(Var x) {
    const Var out = push(value(x).array().tanh().matrix(), any_grad({x}));
    set_back(out, [x, out](Graph& g, const Mat& gy) {
      if (!g.needs_grad(x)) return;
      const auto& t = g.value(out).array();
      g.acc(x).array() += gy.array() * (1.0 - t * t);
    });
    return out;
  }

  /// Contiguous block of rows; used to pick one time step of a step-major batch.
  Var rows(Var x, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > value(x).rows()) throw UsageError("rows: out of range");
    const Var out = push(value(x).middleRows(start, count), any_grad({x}));
    set_back(out, [x, start, count](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x).middleRows(start, count) += gy;
    });
    return out;
  }

  Var cols(Var x, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > value(x).cols()) throw UsageError("cols: out of range");
    const Var out = push(value(x).middleCols(start, count), any_grad({x}));
    set_back(out, [x, start, count](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x).middleCols(start, count) += gy;
    });
    return out;
  }

  Var gather_cols(Var x, std::vector<Index> idx) {
    const Mat& X = value(x);
    Mat y(X.rows(), static_cast<Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] < 0 || idx[j] >= X.cols()) throw UsageError("gather_cols: index out of range");
      y.col(static_cast<Index>(j)) = X.col(idx[j]);
    }
    const Var out = push(std::move(y), any_grad({x}));
    set_back(out, [x, idx = std::move(idx)](Graph& g, const Mat& gy) {
      if (!g.needs_grad(x)) return;
      Mat& gx = g.acc(x);
      for (std::size_t j = 0; j < idx.size(); ++j) gx.col(idx[j]) += gy.col(static_cast<Index>(j));
    });
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: nothing to concatenate");
    Index total = 0;
    const Index r = value(parts[0]).rows();
    for (Var p : parts) {
      if (value(p).rows() != r) throw UsageError("concat_cols: row mismatch");
      total += value(p).cols();
    }
    Mat y(r, total);
    Index at = 0;
    for (Var p : parts) {
      y.middleCols(at, value(p).cols()) = value(p);
      at += value(p).cols();
    }
    const Var out = push(std::move(y), any_grad(parts));
    set_back(out, [parts](Graph& g, const Mat& gy) {
      Index at = 0;
      for (Var p : parts) {
        const Index c = g.value(p).cols();
        if (g.needs_grad(p)) g.acc(p) += gy.middleCols(at, c);
        at += c;
      }
    });
    return out;
  }

  /// Identity on the data: every row is already a flattened sample.
  Var flatten(Var x) {
    const Var out = push(value(x), any_grad({x}));
    set_back(out, [x](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x) += gy;
    });
    return out;
  }

  /// 2-D cross-correlation with bias. Rows of x hold [C][H][W]; rows of the
  /// result hold [C_out][H_out][W_out]. W is [C_out x C_in*kh*kw], b is [1 x C_out].
  Var conv2d(Var x, Var W, Var b, const ConvShape& cs) {
    cs.validate();
    const Mat& X = value(x);
    const Mat& Wm = value(W);
    const Mat& bm = value(b);
    const Index hw_in = static_cast<Index>(cs.height) * cs.width;
    const Index ho = cs.out_height(), wo = cs.out_width(), hw = ho * wo;
    if (X.cols() != cs.in_channels * hw_in || Wm.rows() != cs.out_channels || Wm.cols() != cs.patch() ||
        bm.rows() != 1 || bm.cols() != cs.out_channels) {
      throw UsageError("conv2d: shape mismatch");
    }
    const Index B = X.rows();
    Mat cols(cs.patch(), B * hw);
    im2col(X, cs, cols);
    Mat big(cs.out_channels, B * hw);
    big.noalias() = Wm * cols;
    Mat y(B, cs.out_channels * hw);
    for (Index s = 0; s < B; ++s) {
      for (Index co = 0; co < cs.out_channels; ++co) {
        y.row(s).segment(co * hw, hw) = big.row(co).segment(s * hw, hw).array() + bm(0, co);
      }
    }
    const Var out = push(std::move(y), any_grad({x, W, b}));
    set_back(out, [x, W, b, cs, cols = std::move(cols), hw](Graph& g, const Mat& gy) {
      const Index B = gy.rows();
      Mat gbig(cs.out_channels, B * hw);
      for (Index s = 0; s < B; ++s) {
        for (Index co = 0; co < cs.out_channels; ++co) gbig.row(co).segment(s * hw, hw) = gy.row(s).segment(co * hw, hw);
      }
      if (g.needs_grad(W)) g.acc(W).noalias() += gbig * cols.transpose();
      if (g.needs_grad(b)) g.acc(b) += gbig.rowwise().sum().transpose();
      if (g.needs_grad(x)) {
        Mat gcols(cs.patch(), B * hw);
        gcols.noalias() = g.value(W).transpose() * gbig;
        col2im(gcols, cs, g.acc(x));
      }
    });
    return out;
  }

  /// Gate activations for pre-activations laid out [i | f | g | o].
  Var lstm_gates(Var pre) {
    const Mat& Z = value(pre);
    if (Z.cols() % 4 != 0) throw UsageError("lstm_gates: width must be 4*hidden");
    const Index H = Z.cols() / 4;
    Mat a(Z.rows(), Z.cols());
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    a.leftCols(2 * H) = Z.leftCols(2 * H).unaryExpr(sig);
    a.middleCols(2 * H, H) = Z.middleCols(2 * H, H).array().tanh().matrix();
    a.rightCols(H) = Z.rightCols(H).unaryExpr(sig);
    const Var out = push(std::move(a), any_grad({pre}));
    set_back(out, [pre, out, H](Graph& g, const Mat& gy) {
      if (!g.needs_grad(pre)) return;
      const Mat& A = g.value(out);
      Mat& gz = g.acc(pre);
      gz.leftCols(2 * H).array() += gy.leftCols(2 * H).array() * A.leftCols(2 * H).array() * (1.0 - A.leftCols(2 * H).array());
      gz.middleCols(2 * H, H).array() +=
          gy.middleCols(2 * H, H).array() * (1.0 - A.middleCols(2 * H, H).array().square());
      gz.rightCols(H).array() += gy.rightCols(H).array() * A.rightCols(H).array() * (1.0 - A.rightCols(H).array());
    });
    return out;
  }

  /// New cell state f * c_prev + i * g.
  Var lstm_state(Var gates, Var c_prev) {
    const Mat& A = value(gates);
    const Mat& C = value(c_prev);
    const Index H = A.cols() / 4;
    if (C.rows() != A.rows() || C.cols() != H) throw UsageError("lstm_state: shape mismatch");
    Mat c = A.middleCols(H, H).cwiseProduct(C) + A.leftCols(H).cwiseProduct(A.middleCols(2 * H, H));
    const Var out = push(std::move(c), any_grad({gates, c_prev}));
    set_back(out, [gates, c_prev, H](Graph& g, const Mat& gc) {
      const Mat& A = g.value(gates);
      if (g.needs_grad(gates)) {
        Mat& ga = g.acc(gates);
        ga.leftCols(H) += gc.cwiseProduct(A.middleCols(2 * H, H));
        ga.middleCols(H, H) += gc.cwiseProduct(g.value(c_prev));
        ga.middleCols(2 * H, H) += gc.cwiseProduct(A.leftCols(H));
      }
      if (g.needs_grad(c_prev)) g.acc(c_prev) += gc.cwiseProduct(A.middleCols(H, H));
    });
    return out;
  }

  /// Hidden state / output o * tanh(c).
  Var lstm_output(Var gates, Var c) {
    const Mat& A = value(gates);
    const Index H = A.cols() / 4;
    if (value(c).rows() != A.rows() || value(c).cols() != H) throw UsageError("lstm_output: shape mismatch");
    Mat tc = value(c).array().tanh().matrix();
    Mat h = A.rightCols(H).cwiseProduct(tc);
    const Var out = push(std::move(h), any_grad({gates, c}));
    set_back(out, [gates, c, H, tc = std::move(tc)](Graph& g, const Mat& gh) {
      const Mat& A = g.value(gates);
      if (g.needs_grad(gates)) g.acc(gates).rightCols(H) += gh.cwiseProduct(tc);
      if (g.needs_grad(c)) g.acc(c).array() += gh.array() * A.rightCols(H).array() * (1.0 - tc.array().square());
    });
    return out;
  }

  /// Mean squared error against a fixed target, as a 1x1 value.
  Var mse(Var pred, const Mat& target) {
    const Mat& Pm = value(pred);
    if (Pm.rows() != target.rows() || Pm.cols() != target.cols()) throw UsageError("mse: shape mismatch");
    Mat diff = Pm - target;
    Mat y(1, 1);
    y(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
    const Var out = push(std::move(y), any_grad({pred}));
    set_back(out, [pred, diff = std::move(diff)](Graph& g, const Mat& gy) {
      if (g.needs_grad(pred)) g.acc(pred) += diff * (2.0 * gy(0, 0) / static_cast<double>(diff.size()));
    });
    return out;
  }

  Var sum(Var x) {
    Mat y(1, 1);
    y(0, 0) = value(x).sum();
    const Var out = push(std::move(y), any_grad({x}));
    set_back(out, [x](Graph& g, const Mat& gy) {
      if (g.needs_grad(x)) g.acc(x).array() += gy(0, 0);
    });
    return out;
  }

  /// Propagates d(loss)/d(node) to every node; `loss` must be 1x1.
  void backward(Var loss) {
    if (value(loss).rows() != 1 || value(loss).cols() != 1) throw UsageError("backward: loss must be a scalar");
    if (!nodes_[loss].needs_grad) return;
    acc(loss)(0, 0) += 1.0;
    for (std::size_t i = loss + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.size() == 0) continue;
      n.back(*this, n.grad);
    }
  }

 private:
  struct Node {
    Mat value;
    const Mat* ext = nullptr;
    Mat grad;
    Mat* ext_grad = nullptr;
    bool needs_grad = false;
    std::function<void(Graph&, const Mat&)> back;
  };

  Var push(Mat v, bool needs) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  template <class F>
  void set_back(Var v, F&& f) {
    if (nodes_[v].needs_grad) nodes_[v].back = std::forward<F>(f);
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs) {
      if (nodes_[v].needs_grad) return true;
    }
    return false;
  }
  bool any_grad(const std::vector<Var>& vs) const {
    for (Var v : vs) {
      if (nodes_[v].needs_grad) return true;
    }
    return false;
  }

  void same_shape(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw UsageError(std::string(op) + ": shape mismatch");
    }
  }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  Mat& acc(Var v) {
    Node& n = nodes_[v];
    if (n.ext_grad) {
      if (n.ext_grad->rows() != n.ext->rows() || n.ext_grad->cols() != n.ext->cols()) {
        n.ext_grad->setZero(n.ext->rows(), n.ext->cols());
      }
      return *n.ext_grad;
    }
    if (n.grad.size() == 0) n.grad.setZero(value(v).rows(), value(v).cols());
    return n.grad;
  }

  static void im2col(const Mat& X, const ConvShape& cs, Mat& cols) {
    const Index ho = cs.out_height(), wo = cs.out_width(), hw = ho * wo;
    cols.setZero();
    for (Index s = 0; s < X.rows(); ++s) {
      const double* img = X.row(s).data();
      for (int c = 0; c < cs.in_channels; ++c) {
        for (int i = 0; i < cs.kernel_h; ++i) {
          for (int j = 0; j < cs.kernel_w; ++j) {
            const Index k = (static_cast<Index>(c) * cs.kernel_h + i) * cs.kernel_w + j;
            double* dst = cols.row(k).data() + s * hw;
            for (Index oh = 0; oh < ho; ++oh) {
              const Index ih = oh * cs.stride - cs.pad_h + i;
              if (ih < 0 || ih >= cs.height) continue;
              for (Index ow = 0; ow < wo; ++ow) {
                const Index iw = ow * cs.stride - cs.pad_w + j;
                if (iw < 0 || iw >= cs.width) continue;
                dst[oh * wo + ow] = img[(static_cast<Index>(c) * cs.height + ih) * cs.width + iw];
              }
            }
          }
        }
      }
    }
  }

  static void col2im(const Mat& cols, const ConvShape& cs, Mat& gX) {
    const Index ho = cs.out_height(), wo = cs.out_width(), hw = ho * wo;
    for (Index s = 0; s < gX.rows(); ++s) {
      double* img = gX.row(s).data();
      for (int c = 0; c < cs.in_channels; ++c) {
        for (int i = 0; i < cs.kernel_h; ++i) {
          for (int j = 0; j < cs.kernel_w; ++j) {
            const Index k = (static_cast<Index>(c) * cs.kernel_h + i) * cs.kernel_w + j;
            const double* src = cols.row(k).data() + s * hw;
            for (Index oh = 0; oh < ho; ++oh) {
              const Index ih = oh * cs.stride - cs.pad_h + i;
              if (ih < 0 || ih >= cs.height) continue;
              for (Index ow = 0; ow < wo; ++ow) {
                const Index iw = ow * cs.stride - cs.pad_w + j;
                if (iw < 0 || iw >= cs.width) continue;
                img[(static_cast<Index>(c) * cs.height + ih) * cs.width + iw] += src[oh * wo + ow];
              }
            }
          }
        }
      }
    }
  }

  bool training_ = true;
  std::vector<Node> nodes_;
};

}  // namespace loopflow::nn
