#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "loopflow/core/error.hpp"

namespace loopflow::nn {

/// Row-major dense matrix. Every batch is laid out one sample per row.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Shaped value type: `shape` describes the logical extents of `data`.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape{std::move(s)}, data{std::move(d)} {
    if (static_cast<std::size_t>(numel(shape)) != data.size()) throw UsageError("tensor shape does not match data size");
  }

  static long numel(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), 1L, [](long a, int b) { return a * b; });
  }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline Tensor to_tensor(const Mat& m) {
  return Tensor({static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::vector<double>(m.data(), m.data() + m.size()));
}

inline Mat to_mat(const Tensor& t) {
  if (t.shape.size() != 2) throw UsageError("expected a 2-D tensor");
  Mat m(t.shape[0], t.shape[1]);
  std::copy(t.data.begin(), t.data.end(), m.data());
  return m;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace loopflow::nn
