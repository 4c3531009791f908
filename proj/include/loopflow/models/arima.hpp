#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "loopflow/core/error.hpp"

namespace loopflow {

/// AR(p) on the d-times differenced, demeaned series (q = 0).
struct ArimaModel {
  int p = 2;
  int d = 1;
  int q = 0;
  std::vector<double> phi;          // AR coefficients, lag 1 first
  double mean = 0.0;                // mean of the differenced series
  std::vector<double> tail;         // trailing values of the fitted series
  std::size_t fitted_points = 0;
};

/// Differences `x` once.
inline std::vector<double> difference(std::span<const double> x) {
  std::vector<double> out;
  for (std::size_t i = 1; i < x.size(); ++i) out.push_back(x[i] - x[i - 1]);
  return out;
}

/// Least-squares fit on at most `max_history` trailing points.
inline ArimaModel arima_fit(std::span<const double> series, int p = 2, int d = 1, int q = 0, std::size_t max_history = 100) {
  if (q != 0) throw UsageError("only q = 0 is supported");
  if (p < 1 || d < 0) throw UsageError("ARIMA orders must satisfy p >= 1, d >= 0");
  const std::size_t use = std::min(series.size(), max_history);
  if (use <= static_cast<std::size_t>(p + d + 10)) throw DataError("series too short for ARIMA(" + std::to_string(p) + "," + std::to_string(d) + ",0)");
  std::span<const double> x = series.subspan(series.size() - use);
  for (double v : x) {
    if (!std::isfinite(v)) throw DataError("non-finite value in ARIMA input");
  }
  ArimaModel m;
  m.p = p;
  m.d = d;
  m.q = q;
  m.fitted_points = use;
  m.tail.assign(x.end() - std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x.size()), d + p + 1), x.end());
  std::vector<double> w(x.begin(), x.end());
  for (int k = 0; k < d; ++k) w = difference(w);
  const bool constant = std::all_of(w.begin(), w.end(), [&](double v) { return v == w.front(); });
  double mean = 0.0;
  for (double v : w) mean += v;
  mean = constant ? w.front() : mean / static_cast<double>(w.size());
  m.mean = mean;
  std::vector<double> z(w.size());
  bool all_zero = true;
  for (std::size_t i = 0; i < w.size(); ++i) {
    z[i] = w[i] - mean;
    all_zero = all_zero && z[i] == 0.0;
  }
  m.phi.assign(static_cast<std::size_t>(p), 0.0);
  if (all_zero) return m;  // constant differences: the level continues its trend
  const auto rows = static_cast<Eigen::Index>(z.size()) - p;
  Eigen::MatrixXd X(rows, p);
  Eigen::VectorXd y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    y(i) = z[static_cast<std::size_t>(i + p)];
    for (int k = 0; k < p; ++k) X(i, k) = z[static_cast<std::size_t>(i + p - 1 - k)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < p) throw DataError("singular ARIMA design matrix");
  const Eigen::VectorXd phi = qr.solve(y);
  for (int k = 0; k < p; ++k) m.phi[static_cast<std::size_t>(k)] = phi(k);
  return m;
}

/// Iterated one-step forecasts, each appended before the next.
inline std::vector<double> arima_forecast(const ArimaModel& m, int horizon) {
  if (horizon < 1) throw UsageError("forecast horizon must be positive");
  // levels[k] holds the k-times differenced trailing series
  std::vector<std::vector<double>> levels{m.tail};
  for (int k = 0; k < m.d; ++k) levels.push_back(difference(levels.back()));
  auto& w = levels.back();
  std::vector<double> out;
  for (int h = 0; h < horizon; ++h) {
    double next = m.mean;
    for (int k = 0; k < m.p; ++k) {
      const auto lag = static_cast<std::ptrdiff_t>(w.size()) - 1 - k;
      next += m.phi[static_cast<std::size_t>(k)] * (lag >= 0 ? w[static_cast<std::size_t>(lag)] - m.mean : 0.0);
    }
    w.push_back(next);
    // integrate back up through each differencing level
    for (int k = m.d - 1; k >= 0; --k) {
      auto& lv = levels[static_cast<std::size_t>(k)];
      lv.push_back(lv.back() + levels[static_cast<std::size_t>(k + 1)].back());
    }
    out.push_back(levels[0].back());
  }
  return out;
}

struct ArimaOrder {
  int p = 2;
  int d = 1;
  double rmse = std::numeric_limits<double>::infinity();
};

/// Exhaustive search over p in [1, max_p] and d in [1, max_d] by rolling
/// one-step error over the last `holdout` points of the series.
inline ArimaOrder arima_line_search(std::span<const double> series, std::size_t holdout, int max_p = 5, int max_d = 5,
                                    std::size_t max_history = 100) {
  ArimaOrder best;
  if (holdout == 0 || holdout >= series.size()) throw UsageError("holdout must lie inside the series");
  for (int p = 1; p <= max_p; ++p) {
    for (int d = 1; d <= max_d; ++d) {
      double ss = 0.0;
      bool ok = true;
      for (std::size_t i = series.size() - holdout; i < series.size() && ok; ++i) {
        try {
          const auto m = arima_fit(series.first(i), p, d, 0, max_history);
          const double e = arima_forecast(m, 1)[0] - series[i];
          ss += e * e;
        } catch (const Error&) {
          ok = false;
        }
      }
      if (!ok) continue;
      const double rmse = std::sqrt(ss / static_cast<double>(holdout));
      if (rmse < best.rmse) best = {p, d, rmse};
    }
  }
  return best;
}

}  // namespace loopflow
