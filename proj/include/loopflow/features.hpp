#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "loopflow/core/error.hpp"
#include "loopflow/core/time.hpp"
#include "loopflow/nn/tensor.hpp"
#include "loopflow/store.hpp"

namespace loopflow {

/// Non-empty ordered subset of {flow, speed, occupancy}, written as "f", "fs", "fso", ...
class FeatureSet {
 public:
  FeatureSet() : features_{Feature::flow} {}
  explicit FeatureSet(std::vector<Feature> fs) : features_{std::move(fs)} {
    std::sort(features_.begin(), features_.end());
    features_.erase(std::unique(features_.begin(), features_.end()), features_.end());
    if (features_.empty()) throw UsageError("feature set must not be empty");
  }

  static FeatureSet parse(std::string_view code) {
    std::vector<Feature> fs;
    for (char c : code) {
      const auto f = parse_feature(std::string_view(&c, 1));
      if (!f) throw UsageError("bad feature set '" + std::string(code) + "' (use letters f, s, o)");
      fs.push_back(*f);
    }
    return FeatureSet(std::move(fs));
  }

  std::string code() const {
    std::string s;
    for (Feature f : features_) s += to_string(f)[0];
    return s;
  }

  const std::vector<Feature>& features() const { return features_; }
  std::size_t size() const { return features_.size(); }
  Feature operator[](std::size_t i) const { return features_[i]; }
  bool operator==(const FeatureSet&) const = default;

  /// The seven combinations f, s, o, fs, fo, so, fso.
  static std::vector<FeatureSet> all_combinations() {
    std::vector<FeatureSet> out;
    for (const char* c : {"f", "s", "o", "fs", "fo", "so", "fso"}) out.push_back(parse(c));
    return out;
  }

 private:
  std::vector<Feature> features_;
};

/// Dense model-order copy of a store: raw inputs, raw flow targets and
/// per-step usability flags. Station order is the store's order, which is the
/// topology's canonical physical order.
struct Frame {
  TimeGrid grid;
  std::vector<std::string> stations;
  FeatureSet features;
  std::size_t N = 0;
  std::size_t F = 0;
  std::vector<double> x;                // [t][f][n], NaN where unusable
  std::vector<double> y;                // [t][n] flow, NaN where unusable
  std::vector<std::uint8_t> input_ok;   // every station and feature usable at t
  std::vector<std::uint8_t> target_ok;  // flow usable at every station at t
  std::vector<std::uint8_t> bad_day;    // some station unreliable on that day

  std::int64_t T() const { return grid.size(); }
  double input(std::int64_t t, std::size_t f, std::size_t n) const { return x[(static_cast<std::size_t>(t) * F + f) * N + n]; }
  double flow(std::int64_t t, std::size_t n) const { return y[static_cast<std::size_t>(t) * N + n]; }
};

inline std::shared_ptr<const Frame> make_frame(const SeriesStore& store, const FeatureSet& fs) {
  auto fr = std::make_shared<Frame>();
  fr->grid = store.grid();
  fr->stations = store.stations();
  fr->features = fs;
  fr->N = store.station_count();
  fr->F = fs.size();
  const auto T = static_cast<std::size_t>(store.time_count());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  fr->x.assign(T * fr->F * fr->N, nan);
  fr->y.assign(T * fr->N, nan);
  fr->input_ok.assign(T, 1);
  fr->target_ok.assign(T, 1);
  fr->bad_day.assign(static_cast<std::size_t>(store.grid().day_count()), 0);
  for (const auto& [s, d] : store.unreliable_days()) fr->bad_day[static_cast<std::size_t>(d)] = 1;
  for (std::size_t t = 0; t < T; ++t) {
    const auto ti = static_cast<std::int64_t>(t);
    for (std::size_t n = 0; n < fr->N; ++n) {
      if (store.is_usable(n, Feature::flow, ti)) {
        fr->y[t * fr->N + n] = store.value(n, Feature::flow, ti);
      } else {
        fr->target_ok[t] = 0;
      }
      for (std::size_t f = 0; f < fr->F; ++f) {
        if (store.is_usable(n, fs[f], ti)) {
          fr->x[(t * fr->F + f) * fr->N + n] = store.value(n, fs[f], ti);
        } else {
          fr->input_ok[t] = 0;
        }
      }
    }
  }
  return fr;
}

/// Materialised window: R x N x F inputs (index (r*N + n)*F + f) and the N
/// flow targets at t+P, both in raw units. `t_index` is the last input step.
struct FeatureWindow {
  int R = 0;
  int P = 0;
  std::size_t N = 0;
  std::size_t F = 0;
  std::vector<double> matrix;
  std::vector<double> target;
  std::int64_t t_index = 0;

  double at(int r, std::size_t n, std::size_t f) const { return matrix[(static_cast<std::size_t>(r) * N + n) * F + f]; }
};

/// Batch layouts handed to the networks.
enum class Layout {
  image,     // one row per sample: [F][R][N]
  sequence,  // one row per (step, sample), step-major: [F][N]
};

/// z-score statistics: inputs per (feature, station), targets per station.
struct Normalization {
  std::size_t N = 0;
  std::size_t F = 0;
  std::vector<double> in_mean, in_std;    // [f][n]
  std::vector<double> out_mean, out_std;  // [n]

  static Normalization identity(std::size_t N, std::size_t F) {
    return {N, F, std::vector<double>(N * F, 0.0), std::vector<double>(N * F, 1.0), std::vector<double>(N, 0.0),
            std::vector<double>(N, 1.0)};
  }

  double normalize_input(double v, std::size_t f, std::size_t n) const { return (v - in_mean[f * N + n]) / in_std[f * N + n]; }
  double denormalize_input(double z, std::size_t f, std::size_t n) const { return z * in_std[f * N + n] + in_mean[f * N + n]; }
  double normalize_target(double v, std::size_t n) const { return (v - out_mean[n]) / out_std[n]; }
  double denormalize_target(double z, std::size_t n) const { return z * out_std[n] + out_mean[n]; }
};

/// Windows over a shared frame, identified by their last input step.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const Frame> frame, int R, int P, std::vector<std::int64_t> anchors)
      : frame_{std::move(frame)}, R_{R}, P_{P}, anchors_{std::move(anchors)} {}

  std::size_t size() const { return anchors_.size(); }
  bool empty() const { return anchors_.empty(); }
  int R() const { return R_; }
  int P() const { return P_; }
  std::size_t N() const { return frame_ ? frame_->N : 0; }
  std::size_t F() const { return frame_ ? frame_->F : 0; }
  const Frame& frame() const { return *frame_; }
  const std::shared_ptr<const Frame>& frame_ptr() const { return frame_; }
  const std::vector<std::int64_t>& anchors() const { return anchors_; }
  std::int64_t anchor(std::size_t i) const { return anchors_[i]; }
  std::int64_t target_index(std::size_t i) const { return anchors_[i] + P_; }

  FeatureWindow window(std::size_t i) const {
    const auto& fr = *frame_;
    FeatureWindow w{R_, P_, fr.N, fr.F, {}, {}, anchors_[i]};
    w.matrix.resize(static_cast<std::size_t>(R_) * fr.N * fr.F);
    for (int r = 0; r < R_; ++r) {
      const auto t = anchors_[i] - R_ + 1 + r;
      for (std::size_t n = 0; n < fr.N; ++n) {
        for (std::size_t f = 0; f < fr.F; ++f) w.matrix[(static_cast<std::size_t>(r) * fr.N + n) * fr.F + f] = fr.input(t, f, n);
      }
    }
    w.target.resize(fr.N);
    for (std::size_t n = 0; n < fr.N; ++n) w.target[n] = fr.flow(target_index(i), n);
    return w;
  }

  std::vector<FeatureWindow> materialize() const {
    std::vector<FeatureWindow> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(window(i));
    return out;
  }

  /// Normalised inputs of the selected windows in the requested layout.
  void fill_inputs(std::span<const std::size_t> idx, Layout layout, const Normalization& norm, nn::Mat& out) const {
    const auto& fr = *frame_;
    const auto B = static_cast<Eigen::Index>(idx.size());
    const auto N = fr.N, F = fr.F;
    if (layout == Layout::image) {
      out.resize(B, static_cast<Eigen::Index>(F * static_cast<std::size_t>(R_) * N));
      for (Eigen::Index b = 0; b < B; ++b) {
        double* row = out.row(b).data();
        const auto a = anchors_[idx[static_cast<std::size_t>(b)]];
        for (std::size_t f = 0; f < F; ++f) {
          for (int r = 0; r < R_; ++r) {
            const auto t = a - R_ + 1 + r;
            for (std::size_t n = 0; n < N; ++n) {
              row[(f * static_cast<std::size_t>(R_) + static_cast<std::size_t>(r)) * N + n] = norm.normalize_input(fr.input(t, f, n), f, n);
            }
          }
        }
      }
    } else {
      out.resize(static_cast<Eigen::Index>(R_) * B, static_cast<Eigen::Index>(F * N));
      for (int r = 0; r < R_; ++r) {
        for (Eigen::Index b = 0; b < B; ++b) {
          double* row = out.row(r * B + b).data();
          const auto t = anchors_[idx[static_cast<std::size_t>(b)]] - R_ + 1 + r;
          for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t n = 0; n < N; ++n) row[f * N + n] = norm.normalize_input(fr.input(t, f, n), f, n);
          }
        }
      }
    }
  }

  /// Targets of the selected windows, normalised when `norm` is given, else raw.
  void fill_targets(std::span<const std::size_t> idx, const Normalization* norm, nn::Mat& out) const {
    const auto& fr = *frame_;
    out.resize(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(fr.N));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto t = target_index(idx[b]);
      for (std::size_t n = 0; n < fr.N; ++n) {
        const double v = fr.flow(t, n);
        out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(n)) = norm ? norm->normalize_target(v, n) : v;
      }
    }
  }

  std::vector<std::size_t> all_indices() const {
    std::vector<std::size_t> v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
  }

 private:
  std::shared_ptr<const Frame> frame_;
  int R_ = 0;
  int P_ = 0;
  std::vector<std::int64_t> anchors_;
};

struct WindowLimits {
  int max_R = 30;
  int max_P = 10;
};

inline void check_horizons(int R, int P, const WindowLimits& lim) {
  if (R < 1 || R > lim.max_R) throw UsageError("R must lie in [1, " + std::to_string(lim.max_R) + "]");
  if (P < 1 || P > lim.max_P) throw UsageError("P must lie in [1, " + std::to_string(lim.max_P) + "]");
}

/// Anchors of the valid windows fully inside grid indices [begin, end).
/// With `align_P` > 0 the validity span is widened so that the set of target
/// steps is the same for every P <= align_P.
inline std::vector<std::int64_t> window_anchors(const Frame& fr, int R, int P, std::int64_t begin, std::int64_t end,
                                                int align_P = 0) {
  std::vector<std::int64_t> out;
  const int ipd = fr.grid.intervals_per_day();
  const std::int64_t back = static_cast<std::int64_t>(R) - 1 + std::max(align_P, P);  // target - earliest input
  for (std::int64_t target = begin + back; target < end; ++target) {
    const auto t = target - P;
    const auto lo = target - back;
    const auto hi = align_P > 0 ? target - 1 : t;
    bool ok = fr.target_ok[static_cast<std::size_t>(target)] != 0;
    for (auto u = lo; ok && u <= hi; ++u) ok = fr.input_ok[static_cast<std::size_t>(u)] != 0;
    for (auto d = lo / ipd; ok && d <= target / ipd; ++d) ok = fr.bad_day[static_cast<std::size_t>(d)] == 0;
    if (ok) out.push_back(t);
  }
  return out;
}

/// Supervised windows over one date range: n - R - P + 1 per contiguous
/// segment, minus windows touching unusable cells or unreliable days.
inline WindowSet build_windows(std::shared_ptr<const Frame> frame, int R, int P, const DateRange& range,
                               const WindowLimits& lim = {}, int align_P = 0) {
  check_horizons(R, P, lim);
  auto [b, e] = frame->grid.index_range(range);
  auto anchors = window_anchors(*frame, R, P, b, e, align_P);
  return WindowSet(std::move(frame), R, P, std::move(anchors));
}

inline WindowSet build_windows(const SeriesStore& store, int R, int P, const FeatureSet& fs, const DateRange& range,
                               const WindowLimits& lim = {}) {
  return build_windows(make_frame(store, fs), R, P, range, lim);
}

/// Windows from several ranges concatenated in range order.
inline WindowSet build_windows(std::shared_ptr<const Frame> frame, int R, int P, const std::vector<DateRange>& ranges,
                               const WindowLimits& lim = {}, int align_P = 0) {
  check_horizons(R, P, lim);
  std::vector<std::int64_t> anchors;
  for (const auto& r : ranges) {
    auto [b, e] = frame->grid.index_range(r);
    auto part = window_anchors(*frame, R, P, b, e, align_P);
    anchors.insert(anchors.end(), part.begin(), part.end());
  }
  return WindowSet(std::move(frame), R, P, std::move(anchors));
}

struct SplitSpec {
  std::vector<DateRange> train;
  std::vector<DateRange> validation;
  std::vector<DateRange> test;
  /// When positive, test targets are fixed across every P up to this value.
  int align_test_P = 0;
  bool normalize = true;
};

/// Chronological 60/20/20 split by whole days.
inline SplitSpec default_split(const TimeGrid& g) {
  const auto days = g.day_count();
  if (days < 3) throw DataError("need at least three days for a default split");
  const auto train = std::max<std::int64_t>(1, days * 6 / 10);
  const auto val = std::max<std::int64_t>(1, days * 2 / 10);
  const Date d0 = g.first_day();
  auto day = [&](std::int64_t k) { return d0 + std::chrono::days{k}; };
  SplitSpec s;
  s.train = {{day(0), day(train - 1)}};
  s.validation = {{day(train), day(train + val - 1)}};
  s.test = {{day(train + val), day(days - 1)}};
  return s;
}

struct DatasetSplit {
  WindowSet train;
  WindowSet validation;
  WindowSet test;
  Normalization normalization;
};

namespace detail {

/// Two-pass mean and population std over the steps flagged in `used`;
/// a degenerate spread falls back to 1.
template <class Get>
void masked_stats(const std::vector<std::uint8_t>& used, Get get, double& mean, double& sd) {
  double sum = 0.0, n = 0.0;
  for (std::size_t t = 0; t < used.size(); ++t) {
    if (used[t]) {
      sum += get(t);
      n += 1.0;
    }
  }
  if (n == 0.0) return;
  mean = sum / n;
  double ss = 0.0;
  for (std::size_t t = 0; t < used.size(); ++t) {
    if (used[t]) ss += (get(t) - mean) * (get(t) - mean);
  }
  sd = std::sqrt(ss / n);
  if (!std::isfinite(sd) || sd <= 1e-12 * std::max(1.0, std::abs(mean))) sd = 1.0;
}

}  // namespace detail

/// Statistics over every input cell and target covered by `ws`.
inline Normalization fit_normalization(const WindowSet& ws) {
  const auto& fr = ws.frame();
  Normalization nz = Normalization::identity(fr.N, fr.F);
  std::vector<std::uint8_t> in_used(static_cast<std::size_t>(fr.T()), 0), out_used(static_cast<std::size_t>(fr.T()), 0);
  for (auto a : ws.anchors()) {
    for (auto t = a - ws.R() + 1; t <= a; ++t) in_used[static_cast<std::size_t>(t)] = 1;
    out_used[static_cast<std::size_t>(a + ws.P())] = 1;
  }
  for (std::size_t f = 0; f < fr.F; ++f) {
    for (std::size_t n = 0; n < fr.N; ++n) {
      detail::masked_stats(in_used, [&](std::size_t t) { return fr.input(static_cast<std::int64_t>(t), f, n); },
                           nz.in_mean[f * fr.N + n], nz.in_std[f * fr.N + n]);
    }
  }
  for (std::size_t n = 0; n < fr.N; ++n) {
    detail::masked_stats(out_used, [&](std::size_t t) { return fr.flow(static_cast<std::int64_t>(t), n); }, nz.out_mean[n],
                         nz.out_std[n]);
  }
  return nz;
}

inline void check_disjoint(const SplitSpec& spec) {
  std::vector<DateRange> all;
  for (const auto* part : {&spec.train, &spec.validation, &spec.test}) {
    for (const auto& r : *part) {
      if (r.last < r.first) throw UsageError("date range " + format_date(r.first) + ".." + format_date(r.last) + " is reversed");
      for (const auto& o : all) {
        if (o.overlaps(r)) throw UsageError("split date ranges overlap");
      }
      all.push_back(r);
    }
  }
}

inline DatasetSplit make_split(std::shared_ptr<const Frame> frame, int R, int P, const SplitSpec& spec,
                               const WindowLimits& lim = {}) {
  check_disjoint(spec);
  DatasetSplit out;
  out.train = build_windows(frame, R, P, spec.train, lim);
  if (out.train.empty()) throw DataError("empty train split");
  out.validation = build_windows(frame, R, P, spec.validation, lim);
  out.test = build_windows(frame, R, P, spec.test, lim, spec.align_test_P);
  out.normalization = spec.normalize ? fit_normalization(out.train) : Normalization::identity(frame->N, frame->F);
  return out;
}

inline DatasetSplit make_split(const SeriesStore& store, int R, int P, const FeatureSet& fs, const SplitSpec& spec,
                               const WindowLimits& lim = {}) {
  return make_split(make_frame(store, fs), R, P, spec, lim);
}

}  // namespace loopflow
