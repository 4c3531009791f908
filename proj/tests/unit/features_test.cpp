#include <gtest/gtest.h>

#include <set>

#include "loopflow/features.hpp"

using namespace loopflow;

namespace {

const Date kMonday{std::chrono::year{2017} / 2 / 6};

// Feature f of station n at step t is 1000*f + 100*n + (t % 100): every cell
// is distinguishable, so layouts can be checked by value.
double code(std::size_t f, std::size_t n, std::int64_t t) { return 1000.0 * f + 100.0 * n + static_cast<double>(t % 100); }

SeriesStore coded(int days, std::size_t stations) {
  std::vector<std::string> ids;
  for (std::size_t n = 0; n < stations; ++n) ids.push_back(std::to_string(n + 1) + "A");
  SeriesStore s(TimeGrid(kMonday, days), ids);
  for (std::size_t n = 0; n < stations; ++n) {
    for (std::int64_t t = 0; t < s.time_count(); ++t) {
      for (std::size_t f = 0; f < 3; ++f) s.set_observed(n, kAllFeatures[f], t, code(f, n, t));
    }
  }
  return s;
}

DateRange day(int k) { return {kMonday + std::chrono::days{k}, kMonday + std::chrono::days{k}}; }

// Windows counted by brute force: every target whose inputs and target lie in
// [b, e) and are all usable.
std::size_t brute_force_count(const Frame& fr, int R, int P, std::int64_t b, std::int64_t e) {
  std::size_t n = 0;
  for (auto t = b + R - 1; t + P < e; ++t) {
    bool ok = fr.target_ok[static_cast<std::size_t>(t + P)] != 0;
    for (auto u = t - R + 1; u <= t; ++u) ok = ok && fr.input_ok[static_cast<std::size_t>(u)];
    n += ok;
  }
  return n;
}

}  // namespace

TEST(FeatureSet, ParseCanonicalisesOrder) {
  EXPECT_EQ(FeatureSet::parse("of").code(), "fo");
  EXPECT_EQ(FeatureSet::parse("fsof").size(), 3u);
  EXPECT_THROW(FeatureSet::parse("x"), UsageError);
  EXPECT_THROW(FeatureSet::parse(""), UsageError);
  EXPECT_EQ(FeatureSet::all_combinations().size(), 7u);
}

TEST(Windows, FiveStepSeriesCounts) {
  auto fr = make_frame(coded(1, 1), FeatureSet::parse("f"));
  EXPECT_EQ(window_anchors(*fr, 2, 1, 0, 5).size(), 3u);
  EXPECT_EQ(window_anchors(*fr, 3, 2, 0, 5).size(), 1u);
  EXPECT_EQ(window_anchors(*fr, 1, 1, 0, 5).size(), 4u);
  EXPECT_EQ(window_anchors(*fr, 4, 2, 0, 5).size(), 0u);
  EXPECT_EQ(window_anchors(*fr, 2, 1, 0, 5).front(), 1);  // last input step of the first pair
}

TEST(Windows, CountFormulaOverAWholeDay) {
  auto fr = make_frame(coded(2, 2), FeatureSet::parse("fs"));
  for (int R : {1, 5, 30}) {
    for (int P : {1, 4, 10}) {
      const auto ws = build_windows(fr, R, P, day(1));
      EXPECT_EQ(ws.size(), static_cast<std::size_t>(480 - R - P + 1));
      EXPECT_EQ(ws.anchor(0), 480 + R - 1);
    }
  }
}

TEST(Windows, UnusableCellsRemoveEveryWindowTouchingThem) {
  auto s = coded(1, 2);
  s.flag(1, Feature::speed, 100, AnomalyKind::high);  // an input feature
  s.flag(0, Feature::flow, 300, AnomalyKind::zero);   // a target
  auto fr = make_frame(s, FeatureSet::parse("fs"));
  for (int R : {1, 3, 7}) {
    for (int P : {1, 2, 5}) {
      const auto a = window_anchors(*fr, R, P, 0, 480);
      EXPECT_EQ(a.size(), brute_force_count(*fr, R, P, 0, 480));
      for (auto t : a) {
        EXPECT_FALSE(t - R + 1 <= 100 && 100 <= t);
        EXPECT_NE(t + P, 300);
      }
    }
  }
  // speed is not in a flow-only frame, so only the flow gap matters there
  auto fo = make_frame(s, FeatureSet::parse("f"));
  EXPECT_EQ(window_anchors(*fo, 1, 1, 0, 480).size(), 479u - 2u);
}

TEST(Windows, RepairedCellsAreUsable) {
  auto s = coded(1, 1);
  s.flag(0, Feature::flow, 50, AnomalyKind::high);
  s.write_fix(0, Feature::flow, 50, 7.0, CellFix::repaired);
  auto fr = make_frame(s, FeatureSet::parse("f"));
  EXPECT_EQ(window_anchors(*fr, 2, 1, 0, 480).size(), 478u);
  EXPECT_DOUBLE_EQ(fr->flow(50, 0), 7.0);
}

TEST(Windows, UnreliableDaysAreSkipped) {
  auto s = coded(3, 2);
  s.mark_unreliable(1, 1);
  auto fr = make_frame(s, FeatureSet::parse("f"));
  const auto ws = build_windows(fr, 3, 1, std::vector<DateRange>{{kMonday, kMonday + std::chrono::days{2}}});
  for (auto a : ws.anchors()) {
    EXPECT_TRUE(a + 1 < 480 || a - 2 >= 960);
  }
  EXPECT_EQ(ws.size(), 2u * (480 - 3));
}

TEST(Windows, MaterialisedWindowLayout) {
  auto fr = make_frame(coded(1, 3), FeatureSet::parse("fso"));
  const auto ws = build_windows(fr, 4, 2, day(0));
  const auto w = ws.window(10);
  const auto t = ws.anchor(10);
  EXPECT_EQ(w.t_index, t);
  for (int r = 0; r < 4; ++r) {
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t f = 0; f < 3; ++f) EXPECT_DOUBLE_EQ(w.at(r, n, f), code(f, n, t - 3 + r));
    }
  }
  for (std::size_t n = 0; n < 3; ++n) EXPECT_DOUBLE_EQ(w.target[n], code(0, n, t + 2));
}

TEST(Windows, ImageAndSequenceBatches) {
  auto fr = make_frame(coded(1, 3), FeatureSet::parse("fo"));
  const auto ws = build_windows(fr, 4, 1, day(0));
  const auto id = Normalization::identity(3, 2);
  const std::vector<std::size_t> idx{5, 9};
  nn::Mat img, seq;
  ws.fill_inputs(idx, Layout::image, id, img);
  ws.fill_inputs(idx, Layout::sequence, id, seq);
  ASSERT_EQ(img.rows(), 2);
  ASSERT_EQ(img.cols(), 2 * 4 * 3);
  ASSERT_EQ(seq.rows(), 4 * 2);
  ASSERT_EQ(seq.cols(), 2 * 3);
  const std::size_t fcode[2] = {0, 2};  // flow, occupancy
  for (std::size_t b = 0; b < 2; ++b) {
    const auto t = ws.anchor(idx[b]);
    for (std::size_t f = 0; f < 2; ++f) {
      for (int r = 0; r < 4; ++r) {
        for (std::size_t n = 0; n < 3; ++n) {
          const double want = code(fcode[f], n, t - 3 + r);
          EXPECT_DOUBLE_EQ(img(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>((f * 4 + static_cast<std::size_t>(r)) * 3 + n)), want);
          EXPECT_DOUBLE_EQ(seq(r * 2 + static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f * 3 + n)), want);
        }
      }
    }
  }
  nn::Mat y;
  ws.fill_targets(idx, nullptr, y);
  EXPECT_DOUBLE_EQ(y(1, 2), code(0, 2, ws.anchor(9) + 1));
}

TEST(Normalization, StatisticsOverCoveredCellsOnly) {
  auto fr = make_frame(coded(2, 2), FeatureSet::parse("fs"));
  const auto ws = build_windows(fr, 2, 1, day(0));
  const auto nz = fit_normalization(ws);
  // inputs cover steps 0..478, values t % 100 + offsets
  double sum = 0.0, ss = 0.0;
  for (int t = 0; t <= 478; ++t) sum += t % 100;
  const double mean = sum / 479.0;
  for (int t = 0; t <= 478; ++t) ss += (t % 100 - mean) * (t % 100 - mean);
  const double sd = std::sqrt(ss / 479.0);
  EXPECT_NEAR(nz.in_mean[0 * 2 + 1], 100.0 + mean, 1e-9);
  EXPECT_NEAR(nz.in_mean[1 * 2 + 0], 1000.0 + mean, 1e-9);
  EXPECT_NEAR(nz.in_std[1 * 2 + 1], sd, 1e-9);
  EXPECT_NEAR(nz.denormalize_input(nz.normalize_input(123.0, 1, 0), 1, 0), 123.0, 1e-12);
  EXPECT_NEAR(nz.denormalize_target(nz.normalize_target(55.0, 1), 1), 55.0, 1e-12);
}

TEST(Normalization, ConstantSeriesKeepsUnitScale) {
  SeriesStore s(TimeGrid(kMonday, 1), {"1A"});
  for (std::int64_t t = 0; t < 480; ++t) {
    for (Feature f : kAllFeatures) s.set_observed(0, f, t, 42.0);
  }
  const auto ws = build_windows(make_frame(s, FeatureSet::parse("f")), 3, 1, day(0));
  const auto nz = fit_normalization(ws);
  EXPECT_DOUBLE_EQ(nz.in_std[0], 1.0);
  EXPECT_DOUBLE_EQ(nz.normalize_input(42.0, 0, 0), 0.0);
}

TEST(Split, RangesMustBeDisjointAndTrainNonEmpty) {
  const auto s = coded(6, 1);
  SplitSpec bad;
  bad.train = {{kMonday, kMonday + std::chrono::days{2}}};
  bad.validation = {day(2)};
  EXPECT_THROW(make_split(s, 2, 1, FeatureSet::parse("f"), bad), UsageError);
  SplitSpec empty;
  empty.train = {{kMonday + std::chrono::days{20}, kMonday + std::chrono::days{21}}};
  EXPECT_THROW(make_split(s, 2, 1, FeatureSet::parse("f"), empty), DataError);
  EXPECT_THROW(make_split(s, 31, 1, FeatureSet::parse("f"), default_split(s.grid())), UsageError);
  EXPECT_THROW(make_split(s, 2, 11, FeatureSet::parse("f"), default_split(s.grid())), UsageError);
}

TEST(Split, DefaultSplitIsChronologicalSixtyTwentyTwenty) {
  const TimeGrid g(kMonday, 10);
  const auto sp = default_split(g);
  EXPECT_EQ(sp.train.front().first, kMonday);
  EXPECT_EQ(sp.train.front().last, kMonday + std::chrono::days{5});
  EXPECT_EQ(sp.validation.front().first, kMonday + std::chrono::days{6});
  EXPECT_EQ(sp.validation.front().last, kMonday + std::chrono::days{7});
  EXPECT_EQ(sp.test.front().first, kMonday + std::chrono::days{8});
  EXPECT_EQ(sp.test.front().last, kMonday + std::chrono::days{9});
  EXPECT_THROW(default_split(TimeGrid(kMonday, 2)), DataError);
}

TEST(Split, NormalisationComesFromTrainOnly) {
  auto s = coded(5, 1);
  SplitSpec sp;
  sp.train = {day(0)};
  sp.test = {day(1)};
  const auto ds = make_split(s, 2, 1, FeatureSet::parse("f"), sp);
  EXPECT_EQ(ds.normalization.in_mean, fit_normalization(ds.train).in_mean);
  sp.normalize = false;
  const auto raw = make_split(s, 2, 1, FeatureSet::parse("f"), sp);
  EXPECT_DOUBLE_EQ(raw.normalization.in_std[0], 1.0);
  EXPECT_DOUBLE_EQ(raw.normalization.in_mean[0], 0.0);
}

TEST(Split, AlignedTestTargetsAreTheSameForEveryHorizon) {
  auto fr = make_frame(coded(2, 1), FeatureSet::parse("f"));
  std::set<std::int64_t> first;
  for (int P = 1; P <= 10; ++P) {
    const auto ws = build_windows(fr, 5, P, std::vector<DateRange>{day(1)}, {}, 10);
    std::set<std::int64_t> targets;
    for (std::size_t i = 0; i < ws.size(); ++i) targets.insert(ws.target_index(i));
    if (P == 1) first = targets;
    EXPECT_EQ(targets, first) << "P=" << P;
  }
  EXPECT_EQ(first.size(), static_cast<std::size_t>(480 - 5 - 10 + 1));
}
