#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "loopflow/profiles.hpp"

using namespace loopflow;

namespace {

const Date kMonday{std::chrono::year{2017} / 2 / 6};

// Three weeks, one station, every cell observed as `value(day, slot, feature)`.
template <class F>
SeriesStore filled(int days, F value) {
  SeriesStore s(TimeGrid(kMonday, days), {"1A"});
  const auto& g = s.grid();
  for (std::int64_t t = 0; t < g.size(); ++t) {
    for (Feature f : kAllFeatures) s.set_observed(0, f, t, value(g.day_index(t), g.slot_of_day(t), f));
  }
  return s;
}

// Sorted-sample percentile by linear interpolation, written independently.
double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const double lo = v[static_cast<std::size_t>(h)];
  const double hi = v[std::min(v.size() - 1, static_cast<std::size_t>(h) + 1)];
  return lo + (h - std::floor(h)) * (hi - lo);
}

}  // namespace

TEST(Stats, PercentileHandValues) {
  EXPECT_DOUBLE_EQ(stats::percentile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(stats::percentile({1.0, 2.0, 3.0, 4.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(stats::percentile({10.0, 20.0, 30.0}, 0.2), 14.0);
  EXPECT_DOUBLE_EQ(stats::percentile({10.0, 20.0, 30.0}, 0.8), 26.0);
  EXPECT_DOUBLE_EQ(stats::percentile({7.0}, 0.8), 7.0);
  EXPECT_TRUE(std::isnan(stats::percentile({}, 0.5)));
}

TEST(Stats, PercentileMatchesOracleOnRandomSamples) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v(1 + k % 17);
    for (auto& x : v) x = u(rng);
    for (double q : {0.0, 0.2, 0.5, 0.8, 1.0}) EXPECT_NEAR(stats::percentile(v, q), oracle_percentile(v, q), 1e-12);
  }
}

TEST(Stats, MadScale) {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0, 100.0};
  // median 3, deviations {2,1,0,1,97} -> median 1
  EXPECT_DOUBLE_EQ(stats::mad_scale(v, 3.0), 1.4826);
}

TEST(Profiles, SlotStatisticsAgainstHandValues) {
  // Mondays are days 0, 7 and 14; slot 100 flows are 10, 20, 60.
  const double mondays[3] = {10.0, 20.0, 60.0};
  auto s = filled(21, [&](std::int64_t d, int slot, Feature f) {
    if (f != Feature::flow) return 50.0;
    if (d % 7 == 0 && slot == 100) return mondays[d / 7];
    return 1.0;
  });
  const auto p = build_profile(s, 0, Weekday::mon, Feature::flow, full_range(s));
  EXPECT_EQ(p.source_weeks, 3);
  EXPECT_EQ(p.samples[100], 3);
  EXPECT_DOUBLE_EQ(p.mean[100], 30.0);
  EXPECT_DOUBLE_EQ(p.median[100], 20.0);
  EXPECT_NEAR(p.std[100], std::sqrt((400.0 + 100.0 + 900.0) / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(p.p20[100], 14.0);
  EXPECT_DOUBLE_EQ(p.p80[100], 44.0);
  EXPECT_DOUBLE_EQ(p.spread[100], 1.4826 * 10.0);
  EXPECT_DOUBLE_EQ(p.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(p.std[0], 0.0);
}

TEST(Profiles, AnomalousCellsAndUnreliableDaysAreExcluded) {
  auto s = filled(21, [](std::int64_t d, int, Feature) { return static_cast<double>(d + 1); });
  s.flag(0, Feature::flow, 7 * 480 + 5, AnomalyKind::high);  // second Monday, slot 5
  s.mark_unreliable(0, 14);                                   // third Monday
  const auto p = build_profile(s, 0, Weekday::mon, Feature::flow, full_range(s));
  EXPECT_EQ(p.samples[5], 1);
  EXPECT_DOUBLE_EQ(p.mean[5], 1.0);
  EXPECT_EQ(p.samples[6], 2);
  EXPECT_DOUBLE_EQ(p.mean[6], 4.5);
}

TEST(Profiles, SlotWithoutSamplesIsAbsent) {
  SeriesStore s(TimeGrid(kMonday, 7), {"1A"});
  s.set_observed(0, Feature::flow, 3, 4.0);
  const auto p = build_profile(s, 0, Weekday::mon, Feature::flow, full_range(s));
  EXPECT_TRUE(p.present(3));
  EXPECT_FALSE(p.present(4));
  EXPECT_TRUE(std::isnan(p.mean[4]));
}

TEST(Profiles, RangeWithoutTheWeekdayIsAnError) {
  auto s = filled(7, [](std::int64_t, int, Feature) { return 1.0; });
  const DateRange tue_only{kMonday + std::chrono::days{1}, kMonday + std::chrono::days{1}};
  EXPECT_THROW(build_profile(s, 0, Weekday::mon, Feature::flow, tue_only), DataError);
  const auto set = build_profiles(s, tue_only);
  EXPECT_EQ(set.size(), 3u);  // one weekday, three features
  EXPECT_EQ(set.find(0, Weekday::mon, Feature::flow), nullptr);
}

TEST(Profiles, CsvRoundTrip) {
  auto s = filled(14, [](std::int64_t d, int slot, Feature f) {
    return static_cast<double>((d * 31 + slot * 7 + static_cast<int>(f)) % 53) / 3.0;
  });
  s.flag(0, Feature::speed, 480 + 9, AnomalyKind::zero);
  s.write_fix(0, Feature::speed, 480 + 9, 0.0, CellFix::repaired);
  const auto set = build_profiles(s, full_range(s));
  std::stringstream io;
  write_profiles(io, set);
  const auto back = read_profiles(io, s.stations(), 480);
  ASSERT_EQ(back.size(), set.size());
  for (const auto& [key, p] : set) {
    const auto& q = back.at(std::get<0>(key), std::get<1>(key), std::get<2>(key));
    EXPECT_EQ(q.samples, p.samples);
    EXPECT_EQ(q.source_weeks, p.source_weeks);
    for (std::size_t k = 0; k < p.slots(); ++k) {
      EXPECT_DOUBLE_EQ(q.mean[k], p.mean[k]);
      EXPECT_DOUBLE_EQ(q.spread[k], p.spread[k]);
    }
  }
}

TEST(Profiles, ReadRejectsBadFiles) {
  std::stringstream a("nope\n");
  EXPECT_THROW(read_profiles(a, {"1A"}, 480), DataError);
  std::stringstream b(std::string(kProfileHeader) + "\n9Z,mon,flow,0,1,1,1,0,1,1,0,1\n");
  EXPECT_THROW(read_profiles(b, {"1A"}, 480), DataError);
  std::stringstream c(std::string(kProfileHeader) + "\n1A,mon,flow,480,1,1,1,0,1,1,0,1\n");
  EXPECT_THROW(read_profiles(c, {"1A"}, 480), DataError);
}

TEST(Capacity, ConfiguredOrLargestCleanFlow) {
  MotorwayTopology topo({{"1A", Direction::a_south, StationKind::mainline, 0, 120.0, ""},
                         {"2A", Direction::a_south, StationKind::mainline, 10, std::nullopt, ""}});
  SeriesStore s(TimeGrid(kMonday, 1), topo.ids());
  for (std::int64_t t = 0; t < 480; ++t) {
    for (std::size_t n = 0; n < 2; ++n) {
      for (Feature f : kAllFeatures) s.set_observed(n, f, t, static_cast<double>(t % 90));
    }
  }
  s.set_observed(1, Feature::flow, 5, 500.0);
  s.flag(1, Feature::flow, 5, AnomalyKind::high);
  const auto cap = resolve_capacities(topo, s);
  EXPECT_DOUBLE_EQ(cap[0], 120.0);
  EXPECT_DOUBLE_EQ(cap[1], 89.0);
}

TEST(Congestion, RatioIsClampedAndAbsentIsNan) {
  auto s = filled(7, [](std::int64_t, int slot, Feature) { return slot < 10 ? 300.0 : 50.0; });
  const auto set = build_profiles(s, full_range(s));
  const auto m = congestion_map(set, {200.0}, Weekday::mon);
  EXPECT_DOUBLE_EQ(m.ratio[0][0], 1.0);
  EXPECT_DOUBLE_EQ(m.ratio[0][20], 0.25);
  EXPECT_THROW(congestion_map(set, {0.0}, Weekday::mon), DataError);
  EXPECT_THROW(congestion_map(set, {1.0, 2.0}, Weekday::mon), UsageError);
}

TEST(SpeedFlow, ClassifierCases) {
  SpeedFlowRegions r;
  r.flow_low = 20;
  r.flow_high = 140;
  r.occ_low = 2;
  EXPECT_EQ(classify_speed_flow({10, 30, 1}, r), Region::a5);
  EXPECT_EQ(classify_speed_flow({10, 30, 3}, r), Region::a3);
  EXPECT_EQ(classify_speed_flow({150, 90, 10}, r), Region::a2);
  EXPECT_EQ(classify_speed_flow({150, 50, 30}, r), Region::a4);
  EXPECT_EQ(classify_speed_flow({100, 90, 10}, r), Region::a1);
  EXPECT_EQ(classify_speed_flow({100, 30, 10}, r), Region::a3);
  // boundaries: flow_high belongs to the high side, speed_low to the fast side
  EXPECT_EQ(classify_speed_flow({140, 80, 10}, r), Region::a2);
  EXPECT_EQ(classify_speed_flow({100, 40, 10}, r), Region::a1);
}

TEST(SpeedFlowProperty, ClassificationIsTotal) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto r = default_regions(200.0, {1.0, 2.0, 3.0, 4.0});
  for (int k = 0; k < 2000; ++k) {
    const auto reg = classify_speed_flow({250 * u(rng), 120 * u(rng), 40 * u(rng)}, r);
    EXPECT_GE(static_cast<int>(reg), 1);
    EXPECT_LE(static_cast<int>(reg), 5);
  }
}

TEST(SpeedFlow, DefaultRegionsFromCapacity) {
  const auto r = default_regions(200.0, {5.0, 1.0, 3.0, 2.0, 4.0});
  EXPECT_DOUBLE_EQ(r.flow_low, 20.0);
  EXPECT_DOUBLE_EQ(r.flow_high, 140.0);
  EXPECT_DOUBLE_EQ(r.flow_capacity, 200.0);
  EXPECT_DOUBLE_EQ(r.occ_low, 1.4);
}
