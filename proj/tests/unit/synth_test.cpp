#include <gtest/gtest.h>

#include <set>

#include "loopflow/synth.hpp"

using namespace loopflow;

namespace {

SynthSpec one_week(double noise, std::uint64_t seed = 7) {
  SynthSpec s;
  s.weeks = 1;
  s.noise_std = noise;
  s.seed = seed;
  return s;
}

std::map<std::string, double> flows_at(const MotorwayTopology& topo, const SeriesStore& s, std::int64_t t) {
  std::map<std::string, double> out;
  for (const auto& id : topo.ids()) out[id] = s.value(s.station_index(id), Feature::flow, t);
  return out;
}

}  // namespace

TEST(Synth, NoiseFreeFlowsConserveExactly) {
  const auto c = generate(one_week(0.0));
  ASSERT_EQ(c.topology.relations().size(), 2u * 7u);
  for (std::int64_t t = 0; t < c.store.time_count(); ++t) {
    const auto flows = flows_at(c.topology, c.store, t);
    for (auto rel : c.topology.relations()) {
      rel.epsilon = EpsilonPolicy::absolute(0.0);
      ASSERT_EQ(check_conservation(flows, rel).verdict, Verdict::pass) << rel.whole << " at " << t;
    }
  }
}

TEST(Synth, FlowsAreWholeVehicleCountsAndFeaturesArePlausible) {
  const auto c = generate(one_week(0.05));
  const auto& s = c.store;
  for (std::size_t n = 0; n < s.station_count(); ++n) {
    for (std::int64_t t = 0; t < s.time_count(); t += 7) {
      const double f = s.value(n, Feature::flow, t);
      EXPECT_EQ(f, std::round(f));
      EXPECT_GE(f, 0.0);
      EXPECT_GT(s.value(n, Feature::speed, t), 0.0);
      EXPECT_LE(s.value(n, Feature::speed, t), 130.0);
      EXPECT_GE(s.value(n, Feature::occupancy, t), 0.0);
      EXPECT_LE(s.value(n, Feature::occupancy, t), 100.0);
    }
  }
  EXPECT_EQ(s.missing_record_count(), 0u);
}

TEST(Synth, WeekdaysHaveTwoPeaksWeekendsOne) {
  const auto c = generate(one_week(0.0));
  const auto& s = c.store;
  const auto n = s.station_index("4A");
  auto argmax = [&](std::int64_t day, int from_min, int to_min) {
    std::int64_t best = day * 480 + from_min / 3;
    for (std::int64_t t = best; t < day * 480 + to_min / 3; ++t) {
      if (s.value(n, Feature::flow, t) > s.value(n, Feature::flow, best)) best = t;
    }
    return best;
  };
  for (int d = 0; d < 5; ++d) {
    const auto am = argmax(d, 0, 720), pm = argmax(d, 720, 1440);
    EXPECT_GE((pm - am) * 3, 240) << "day " << d;
    const auto noon = d * 480 + 13 * 20;
    EXPECT_GT(s.value(n, Feature::flow, am), 1.2 * s.value(n, Feature::flow, noon));
    EXPECT_GT(s.value(n, Feature::flow, pm), 1.2 * s.value(n, Feature::flow, noon));
  }
  for (int d = 5; d < 7; ++d) {
    const auto peak = argmax(d, 0, 1440);
    const int minute = static_cast<int>(peak - d * 480) * 3;
    EXPECT_GE(minute, 11 * 60);
    EXPECT_LE(minute, 16 * 60);
  }
}

TEST(Synth, SeededAndReproducible) {
  const auto a = generate(one_week(0.05, 3)), b = generate(one_week(0.05, 3)), c = generate(one_week(0.05, 4));
  EXPECT_TRUE(a.store == b.store);
  EXPECT_FALSE(a.store == c.store);
  EXPECT_EQ(a.topology.ids(), c.topology.ids());
}

TEST(Synth, InfeasibleOrInvalidSpecs) {
  auto s = one_week(0.0);
  s.ramps = {{Direction::a_south, StationKind::exit, 3, 1.0}};
  EXPECT_THROW(generate(s), DataError);
  s = one_week(0.0);
  s.ramps = {{Direction::a_south, StationKind::exit, 1, 0.1}};
  EXPECT_THROW(generate(s), UsageError);
  s = one_week(0.0);
  s.drift_min = 2.0;
  EXPECT_THROW(generate(s), UsageError);
}

TEST(Injection, UntouchedCellsAreIdenticalAndTruthIsRecorded) {
  const auto c = generate(one_week(0.05));
  AnomalyPlan plan;
  plan.missing_blocks = 10;
  plan.zero_blocks = 10;
  plan.high_cells = 20;
  const auto r = inject_anomalies(c.store, plan, 11);
  std::set<std::tuple<std::size_t, int, std::int64_t>> masked;
  for (const auto& m : r.truth.mask) {
    masked.insert({m.station, static_cast<int>(m.feature), m.t});
    EXPECT_EQ(m.truth, c.store.value(m.station, m.feature, m.t));
    switch (m.kind) {
      case AnomalyKind::missing: EXPECT_TRUE(std::isnan(r.corrupted.value(m.station, m.feature, m.t))); break;
      case AnomalyKind::zero: EXPECT_EQ(r.corrupted.value(m.station, m.feature, m.t), 0.0); break;
      case AnomalyKind::high: EXPECT_DOUBLE_EQ(r.corrupted.value(m.station, m.feature, m.t), 8.0 * m.truth); break;
      default: ADD_FAILURE();
    }
  }
  EXPECT_EQ(masked.size(), r.truth.mask.size());
  std::size_t highs = 0;
  for (const auto& m : r.truth.mask) highs += m.kind == AnomalyKind::high;
  EXPECT_EQ(highs, 20u);
  for (std::size_t n = 0; n < c.store.station_count(); ++n) {
    for (Feature f : kAllFeatures) {
      for (std::int64_t t = 0; t < c.store.time_count(); ++t) {
        if (!masked.count({n, static_cast<int>(f), t})) {
          ASSERT_EQ(r.corrupted.value(n, f, t), c.store.value(n, f, t));
        }
      }
    }
  }
  EXPECT_TRUE(r.truth.clean == c.store);
}

TEST(Injection, ExplicitThreeHourZeroBlock) {
  const auto c = generate(one_week(0.0));
  AnomalyPlan plan;
  plan.explicit_injections = {{"2A", parse_timestamp("2017-02-07T09:00:00"), 60, AnomalyKind::zero}};
  const auto r = inject_anomalies(c.store, plan, 1);
  EXPECT_EQ(r.truth.mask.size(), 180u);
  const auto n = c.store.station_index("2A");
  const auto t0 = 480 + 9 * 20;
  for (std::int64_t t = t0; t < t0 + 60; ++t) EXPECT_EQ(r.corrupted.value(n, Feature::speed, t), 0.0);
  EXPECT_NE(r.corrupted.value(n, Feature::flow, t0 + 60), 0.0);
  EXPECT_NE(r.corrupted.value(n, Feature::flow, t0 - 1), 0.0);
}

TEST(Injection, OverlapsAndBadPlacementsAreRejected) {
  const auto c = generate(one_week(0.0));
  AnomalyPlan plan;
  plan.explicit_injections = {{"2A", parse_timestamp("2017-02-07T09:00:00"), 10, AnomalyKind::zero},
                              {"2A", parse_timestamp("2017-02-07T09:27:00"), 5, AnomalyKind::missing}};
  EXPECT_THROW(inject_anomalies(c.store, plan, 1), DataError);
  plan.explicit_injections = {{"2A", parse_timestamp("2017-02-07T09:01:00"), 1, AnomalyKind::high}};
  EXPECT_THROW(inject_anomalies(c.store, plan, 1), DataError);
  plan.explicit_injections = {{"2A", parse_timestamp("2017-02-12T23:57:00"), 2, AnomalyKind::high}};
  EXPECT_THROW(inject_anomalies(c.store, plan, 1), DataError);
  plan.explicit_injections = {{"2A", parse_timestamp("2017-02-07T09:00:00"), 2, AnomalyKind::high},
                              {"3A", parse_timestamp("2017-02-07T09:00:00"), 2, AnomalyKind::high}};
  EXPECT_NO_THROW(inject_anomalies(c.store, plan, 1));
}

TEST(SynthSpecJson, ReadsFieldsAndValidates) {
  const auto s = synth_spec_from_json(nlohmann::json::parse(R"({
    "n_mainline": 5, "weeks": 2, "seed": 9, "noise_std": 0.1,
    "ramps": [{"direction": "B", "kind": "exit", "closing": 3, "share": 0.25}],
    "anomalies": {"zero_blocks": 4, "high_cells": 2}
  })"));
  EXPECT_EQ(s.n_mainline, 5);
  EXPECT_EQ(s.weeks, 2);
  EXPECT_EQ(s.seed, 9u);
  ASSERT_EQ(s.ramps.size(), 1u);
  EXPECT_EQ(s.ramps[0].direction, Direction::b_north);
  EXPECT_DOUBLE_EQ(s.ramps[0].share, 0.25);
  EXPECT_EQ(s.anomalies.zero_blocks, 4);
  EXPECT_EQ(s.anomalies.high_cells, 2);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"ramps":[{"direction":"C","kind":"exit","closing":2}]})")),
               DataError);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"anomalies":{"high_factor":2}})")), DataError);
  EXPECT_THROW(synth_spec_from_json(nlohmann::json::parse(R"({"weeks":"many"})")), DataError);
}
