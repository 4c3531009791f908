#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "loopflow/anomaly.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/core/time.hpp"
#include "loopflow/mask.hpp"
#include "loopflow/store.hpp"
#include "loopflow/topology.hpp"

namespace loopflow {

/// An on- or off-ramp on the segment closing at mainline station `closing`
/// (1-based, at least 2) of its direction.
struct RampSpec {
  Direction direction = Direction::a_south;
  StationKind kind = StationKind::exit;
  int closing = 2;
  double share = 0.15;  // exits: fraction of the upstream flow leaving; entries: scale relative to base_flow
};

/// One explicit corruption: `length` consecutive intervals from `start`.
struct Injection {
  std::string station;
  Timestamp start;
  int length = 1;
  AnomalyKind kind = AnomalyKind::missing;
};

/// Randomly placed corruptions, plus explicit ones.
struct AnomalyPlan {
  int missing_blocks = 0;
  int missing_min = 1;
  int missing_max = 40;
  int zero_blocks = 0;
  int zero_min = 1;
  int zero_max = 60;
  int high_cells = 0;
  double high_factor = 8.0;
  double high_after_zero = 0.3;  // share of spikes placed right after a zero run
  std::vector<Injection> explicit_injections;

  bool empty() const {
    return missing_blocks == 0 && zero_blocks == 0 && high_cells == 0 && explicit_injections.empty();
  }
};

struct SynthSpec {
  int n_mainline = 8;  // per direction
  std::vector<RampSpec> ramps = {{Direction::a_south, StationKind::entry, 3, 0.2},
                                 {Direction::a_south, StationKind::exit, 6, 0.15},
                                 {Direction::b_north, StationKind::entry, 4, 0.2},
                                 {Direction::b_north, StationKind::exit, 7, 0.15}};
  Date start = Date{std::chrono::year{2017} / 2 / 6};
  int weeks = 8;
  int interval_minutes = 3;
  std::uint64_t seed = 1;
  double base_flow = 300.0;   // mainline scale, vehicles per interval at shape 1
  double noise_std = 0.05;    // multiplicative lognormal sigma
  double drift_min = 0.8;     // per-day network-wide scale factor range
  double drift_max = 1.3;
  double free_speed = 100.0;
  double critical_ratio = 0.7;
  double peak_ratio = 0.8;    // weekday peak flow on the busiest possible day / capacity
  AnomalyPlan anomalies;

  void validate() const {
    if (n_mainline < 1) throw UsageError("need at least one mainline station per direction");
    if (weeks < 1) throw UsageError("weeks must be positive");
    if (interval_minutes < 1 || 1440 % interval_minutes != 0) throw UsageError("interval must divide a day");
    if (!(noise_std >= 0.0)) throw UsageError("noise_std must be non-negative");
    if (!(drift_min > 0.0 && drift_min <= drift_max)) throw UsageError("bad drift range");
    if (!(base_flow > 0.0)) throw UsageError("base_flow must be positive");
    if (!(critical_ratio > 0.0 && critical_ratio < 1.0)) throw UsageError("critical_ratio must lie in (0, 1)");
    for (const auto& r : ramps) {
      if (r.kind == StationKind::mainline) throw UsageError("ramp kind must be entry or exit");
      if (r.closing < 2 || r.closing > n_mainline) throw UsageError("ramp closing index out of range");
      if (r.kind == StationKind::exit && !(r.share >= 0.0 && r.share < 1.0)) {
        throw DataError("infeasible spec: exit flow would reach or exceed the upstream flow");
      }
      if (r.kind == StationKind::entry && !(r.share >= 0.0)) throw UsageError("entry share must be non-negative");
    }
  }
};

// ---------------------------------------------------------------------------
// Daily shapes (fractions of base_flow).

namespace synth_detail {

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double bump(double m, double centre, double width) { return std::exp(-0.5 * std::pow((m - centre) / width, 2)); }

/// Weekday: two rush-hour peaks (about 08:30 and 17:30) over a daytime plateau.
/// Weekend: one broad midday peak. `m` is the minute of day; `lag` shifts the
/// peaks (ramps and the opposite carriageway differ slightly).
inline double shape(double m, bool weekend, double lag = 0.0, double am = 0.45, double pm = 0.45) {
  const double night = 0.04;
  if (weekend) {
    const double day = logistic((m - 480.0) / 40.0) * logistic((1260.0 - m) / 40.0);
    return night + 0.21 * day + 0.25 * bump(m, 810.0 + lag, 100.0);
  }
  const double day = logistic((m - 360.0) / 30.0) * logistic((1290.0 - m) / 40.0);
  return night + 0.26 * day + am * bump(m, 510.0 + lag, 55.0) + pm * bump(m, 1050.0 + lag, 65.0);
}

inline bool is_weekend(Date d) {
  const auto w = weekday_of(d);
  return w == Weekday::sat || w == Weekday::sun;
}

}  // namespace synth_detail

struct SynthCorpus {
  MotorwayTopology topology;
  SeriesStore store;  // clean
};

inline std::string mainline_id(int k, Direction d) { return std::to_string(k) + to_string(d); }
inline std::string ramp_id(const RampSpec& r) {
  return std::string(r.kind == StationKind::entry ? "E" : "X") + std::to_string(r.closing) + to_string(r.direction);
}

/// Builds the topology and a clean store. Flows are integer vehicle counts
/// that satisfy every conservation relation exactly before noise; speed and
/// occupancy follow the flow/capacity ratio through a piecewise-linear
/// fundamental diagram.
inline SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  using namespace synth_detail;
  const std::chrono::minutes interval{spec.interval_minutes};
  const TimeGrid grid(spec.start, spec.weeks * 7, interval);
  const int ipd = grid.intervals_per_day();

  struct Lane {
    Direction dir;
    double scale;
    double lag;
    double am, pm;
  };
  const Lane lanes[2] = {{Direction::a_south, 1.0, 0.0, 0.50, 0.40}, {Direction::b_north, 0.9, 10.0, 0.40, 0.50}};

  // Station list and noise-free, drift-free weekday flows for the capacities.
  std::vector<Station> stations;
  std::map<std::string, std::vector<double>> series;  // id -> flow over the grid, noise-free
  std::map<std::string, double> weekday_peak;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> udrift(spec.drift_min, spec.drift_max);
  std::vector<double> drift(static_cast<std::size_t>(grid.day_count()));
  for (auto& d : drift) d = spec.drift_min == spec.drift_max ? spec.drift_min : udrift(rng);

  for (const auto& lane : lanes) {
    std::vector<const RampSpec*> ramp_at(static_cast<std::size_t>(spec.n_mainline + 1), nullptr);
    for (const auto& r : spec.ramps) {
      if (r.direction != lane.dir) continue;
      if (ramp_at[static_cast<std::size_t>(r.closing)]) throw UsageError("two ramps on one segment");
      ramp_at[static_cast<std::size_t>(r.closing)] = &r;
    }
    for (int k = 1; k <= spec.n_mainline; ++k) {
      stations.push_back({mainline_id(k, lane.dir), lane.dir, StationKind::mainline, 10 * k, std::nullopt, ""});
      if (const auto* r = ramp_at[static_cast<std::size_t>(k)]) {
        stations.push_back({ramp_id(*r), lane.dir, r->kind, 10 * k - 5, std::nullopt, mainline_id(k, lane.dir)});
      }
    }
    // One pass with drift for the series, one without for capacities.
    for (int pass = 0; pass < 2; ++pass) {
      const bool reference = pass == 1;
      const std::int64_t T = reference ? ipd : grid.size();
      std::vector<double> up(static_cast<std::size_t>(T));
      for (std::int64_t t = 0; t < T; ++t) {
        const double m = grid.minute_of_slot(grid.slot_of_day(t));
        const Date day = reference ? spec.start - std::chrono::days{static_cast<int>(weekday_of(spec.start))} : grid.date_of(t);
        const double dr = reference ? spec.drift_max : drift[static_cast<std::size_t>(grid.day_index(t))];
        up[static_cast<std::size_t>(t)] = std::round(spec.base_flow * lane.scale * dr * shape(m, is_weekend(day), lane.lag, lane.am, lane.pm));
      }
      auto record = [&](const std::string& id, const std::vector<double>& v) {
        if (reference) {
          weekday_peak[id] = *std::max_element(v.begin(), v.end());
        } else {
          series[id] = v;
        }
      };
      record(mainline_id(1, lane.dir), up);
      for (int k = 2; k <= spec.n_mainline; ++k) {
        std::vector<double> down = up;
        if (const auto* r = ramp_at[static_cast<std::size_t>(k)]) {
          std::vector<double> ramp(up.size());
          for (std::int64_t t = 0; t < T; ++t) {
            const auto i = static_cast<std::size_t>(t);
            if (r->kind == StationKind::exit) {
              ramp[i] = std::round(r->share * up[i]);
              down[i] = up[i] - ramp[i];
            } else {
              const double m = grid.minute_of_slot(grid.slot_of_day(t));
              const Date day = reference ? spec.start - std::chrono::days{static_cast<int>(weekday_of(spec.start))} : grid.date_of(t);
              const double dr = reference ? spec.drift_max : drift[static_cast<std::size_t>(grid.day_index(t))];
              ramp[i] = std::round(spec.base_flow * r->share * dr * shape(m, is_weekend(day), lane.lag + 15.0, lane.am, lane.pm));
              down[i] = up[i] + ramp[i];
            }
          }
          record(ramp_id(*r), ramp);
        }
        record(mainline_id(k, lane.dir), down);
        up = std::move(down);
      }
    }
  }
  for (auto& s : stations) s.capacity = std::max(1.0, weekday_peak.at(s.id) / spec.peak_ratio);
  MotorwayTopology topo(stations, EpsilonPolicy{});

  SeriesStore store(grid, topo.ids());
  std::normal_distribution<double> z(0.0, 1.0);
  const double sig = spec.noise_std;
  auto noise = [&] { return sig > 0.0 ? std::exp(sig * z(rng) - 0.5 * sig * sig) : 1.0; };
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    const auto& st = topo.stations()[s];
    const double cap = *st.capacity;
    const auto& q = series.at(st.id);
    for (std::int64_t t = 0; t < grid.size(); ++t) {
      double flow = q[static_cast<std::size_t>(t)];
      if (sig > 0.0) flow = std::round(flow * noise());
      const double r = flow / cap;
      double speed;
      if (r <= spec.critical_ratio) {
        speed = spec.free_speed;
      } else if (r <= 1.0) {
        speed = spec.free_speed - (spec.free_speed - 40.0) * (r - spec.critical_ratio) / (1.0 - spec.critical_ratio);
      } else {
        speed = std::max(20.0, 40.0 - 100.0 * (r - 1.0));
      }
      double occ = 8.0 * r * (spec.free_speed / speed);
      speed *= noise();
      occ *= noise();
      store.set_observed(s, Feature::flow, t, flow);
      store.set_observed(s, Feature::speed, t, speed);
      store.set_observed(s, Feature::occupancy, t, occ);
    }
  }
  return {std::move(topo), std::move(store)};
}

// ---------------------------------------------------------------------------
// Anomaly injection.

struct GroundTruth {
  SeriesStore clean;
  Mask mask;
};

struct InjectionResult {
  SeriesStore corrupted;
  GroundTruth truth;
};

/// Corrupts a copy of `clean` according to `plan`. Missing and zero
/// injections affect whole records (all three features); high injections
/// multiply the flow of one interval. Every changed cell is in the mask.
inline InjectionResult inject_anomalies(const SeriesStore& clean, const AnomalyPlan& plan, std::uint64_t seed,
                                        const DaytimeWindow& daytime = {}) {
  SeriesStore out = clean;
  Mask mask;
  const auto& g = clean.grid();
  const int ipd = g.intervals_per_day();
  std::set<std::pair<std::size_t, std::int64_t>> used;  // (station, t) already corrupted, plus a guard gap

  auto free_span = [&](std::size_t s, std::int64_t t0, int len, int guard) {
    if (t0 < 0 || t0 + len > g.size()) return false;
    for (auto t = t0 - guard; t < t0 + len + guard; ++t) {
      if (used.count({s, t})) return false;
    }
    return true;
  };
  auto apply = [&](std::size_t s, std::int64_t t0, int len, AnomalyKind kind, double factor) {
    for (auto t = t0; t < t0 + len; ++t) {
      used.insert({s, t});
      if (kind == AnomalyKind::high) {
        const double truth = clean.value(s, Feature::flow, t);
        mask.push_back({s, Feature::flow, t, kind, truth});
        out.set_observed(s, Feature::flow, t, truth * factor);
        continue;
      }
      for (Feature f : kAllFeatures) {
        mask.push_back({s, f, t, kind, clean.value(s, f, t)});
        if (kind == AnomalyKind::zero) {
          out.set_observed(s, f, t, 0.0);
        }
      }
    }
  };
  auto erase_missing = [&](const Mask& m) {
    // Missing cells are removed by rebuilding the affected cells as absent.
    std::vector<double> values = out.raw_values();
    std::vector<std::uint8_t> kinds = out.raw_kinds();
    std::vector<std::uint8_t> fixes = out.raw_fixes();
    const auto T = static_cast<std::size_t>(g.size());
    for (const auto& c : m) {
      if (c.kind != AnomalyKind::missing) continue;
      const auto o = (c.station * kFeatureCount + static_cast<std::size_t>(c.feature)) * T + static_cast<std::size_t>(c.t);
      values[o] = std::numeric_limits<double>::quiet_NaN();
      kinds[o] = static_cast<std::uint8_t>(AnomalyKind::missing);
    }
    auto unreliable = out.unreliable_days();
    out.restore_raw(std::move(values), std::move(kinds), std::move(fixes), out.stage(), std::move(unreliable));
  };

  for (const auto& inj : plan.explicit_injections) {
    const auto s = clean.station_index(inj.station);
    const auto t0 = g.index_of(inj.start);
    if (!t0) throw DataError("injection start is not on the grid");
    if (inj.length < 1 || *t0 + inj.length > g.size()) throw DataError("injection does not fit in the store");
    if (inj.kind == AnomalyKind::none) throw UsageError("injection kind must be missing, zero or high");
    if (!free_span(s, *t0, inj.length, 0)) throw DataError("overlapping injections at station '" + inj.station + "'");
    apply(s, *t0, inj.length, inj.kind, plan.high_factor);
  }

  std::mt19937_64 rng(seed);
  const auto S = clean.station_count();
  const int days = static_cast<int>(g.day_count());
  if (S == 0 || days == 0) {
    if (!plan.explicit_injections.empty() || !plan.empty()) erase_missing(mask);
    return {std::move(out), {clean, std::move(mask)}};
  }
  std::uniform_int_distribution<std::size_t> ustation(0, S - 1);
  std::uniform_int_distribution<int> uday(0, days - 1);
  const auto step = g.interval().count();
  const int day_lo = static_cast<int>(daytime.begin.count() / step);
  const int day_hi = static_cast<int>(daytime.end.count() / step);  // exclusive
  auto place = [&](int len, bool in_daytime, int lo_slot, int hi_slot) -> std::pair<std::size_t, std::int64_t> {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const auto s = ustation(rng);
      const int d = uday(rng);
      int lo = 0, hi = ipd - len;
      if (in_daytime) {
        lo = std::max(day_lo, lo_slot);
        hi = std::min(day_hi, hi_slot) - len;
      }
      if (hi < lo) throw UsageError("injection block longer than its allowed window");
      const int slot = std::uniform_int_distribution<int>(lo, hi)(rng);
      const std::int64_t t0 = static_cast<std::int64_t>(d) * ipd + slot;
      if (free_span(s, t0, len, 1)) return {s, t0};
    }
    throw DataError("anomaly plan too dense to place without overlap");
  };
  auto ulen = [&](int lo, int hi) { return std::uniform_int_distribution<int>(std::max(1, lo), std::max(lo, hi))(rng); };

  for (int i = 0; i < plan.missing_blocks; ++i) {
    const int len = ulen(plan.missing_min, plan.missing_max);
    auto [s, t0] = place(len, false, 0, ipd);
    apply(s, t0, len, AnomalyKind::missing, 1.0);
  }
  for (int i = 0; i < plan.zero_blocks; ++i) {
    const int len = ulen(plan.zero_min, plan.zero_max);
    auto [s, t0] = place(len, true, 0, ipd);
    apply(s, t0, len, AnomalyKind::zero, 1.0);
  }
  std::bernoulli_distribution after_zero(std::clamp(plan.high_after_zero, 0.0, 1.0));
  // spikes sit where genuine daytime traffic is well above the night level
  const int spike_lo = static_cast<int>(540 / step), spike_hi = static_cast<int>(1200 / step);
  for (int i = 0; i < plan.high_cells; ++i) {
    if (after_zero(rng)) {
      const int zlen = ulen(plan.zero_min, std::min(plan.zero_max, 20));
      auto [s, t0] = place(zlen + 1, true, spike_lo - zlen, spike_hi);
      apply(s, t0, zlen, AnomalyKind::zero, 1.0);
      apply(s, t0 + zlen, 1, AnomalyKind::high, plan.high_factor);
    } else {
      auto [s, t0] = place(1, true, spike_lo, spike_hi);
      apply(s, t0, 1, AnomalyKind::high, plan.high_factor);
    }
  }
  erase_missing(mask);
  std::sort(mask.begin(), mask.end(), [](const MaskedCell& a, const MaskedCell& b) {
    return std::tie(a.station, a.t, a.feature) < std::tie(b.station, b.t, b.feature);
  });
  return {std::move(out), {clean, std::move(mask)}};
}

// ---------------------------------------------------------------------------
// Spec files.

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.n_mainline = j.value("n_mainline", s.n_mainline);
    if (j.contains("ramps")) {
      s.ramps.clear();
      for (const auto& r : j["ramps"]) {
        RampSpec rs;
        const auto dir = r.at("direction").get<std::string>();
        if (dir != "A" && dir != "B") throw DataError("ramp direction must be A or B");
        rs.direction = dir == "A" ? Direction::a_south : Direction::b_north;
        const auto kind = r.at("kind").get<std::string>();
        if (kind == "entry" || kind == "E") rs.kind = StationKind::entry;
        else if (kind == "exit" || kind == "X") rs.kind = StationKind::exit;
        else throw DataError("ramp kind must be entry or exit");
        rs.closing = r.at("closing").get<int>();
        rs.share = r.value("share", rs.kind == StationKind::exit ? 0.15 : 0.2);
        s.ramps.push_back(rs);
      }
    }
    if (j.contains("start")) s.start = parse_date(j["start"].get<std::string>());
    s.weeks = j.value("weeks", s.weeks);
    s.interval_minutes = j.value("interval_minutes", s.interval_minutes);
    s.seed = j.value("seed", s.seed);
    s.base_flow = j.value("base_flow", s.base_flow);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.drift_min = j.value("drift_min", s.drift_min);
    s.drift_max = j.value("drift_max", s.drift_max);
    s.critical_ratio = j.value("critical_ratio", s.critical_ratio);
    s.peak_ratio = j.value("peak_ratio", s.peak_ratio);
    if (j.contains("anomalies")) {
      const auto& a = j["anomalies"];
      auto& p = s.anomalies;
      p.missing_blocks = a.value("missing_blocks", p.missing_blocks);
      p.missing_min = a.value("missing_min", p.missing_min);
      p.missing_max = a.value("missing_max", p.missing_max);
      p.zero_blocks = a.value("zero_blocks", p.zero_blocks);
      p.zero_min = a.value("zero_min", p.zero_min);
      p.zero_max = a.value("zero_max", p.zero_max);
      p.high_cells = a.value("high_cells", p.high_cells);
      p.high_factor = a.value("high_factor", p.high_factor);
      p.high_after_zero = a.value("high_after_zero", p.high_after_zero);
      if (p.high_factor < 5.0) throw DataError("high_factor must be at least 5");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace loopflow
