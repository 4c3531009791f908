#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "loopflow/core/csv.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/core/time.hpp"
#include "loopflow/store.hpp"
#include "loopflow/topology.hpp"

namespace loopflow {

namespace stats {

/// Linear interpolation between order statistics; `sorted` must be ascending.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return percentile_sorted(v, q);
}

/// Normal-consistent scale from the median absolute deviation.
inline double mad_scale(const std::vector<double>& sorted, double median) {
  std::vector<double> dev;
  dev.reserve(sorted.size());
  for (double x : sorted) dev.push_back(std::abs(x - median));
  std::sort(dev.begin(), dev.end());
  return 1.4826 * percentile_sorted(dev, 0.5);
}

}  // namespace stats

/// Per-slot statistics of one feature at one station on one weekday.
/// Slots without a single contributing sample are absent (NaN, samples 0).
struct DailyProfile {
  std::string station_id;
  Weekday weekday = Weekday::mon;
  Feature feature = Feature::flow;
  std::vector<double> mean, median, std, p20, p80;
  /// 1.4826 * MAD around the median; the robust spread used by the high-record detector.
  std::vector<double> spread;
  std::vector<int> samples;
  int source_weeks = 0;

  std::size_t slots() const { return mean.size(); }
  bool present(std::size_t slot) const { return samples[slot] > 0; }

  void resize(std::size_t n) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (auto* v : {&mean, &median, &std, &p20, &p80, &spread}) v->assign(n, nan);
    samples.assign(n, 0);
  }
};

inline bool in_any(const std::vector<DateRange>& ranges, Date d) {
  return std::any_of(ranges.begin(), ranges.end(), [&](const DateRange& r) { return r.contains(d); });
}

/// Builds one profile from the days of `ranges` falling on `weekday`. Cells in
/// any anomaly set and days marked unreliable do not contribute.
inline DailyProfile build_profile(const SeriesStore& store, std::size_t station, Weekday weekday, Feature feature,
                                  const std::vector<DateRange>& ranges) {
  const auto& g = store.grid();
  const int ipd = g.intervals_per_day();
  std::vector<std::int64_t> days;
  for (std::int64_t d = 0; d < g.day_count(); ++d) {
    const Date date = g.first_day() + std::chrono::days{d};
    if (in_any(ranges, date) && weekday_of(date) == weekday) days.push_back(d);
  }
  if (days.empty()) {
    throw DataError(std::string("no ") + weekday_name(weekday) + " in the requested date range for station '" +
                    store.stations()[station] + "'");
  }
  DailyProfile p;
  p.station_id = store.stations()[station];
  p.weekday = weekday;
  p.feature = feature;
  p.source_weeks = static_cast<int>(days.size());
  p.resize(static_cast<std::size_t>(ipd));
  std::vector<double> sample;
  for (int slot = 0; slot < ipd; ++slot) {
    sample.clear();
    for (auto d : days) {
      if (store.is_unreliable(station, d)) continue;
      const auto t = g.first_index_of_day(d) + slot;
      if (t >= g.size() || !store.is_clean(station, feature, t)) continue;
      sample.push_back(store.value(station, feature, t));
    }
    if (sample.empty()) continue;
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double sum = 0.0;
    for (double x : sample) sum += x;
    const double mean = sum / n;
    double ss = 0.0;
    for (double x : sample) ss += (x - mean) * (x - mean);
    const auto k = static_cast<std::size_t>(slot);
    p.samples[k] = static_cast<int>(sample.size());
    p.mean[k] = mean;
    p.std[k] = std::sqrt(ss / n);
    p.median[k] = stats::percentile_sorted(sample, 0.5);
    p.p20[k] = stats::percentile_sorted(sample, 0.2);
    p.p80[k] = stats::percentile_sorted(sample, 0.8);
    p.spread[k] = stats::mad_scale(sample, p.median[k]);
  }
  return p;
}

inline DailyProfile build_profile(const SeriesStore& store, std::size_t station, Weekday weekday, Feature feature,
                                  const DateRange& range) {
  return build_profile(store, station, weekday, feature, std::vector<DateRange>{range});
}

/// Profiles of every station x weekday x feature available in a date range.
class ProfileSet {
 public:
  ProfileSet() = default;
  ProfileSet(std::vector<std::string> stations, int intervals_per_day)
      : stations_{std::move(stations)}, ipd_{intervals_per_day} {}

  const std::vector<std::string>& stations() const { return stations_; }
  int intervals_per_day() const { return ipd_; }

  void insert(std::size_t station, DailyProfile p) {
    if (static_cast<int>(p.slots()) != ipd_) throw DataError("profile length does not match the grid");
    profiles_[{station, p.weekday, p.feature}] = std::move(p);
  }

  const DailyProfile* find(std::size_t station, Weekday d, Feature f) const {
    auto it = profiles_.find({station, d, f});
    return it == profiles_.end() ? nullptr : &it->second;
  }

  const DailyProfile& at(std::size_t station, Weekday d, Feature f) const {
    const auto* p = find(station, d, f);
    if (!p) {
      throw DataError(std::string("no ") + to_string(f) + " profile for station '" + stations_.at(station) + "' on " +
                      weekday_name(d));
    }
    return *p;
  }

  std::size_t size() const { return profiles_.size(); }
  auto begin() const { return profiles_.begin(); }
  auto end() const { return profiles_.end(); }

 private:
  std::vector<std::string> stations_;
  int ipd_ = 0;
  std::map<std::tuple<std::size_t, Weekday, Feature>, DailyProfile> profiles_;
};

/// Builds profiles for every weekday that occurs in the union of `ranges`.
inline ProfileSet build_profiles(const SeriesStore& store, const std::vector<DateRange>& ranges) {
  ProfileSet set(store.stations(), store.grid().intervals_per_day());
  bool seen[7] = {};
  for (std::int64_t d = 0; d < store.grid().day_count(); ++d) {
    const Date date = store.grid().first_day() + std::chrono::days{d};
    if (in_any(ranges, date)) seen[static_cast<int>(weekday_of(date))] = true;
  }
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (int w = 0; w < 7; ++w) {
      if (!seen[w]) continue;
      for (Feature f : kAllFeatures) set.insert(s, build_profile(store, s, static_cast<Weekday>(w), f, ranges));
    }
  }
  return set;
}

inline ProfileSet build_profiles(const SeriesStore& store, const DateRange& range) {
  return build_profiles(store, std::vector<DateRange>{range});
}

/// Whole-store date range.
inline DateRange full_range(const SeriesStore& store) {
  const auto& g = store.grid();
  return {g.first_day(), g.first_day() + std::chrono::days{std::max<std::int64_t>(g.day_count() - 1, 0)}};
}

// Profile file: one row per (station, weekday, feature, slot); absent stats are empty.
inline constexpr const char* kProfileHeader = "station,weekday,feature,slot,samples,mean,median,std,p20,p80,spread,source_weeks";

inline void write_profiles(std::ostream& os, const ProfileSet& set) {
  os << kProfileHeader << '\n';
  for (const auto& [key, p] : set) {
    for (std::size_t k = 0; k < p.slots(); ++k) {
      os << p.station_id << ',' << weekday_name(p.weekday) << ',' << to_string(p.feature) << ',' << k << ','
         << p.samples[k] << ',' << csv::fmt(p.mean[k]) << ',' << csv::fmt(p.median[k]) << ',' << csv::fmt(p.std[k])
         << ',' << csv::fmt(p.p20[k]) << ',' << csv::fmt(p.p80[k]) << ',' << csv::fmt(p.spread[k]) << ','
         << p.source_weeks << '\n';
    }
  }
}

inline ProfileSet read_profiles(std::istream& is, const std::vector<std::string>& stations, int intervals_per_day) {
  ProfileSet set(stations, intervals_per_day);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < stations.size(); ++i) index[stations[i]] = i;
  std::map<std::tuple<std::size_t, Weekday, Feature>, DailyProfile> acc;
  std::string line;
  std::size_t lineno = 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1) {
      if (csv::trim(line) != kProfileHeader) throw DataError("profile file: unexpected header");
      continue;
    }
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    auto bad = [&](const char* what) { return DataError("profile file line " + std::to_string(lineno) + ": " + what); };
    if (f.size() != 12) throw bad("expected 12 fields");
    auto sit = index.find(std::string(f[0]));
    if (sit == index.end()) throw bad("unknown station");
    const auto wd = parse_weekday(f[1]);
    const auto feat = parse_feature(f[2]);
    const auto slot = csv::parse_int(f[3]);
    const auto samples = csv::parse_int(f[4]);
    if (!wd || !feat || !slot || !samples || *slot < 0 || *slot >= intervals_per_day) throw bad("bad key fields");
    auto& p = acc[{sit->second, *wd, *feat}];
    if (p.slots() == 0) {
      p.station_id = std::string(f[0]);
      p.weekday = *wd;
      p.feature = *feat;
      p.resize(static_cast<std::size_t>(intervals_per_day));
      p.source_weeks = static_cast<int>(csv::parse_int(f[11]).value_or(0));
    }
    const auto k = static_cast<std::size_t>(*slot);
    p.samples[k] = static_cast<int>(*samples);
    p.mean[k] = csv::parse_double(f[5]).value_or(nan);
    p.median[k] = csv::parse_double(f[6]).value_or(nan);
    p.std[k] = csv::parse_double(f[7]).value_or(nan);
    p.p20[k] = csv::parse_double(f[8]).value_or(nan);
    p.p80[k] = csv::parse_double(f[9]).value_or(nan);
    p.spread[k] = csv::parse_double(f[10]).value_or(nan);
  }
  for (auto& [key, p] : acc) set.insert(std::get<0>(key), std::move(p));
  return set;
}

// ---------------------------------------------------------------------------
// Capacities and the congestion map.

/// Configured capacity, or the station's largest clean observed flow.
inline std::vector<double> resolve_capacities(const MotorwayTopology& topo, const SeriesStore& store) {
  std::vector<double> out(store.station_count(), 0.0);
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    const auto& id = store.stations()[s];
    if (topo.contains(id) && topo.at(id).capacity) {
      out[s] = *topo.at(id).capacity;
      continue;
    }
    double mx = 0.0;
    for (std::int64_t t = 0; t < store.time_count(); ++t) {
      if (store.is_clean(s, Feature::flow, t)) mx = std::max(mx, store.value(s, Feature::flow, t));
    }
    if (!(mx > 0.0)) throw DataError("cannot derive a capacity for station '" + id + "'");
    out[s] = mx;
  }
  return out;
}

struct CongestionMap {
  Weekday weekday = Weekday::mon;
  std::vector<std::string> stations;
  std::vector<std::vector<double>> ratio;  // [station][slot] in [0, 1]; NaN where the profile is absent
};

inline CongestionMap congestion_map(const ProfileSet& profiles, const std::vector<double>& capacities, Weekday d) {
  if (capacities.size() != profiles.stations().size()) throw UsageError("one capacity per station required");
  CongestionMap m{d, profiles.stations(), {}};
  for (std::size_t s = 0; s < profiles.stations().size(); ++s) {
    if (!(capacities[s] > 0.0)) throw DataError("non-positive capacity for station '" + profiles.stations()[s] + "'");
    const auto& p = profiles.at(s, d, Feature::flow);
    std::vector<double> row(p.slots());
    for (std::size_t k = 0; k < p.slots(); ++k) {
      row[k] = p.present(k) ? std::clamp(p.mean[k] / capacities[s], 0.0, 1.0) : std::numeric_limits<double>::quiet_NaN();
    }
    m.ratio.push_back(std::move(row));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Speed-flow diagram regions.

enum class Region { a1 = 1, a2, a3, a4, a5 };

inline const char* to_string(Region r) {
  constexpr const char* names[] = {"A1", "A2", "A3", "A4", "A5"};
  return names[static_cast<int>(r) - 1];
}

/// Thresholds splitting a station's speed-flow plane. Flow thresholds are in
/// the store's own per-interval units; callers scale them for other grids.
struct SpeedFlowRegions {
  double speed_high = 80.0;
  double speed_low = 40.0;
  double flow_high = 0.0;
  double flow_low = 0.0;
  double occ_low = 0.0;
  /// Largest physically plausible flow (the station capacity).
  double flow_capacity = std::numeric_limits<double>::infinity();

  void validate() const {
    if (!(speed_low < speed_high)) throw UsageError("speed_low must be below speed_high");
    if (!(flow_low < flow_high)) throw UsageError("flow_low must be below flow_high");
  }
};

struct FlowPoint {
  double flow = 0.0;
  double speed = 0.0;
  double occupancy = 0.0;
};

/// Total classification of a (flow, speed, occupancy) triple.
///
///   A5  flow < flow_low, speed < speed_low and occupancy <= occ_low
///   A2  flow >= flow_high and speed >= speed_high       (peak throughput)
///   A4  flow >= flow_high and speed <  speed_high       (congestion)
///   A1  flow <  flow_high and speed >= speed_low        (free flow)
///   A3  flow <  flow_high and speed <  speed_low        (incident suspect)
inline Region classify_speed_flow(const FlowPoint& p, const SpeedFlowRegions& r) {
  if (p.flow < r.flow_low && p.speed < r.speed_low && p.occupancy <= r.occ_low) return Region::a5;
  if (p.flow >= r.flow_high) return p.speed >= r.speed_high ? Region::a2 : Region::a4;
  return p.speed >= r.speed_low ? Region::a1 : Region::a3;
}

/// Default thresholds from a capacity and the station's historical occupancy.
inline SpeedFlowRegions default_regions(double capacity, std::vector<double> occupancy) {
  SpeedFlowRegions r;
  r.flow_low = 0.10 * capacity;
  r.flow_high = 0.70 * capacity;
  r.flow_capacity = capacity;
  r.occ_low = occupancy.empty() ? 0.0 : stats::percentile(std::move(occupancy), 0.10);
  return r;
}

/// Default regions for every station of the store, using clean occupancy cells.
inline std::vector<SpeedFlowRegions> default_regions(const SeriesStore& store, const std::vector<double>& capacities) {
  std::vector<SpeedFlowRegions> out;
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    std::vector<double> occ;
    for (std::int64_t t = 0; t < store.time_count(); ++t) {
      if (store.is_clean(s, Feature::occupancy, t)) occ.push_back(store.value(s, Feature::occupancy, t));
    }
    out.push_back(default_regions(capacities.at(s), std::move(occ)));
  }
  return out;
}

}  // namespace loopflow
