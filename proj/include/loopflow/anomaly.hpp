#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "loopflow/core/csv.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/mask.hpp"
#include "loopflow/profiles.hpp"
#include "loopflow/store.hpp"
#include "loopflow/topology.hpp"

namespace loopflow {

using namespace std::chrono_literals;

/// Local-time window in which an all-zero reading is abnormal: [begin, end).
struct DaytimeWindow {
  std::chrono::minutes begin = 8h;
  std::chrono::minutes end = 21h;

  bool contains(std::chrono::minutes minute_of_day) const { return begin <= minute_of_day && minute_of_day < end; }
};

inline std::chrono::minutes minute_of_day(const TimeGrid& g, std::int64_t t) {
  return std::chrono::minutes{g.minute_of_slot(g.slot_of_day(t))};
}

/// Flags every zero reading inside the daytime window into R_zero.
/// Night-time zeros are genuine and stay untouched.
inline std::size_t detect_daytime_zeros(SeriesStore& store, const DaytimeWindow& window = {}) {
  if (store.stage() != Stage::raw) throw UsageError("zero detection runs on the raw store");
  std::size_t flagged = 0;
  const auto& g = store.grid();
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (Feature f : kAllFeatures) {
      for (std::int64_t t = 0; t < store.time_count(); ++t) {
        if (!store.is_clean(s, f, t) || store.value(s, f, t) != 0.0) continue;
        if (!window.contains(minute_of_day(g, t))) continue;
        store.flag(s, f, t, AnomalyKind::zero);
        ++flagged;
      }
    }
  }
  return flagged;
}

// ---------------------------------------------------------------------------
// Periods.

struct AnomalyPeriod {
  std::size_t station = 0;
  Feature feature = Feature::flow;
  AnomalyKind kind = AnomalyKind::zero;
  std::int64_t first = 0;  // grid index, inclusive
  std::int64_t last = 0;   // grid index, inclusive
  std::chrono::minutes length{0};

  std::int64_t cells() const { return last - first + 1; }
};

struct PeriodPartition {
  std::vector<AnomalyPeriod> long_periods;   // length > threshold
  std::vector<AnomalyPeriod> short_periods;  // length <= threshold
};

/// Maximal runs of grid-adjacent cells of one anomaly kind, per station and
/// feature, split at the threshold. A run of exactly the threshold is short.
inline PeriodPartition merge_periods(const SeriesStore& store, AnomalyKind kind,
                                     std::chrono::minutes threshold = 2h) {
  PeriodPartition out;
  const auto step = store.grid().interval();
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (Feature f : kAllFeatures) {
      std::int64_t t = 0;
      const auto n = store.time_count();
      while (t < n) {
        if (store.anomaly(s, f, t) != kind) {
          ++t;
          continue;
        }
        AnomalyPeriod p{s, f, kind, t, t, {}};
        while (p.last + 1 < n && store.anomaly(s, f, p.last + 1) == kind) ++p.last;
        p.length = step * p.cells();
        (p.length > threshold ? out.long_periods : out.short_periods).push_back(p);
        t = p.last + 1;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Long all-zero periods.

struct LongZeroRepair {
  std::size_t periods = 0;
  std::size_t substituted = 0;
  std::vector<CellRef> absent_profile;  // cells left invalid
};

/// Replaces every cell of a zero period longer than `threshold` with the
/// profile mean of its weekday and slot, producing D_R1.
inline LongZeroRepair repair_long_zero_periods(SeriesStore& store, const ProfileSet& profiles,
                                               std::chrono::minutes threshold = 2h) {
  if (store.stage() != Stage::raw) throw UsageError("long-zero repair expects the raw store");
  LongZeroRepair out;
  const auto& g = store.grid();
  for (const auto& p : merge_periods(store, AnomalyKind::zero, threshold).long_periods) {
    ++out.periods;
    for (auto t = p.first; t <= p.last; ++t) {
      const auto* prof = profiles.find(p.station, g.weekday_at(t), p.feature);
      const auto slot = static_cast<std::size_t>(g.slot_of_day(t));
      if (!prof || !prof->present(slot)) {
        out.absent_profile.push_back({p.station, p.feature, t});
        continue;
      }
      store.write_fix(p.station, p.feature, t, prof->mean[slot], CellFix::profile_substituted);
      ++out.substituted;
    }
  }
  store.advance_stage(Stage::zeros_repaired);
  return out;
}

// ---------------------------------------------------------------------------
// Extremely large records.

struct HighRecordRule {
  double margin = 10.0;                // spreads above the median
  double degenerate_relative = 0.2;    // margin over the median when the spread is zero
  bool robust_spread = true;           // 1.4826*MAD instead of the population std
};

inline bool exceeds_high_margin(double value, double median, double spread, const HighRecordRule& rule = {}) {
  if (spread > 0.0) return value > median + rule.margin * spread;
  return value > median * (1.0 + rule.degenerate_relative);
}

/// Speed-flow-occupancy verification of a candidate high record. A reading
/// above the station capacity cannot be genuine traffic; otherwise the point
/// must sit in an anomaly-consistent region (A5, or A1/A3 with occupancy
/// below occ_low). Peak-throughput and congested points (A2/A4) are kept.
inline bool verify_high_anomaly(const FlowPoint& p, const SpeedFlowRegions& r) {
  if (p.flow > r.flow_capacity) return true;
  switch (classify_speed_flow(p, r)) {
    case Region::a5: return true;
    case Region::a1:
    case Region::a3: return p.occupancy < r.occ_low;
    case Region::a2:
    case Region::a4: return false;
  }
  return false;
}

/// Flags flow cells of D_R1 that exceed the profile median by the margin and
/// pass verification, moving them into R_high. Produces D_R2.
inline std::size_t detect_high_records(SeriesStore& store, const ProfileSet& profiles,
                                       const std::vector<SpeedFlowRegions>& regions, const HighRecordRule& rule = {}) {
  if (store.stage() != Stage::zeros_repaired) throw UsageError("high-record detection expects D_R1");
  if (regions.size() != store.station_count()) throw UsageError("one region set per station required");
  const auto& g = store.grid();
  std::size_t flagged = 0;
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (std::int64_t t = 0; t < store.time_count(); ++t) {
      if (!store.is_clean(s, Feature::flow, t)) continue;
      const auto* prof = profiles.find(s, g.weekday_at(t), Feature::flow);
      const auto slot = static_cast<std::size_t>(g.slot_of_day(t));
      if (!prof || !prof->present(slot)) continue;
      const double q = store.value(s, Feature::flow, t);
      // integer counts often tie, so a zero MAD falls back to the std first
      const double spread = rule.robust_spread && prof->spread[slot] > 0.0 ? prof->spread[slot] : prof->std[slot];
      if (!exceeds_high_margin(q, prof->median[slot], spread, rule)) continue;
      const FlowPoint point{q, store.value(s, Feature::speed, t), store.value(s, Feature::occupancy, t)};
      if (!verify_high_anomaly(point, regions[s])) continue;
      store.flag(s, Feature::flow, t, AnomalyKind::high);
      ++flagged;
    }
  }
  store.advance_stage(Stage::high_filtered);
  return flagged;
}

// ---------------------------------------------------------------------------
// Unreliable days.

struct UnreliableRule {
  double daytime_fraction = 0.25;  // share of invalid daytime slots
  std::chrono::minutes max_span = 2h;  // longest tolerated invalid run
  DaytimeWindow daytime;
};

/// Marks (station, day) pairs whose anomalies are too dense to repair
/// credibly. A slot counts as invalid when any feature is still invalid.
inline std::size_t mark_unreliable_days(SeriesStore& store, const UnreliableRule& rule = {}) {
  if (store.stage() != Stage::high_filtered) throw UsageError("unreliable-day marking runs after all detectors");
  const auto& g = store.grid();
  const int ipd = g.intervals_per_day();
  std::size_t daytime_slots = 0;
  for (int k = 0; k < ipd; ++k) daytime_slots += rule.daytime.contains(std::chrono::minutes{g.minute_of_slot(k)});
  std::size_t marked = 0;
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (std::int64_t d = 0; d < g.day_count(); ++d) {
      std::size_t bad_daytime = 0;
      std::int64_t run = 0, longest = 0;
      for (int k = 0; k < ipd; ++k) {
        const auto t = g.first_index_of_day(d) + k;
        if (t >= g.size()) break;
        bool bad = false;
        for (Feature f : kAllFeatures) bad = bad || store.is_invalid(s, f, t);
        run = bad ? run + 1 : 0;
        longest = std::max(longest, run);
        if (bad && rule.daytime.contains(std::chrono::minutes{g.minute_of_slot(k)})) ++bad_daytime;
      }
      const bool dense = daytime_slots > 0 &&
                         static_cast<double>(bad_daytime) > rule.daytime_fraction * static_cast<double>(daytime_slots);
      const bool long_span = g.interval() * longest > rule.max_span;
      if (dense || long_span) {
        store.mark_unreliable(s, d);
        ++marked;
      }
    }
  }
  return marked;
}

// ---------------------------------------------------------------------------
// Repair.

struct RepairCoeffs {
  double alpha = 1.0;
  double beta = 0.0;
  double fit_rmse = 0.0;
  std::size_t n_valid = 0;
  bool degenerate = false;  // constant profile: alpha fixed to 1
};

/// Least-squares affine map from profile means to observed values:
/// minimises sqrt(mean((F - alpha * Fbar - beta)^2)) over the valid slots.
inline RepairCoeffs fit_repair_coeffs(std::span<const double> values, std::span<const double> profile_means) {
  if (values.size() != profile_means.size()) throw UsageError("value and profile vectors differ in length");
  if (values.size() < 2) throw UsageError("at least two valid points are needed to fit alpha and beta");
  const double n = static_cast<double>(values.size());
  double my = 0.0, mx = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || !std::isfinite(profile_means[i])) throw UsageError("non-finite input to fit");
    my += values[i];
    mx += profile_means[i];
  }
  my /= n;
  mx /= n;
  double sxx = 0.0, sxy = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double dx = profile_means[i] - mx;
    sxx += dx * dx;
    sxy += dx * (values[i] - my);
    scale += profile_means[i] * profile_means[i];
  }
  RepairCoeffs c;
  c.n_valid = values.size();
  if (sxx <= 1e-24 * std::max(scale, 1.0)) {
    c.degenerate = true;
    c.alpha = 1.0;
    c.beta = my - mx;
  } else {
    c.alpha = sxy / sxx;
    c.beta = my - c.alpha * mx;
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double r = values[i] - c.alpha * profile_means[i] - c.beta;
    ss += r * r;
  }
  c.fit_rmse = std::sqrt(ss / n);
  return c;
}

enum class RepairMethod {
  profile,  // Method 1: substitute the profile mean
  affine,   // Method 2: alpha * profile mean + beta, fitted on the day's valid slots
};

inline const char* to_string(RepairMethod m) { return m == RepairMethod::profile ? "m1" : "m2"; }

struct RepairOptions {
  std::chrono::minutes recency = 15min;  // context window checked before each repaired cell
  bool force_identity = false;           // pin alpha=1, beta=0 (reduces Method 2 to Method 1)
};

struct RepairRow {
  CellRef cell;
  AnomalyKind kind = AnomalyKind::missing;
  RepairMethod method = RepairMethod::profile;
  double alpha = 1.0;
  double beta = 0.0;
  double old_value = 0.0;
  double new_value = 0.0;
  std::string note;  // fallback / degenerate / stale-context / absent-profile
};

struct RepairReport {
  std::vector<RepairRow> rows;
  std::size_t repaired = 0;
  std::size_t left_invalid = 0;
};

/// Repairs every still-invalid cell, station by station and day by day.
/// Valid cells are never touched.
inline RepairReport repair_invalid(SeriesStore& store, const ProfileSet& profiles, RepairMethod method,
                                   const RepairOptions& opts = {}) {
  if (store.stage() != Stage::high_filtered) throw UsageError("repair expects a store that went through detection");
  const auto& g = store.grid();
  const int ipd = g.intervals_per_day();
  const auto lookback = static_cast<std::int64_t>(opts.recency / g.interval());
  RepairReport report;
  std::vector<double> fv, fp;
  std::vector<std::int64_t> invalid;
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (std::int64_t d = 0; d < g.day_count(); ++d) {
      const auto t0 = g.first_index_of_day(d);
      const auto t1 = std::min<std::int64_t>(t0 + ipd, g.size());
      const Weekday wd = g.weekday_at(t0);
      for (Feature f : kAllFeatures) {
        invalid.clear();
        for (auto t = t0; t < t1; ++t) {
          if (store.is_invalid(s, f, t)) invalid.push_back(t);
        }
        if (invalid.empty()) continue;
        const auto* prof = profiles.find(s, wd, f);
        std::string day_note;
        RepairMethod used = method;
        RepairCoeffs coeffs;
        if (method == RepairMethod::affine) {
          fv.clear();
          fp.clear();
          for (auto t = t0; t < t1 && prof; ++t) {
            const auto k = static_cast<std::size_t>(t - t0);
            if (store.is_clean(s, f, t) && prof->present(k)) {
              fv.push_back(store.value(s, f, t));
              fp.push_back(prof->mean[k]);
            }
          }
          if (opts.force_identity) {
            coeffs.n_valid = fv.size();
          } else if (fv.size() >= 2) {
            coeffs = fit_repair_coeffs(fv, fp);
            if (coeffs.degenerate) day_note = "degenerate";
          } else {
            used = RepairMethod::profile;
            day_note = "fallback";
          }
        }
        for (auto t : invalid) {
          const auto k = static_cast<std::size_t>(t - t0);
          RepairRow row;
          row.cell = {s, f, t};
          row.kind = store.anomaly(s, f, t);
          row.method = used;
          row.old_value = store.value(s, f, t);
          row.note = day_note;
          if (!prof || !prof->present(k)) {
            row.note = "absent-profile";
            row.new_value = row.old_value;
            ++report.left_invalid;
            report.rows.push_back(std::move(row));
            continue;
          }
          double v = prof->mean[k];
          if (used == RepairMethod::affine) {
            row.alpha = coeffs.alpha;
            row.beta = coeffs.beta;
            v = std::max(0.0, coeffs.alpha * prof->mean[k] + coeffs.beta);
            bool recent = false;
            for (std::int64_t j = 1; j <= lookback && t - j >= 0 && !recent; ++j) recent = store.is_clean(s, f, t - j);
            if (!recent) row.note = row.note.empty() ? "stale-context" : row.note + ";stale-context";
          }
          row.new_value = v;
          store.write_fix(s, f, t, v, CellFix::repaired);
          ++report.repaired;
          report.rows.push_back(std::move(row));
        }
      }
    }
  }
  store.advance_stage(Stage::repaired);
  return report;
}

inline void write_repair_report(std::ostream& os, const RepairReport& rep, const SeriesStore& store) {
  os << "station,time,feature,kind,method,alpha,beta,old,new,note\n";
  for (const auto& r : rep.rows) {
    os << store.stations()[r.cell.station] << ',' << format_timestamp(store.grid().time_at(r.cell.t)) << ','
       << to_string(r.cell.feature) << ',' << to_string(r.kind) << ',' << to_string(r.method) << ','
       << csv::fmt(r.alpha) << ',' << csv::fmt(r.beta) << ',' << csv::fmt(r.old_value) << ','
       << csv::fmt(r.new_value) << ',' << r.note << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evaluation against a hidden ground truth.

struct FeatureRepairScore {
  double rmse_mean = 0.0;  // mean over stations of the per-station RMSE
  double rmse_std = 0.0;   // population std of the per-station RMSE
  std::size_t stations = 0;
  std::size_t cells = 0;
  std::size_t unrepaired = 0;  // masked cells still without a value
};

struct RepairEvaluation {
  std::map<Feature, FeatureRepairScore> by_feature;
};

inline RepairEvaluation evaluate_repair(const SeriesStore& repaired, const Mask& mask) {
  if (mask.empty()) throw DataError("empty mask: nothing to evaluate");
  RepairEvaluation out;
  std::map<Feature, std::map<std::size_t, std::pair<double, std::size_t>>> acc;
  for (const auto& m : mask) {
    const double v = repaired.value(m.station, m.feature, m.t);
    auto& score = out.by_feature[m.feature];
    if (std::isnan(v)) {
      ++score.unrepaired;
      continue;
    }
    auto& [ss, n] = acc[m.feature][m.station];
    ss += (v - m.truth) * (v - m.truth);
    ++n;
    ++score.cells;
  }
  for (auto& [f, per_station] : acc) {
    auto& score = out.by_feature[f];
    std::vector<double> rmse;
    for (const auto& [s, sn] : per_station) rmse.push_back(std::sqrt(sn.first / static_cast<double>(sn.second)));
    double mean = 0.0;
    for (double r : rmse) mean += r;
    mean /= static_cast<double>(rmse.size());
    double var = 0.0;
    for (double r : rmse) var += (r - mean) * (r - mean);
    score.rmse_mean = mean;
    score.rmse_std = std::sqrt(var / static_cast<double>(rmse.size()));
    score.stations = rmse.size();
  }
  return out;
}

/// Variant taking the truth from a clean store rather than the mask values.
inline RepairEvaluation evaluate_repair(const SeriesStore& truth, const SeriesStore& repaired, Mask mask) {
  for (auto& m : mask) m.truth = truth.value(m.station, m.feature, m.t);
  return evaluate_repair(repaired, mask);
}

// ---------------------------------------------------------------------------
// Detection pipeline: zeros, long zero periods, high records, then unreliable days.

struct DetectionConfig {
  DaytimeWindow daytime;
  std::chrono::minutes long_period = 2h;
  HighRecordRule high;
  UnreliableRule unreliable;
  std::optional<DateRange> profile_range;  // defaults to the whole store
};

struct DetectionSummary {
  std::size_t missing_records = 0;
  std::size_t zero_cells = 0;
  std::size_t long_zero_periods = 0;
  std::size_t substituted = 0;
  std::size_t high_cells = 0;
  std::size_t unreliable_days = 0;
};

inline DetectionSummary run_detection(SeriesStore& store, const MotorwayTopology& topology,
                                      const DetectionConfig& cfg = {}) {
  DetectionSummary out;
  out.missing_records = store.missing_record_count();
  out.zero_cells = detect_daytime_zeros(store, cfg.daytime);
  const DateRange range = cfg.profile_range.value_or(full_range(store));
  const ProfileSet profiles = build_profiles(store, range);
  const auto lz = repair_long_zero_periods(store, profiles, cfg.long_period);
  out.long_zero_periods = lz.periods;
  out.substituted = lz.substituted;
  const auto regions = default_regions(store, resolve_capacities(topology, store));
  out.high_cells = detect_high_records(store, profiles, regions, cfg.high);
  out.unreliable_days = mark_unreliable_days(store, cfg.unreliable);
  return out;
}

}  // namespace loopflow
