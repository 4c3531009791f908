#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "loopflow/core/csv.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/core/time.hpp"
#include "loopflow/store.hpp"
#include "loopflow/topology.hpp"

namespace loopflow {

struct DetectorRecord {
  std::string station_id;
  Timestamp timestamp;
  double flow = 0.0;
  double speed = 0.0;
  double occupancy = 0.0;

  double get(Feature f) const {
    switch (f) {
      case Feature::flow: return flow;
      case Feature::speed: return speed;
      case Feature::occupancy: return occupancy;
    }
    return 0.0;
  }
  bool operator==(const DetectorRecord&) const = default;
};

struct ParseIssue {
  std::size_t line = 0;  // 1-based; 0 when not tied to a line
  std::string message;
};

struct ParseResult {
  std::vector<DetectorRecord> records;
  std::vector<ParseIssue> issues;
};

inline constexpr const char* kRecordHeader = "station_id,timestamp,flow,speed,occupancy";

/// Reads the record CSV. Bad lines become issues; nothing is dropped silently.
inline ParseResult parse_records(std::istream& in) {
  if (!in) throw DataError("unreadable record stream");
  ParseResult out;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto trimmed = csv::trim(line);
    if (trimmed.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (trimmed == kRecordHeader) continue;
      out.issues.push_back({lineno, "missing header, expected '" + std::string(kRecordHeader) + "'"});
    }
    const auto fields = csv::split(trimmed);
    if (fields.size() != 5) {
      out.issues.push_back({lineno, "expected 5 fields, got " + std::to_string(fields.size())});
      continue;
    }
    DetectorRecord r;
    r.station_id = std::string(csv::trim(fields[0]));
    if (r.station_id.empty()) {
      out.issues.push_back({lineno, "empty station id"});
      continue;
    }
    const auto ts = try_parse_timestamp(csv::trim(fields[1]));
    if (!ts) {
      out.issues.push_back({lineno, "invalid timestamp"});
      continue;
    }
    r.timestamp = *ts;
    double vals[3];
    bool ok = true;
    for (int k = 0; k < 3 && ok; ++k) {
      const auto v = csv::parse_double(fields[2 + k]);
      if (!v || !std::isfinite(*v)) {
        out.issues.push_back({lineno, "non-numeric value"});
        ok = false;
      } else if (*v < 0.0) {
        out.issues.push_back({lineno, "negative value"});
        ok = false;
      } else {
        vals[k] = *v;
      }
    }
    if (!ok) continue;
    r.flow = vals[0];
    r.speed = vals[1];
    r.occupancy = vals[2];
    out.records.push_back(std::move(r));
  }
  if (in.bad()) throw DataError("unreadable record stream");
  return out;
}

inline ParseResult parse_records(const std::string& text) {
  std::istringstream in(text);
  return parse_records(in);
}

/// Smallest whole-day grid covering every record.
inline TimeGrid infer_grid(const std::vector<DetectorRecord>& records, std::chrono::minutes interval) {
  if (records.empty()) return TimeGrid(Date{}, 0, interval);
  auto [lo, hi] = std::minmax_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.timestamp < b.timestamp;
  });
  const Date first = std::chrono::floor<std::chrono::days>(lo->timestamp);
  const Date last = std::chrono::floor<std::chrono::days>(hi->timestamp + std::chrono::seconds(interval) / 2);
  return TimeGrid(first, (last - first).count() + 1, interval);
}

struct AlignResult {
  SeriesStore store;
  std::vector<ParseIssue> issues;  // off-grid or out-of-range timestamps
};

/// Places records on the grid. Every cell without a record stays absent and
/// is counted in R_miss. Identical duplicates collapse; conflicting
/// duplicates are an error listing every conflict.
inline AlignResult align_to_grid(const std::vector<DetectorRecord>& records, const TimeGrid& grid,
                                 const MotorwayTopology& topology) {
  AlignResult out{SeriesStore(grid, topology.ids()), {}};
  SeriesStore& store = out.store;
  const auto half = std::chrono::duration_cast<std::chrono::seconds>(grid.interval()) / 2;
  std::vector<std::string> conflicts;
  for (const auto& r : records) {
    if (!topology.contains(r.station_id)) throw DataError("record for unknown station '" + r.station_id + "'");
    const auto s = store.station_index(r.station_id);
    auto [idx, off] = grid.nearest(r.timestamp);
    if (std::chrono::abs(off) >= half || (half.count() == 0 && off.count() != 0)) {
      out.issues.push_back({0, "timestamp " + format_timestamp(r.timestamp) + " of '" + r.station_id +
                                   "' is off the grid by " + std::to_string(off.count()) + "s"});
      continue;
    }
    if (idx < 0 || idx >= grid.size()) {
      out.issues.push_back({0, "timestamp " + format_timestamp(r.timestamp) + " of '" + r.station_id +
                                   "' lies outside the grid"});
      continue;
    }
    if (store.is_clean(s, Feature::flow, idx)) {
      bool same = true;
      for (Feature f : kAllFeatures) same = same && store.value(s, f, idx) == r.get(f);
      if (!same) conflicts.push_back(r.station_id + "@" + format_timestamp(grid.time_at(idx)));
      continue;
    }
    for (Feature f : kAllFeatures) store.set_observed(s, f, idx, r.get(f));
  }
  if (!conflicts.empty()) {
    std::string msg = "conflicting duplicate records (" + std::to_string(conflicts.size()) + "):";
    for (std::size_t i = 0; i < conflicts.size() && i < 20; ++i) msg += " " + conflicts[i];
    if (conflicts.size() > 20) msg += " ...";
    throw DataError(msg);
  }
  return out;
}

/// Extracts the present cells as records, in station-then-time order.
inline std::vector<DetectorRecord> to_records(const SeriesStore& store) {
  std::vector<DetectorRecord> out;
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (std::int64_t t = 0; t < store.time_count(); ++t) {
      if (std::isnan(store.value(s, Feature::flow, t))) continue;
      out.push_back({store.stations()[s], store.grid().time_at(t), store.value(s, Feature::flow, t),
                     store.value(s, Feature::speed, t), store.value(s, Feature::occupancy, t)});
    }
  }
  return out;
}

/// Writes the record CSV, grouped by time then station.
inline void write_records(std::ostream& os, const SeriesStore& store) {
  os << kRecordHeader << '\n';
  for (std::int64_t t = 0; t < store.time_count(); ++t) {
    const auto ts = format_timestamp(store.grid().time_at(t));
    for (std::size_t s = 0; s < store.station_count(); ++s) {
      const double q = store.value(s, Feature::flow, t);
      if (std::isnan(q)) continue;
      os << store.stations()[s] << ',' << ts << ',' << csv::fmt(q) << ',' << csv::fmt(store.value(s, Feature::speed, t))
         << ',' << csv::fmt(store.value(s, Feature::occupancy, t)) << '\n';
    }
  }
}

/// Missing records per calendar month (`YYYY-MM`), every month of the grid listed.
inline std::map<std::string, std::size_t> monthly_missing_report(const SeriesStore& store) {
  std::map<std::string, std::size_t> out;
  const auto& g = store.grid();
  for (std::int64_t d = 0; d < g.day_count(); ++d) out.emplace(month_key(g.first_day() + std::chrono::days{d}), 0);
  for (std::size_t s = 0; s < store.station_count(); ++s) {
    for (std::int64_t t = 0; t < store.time_count(); ++t) {
      if (store.anomaly(s, Feature::flow, t) == AnomalyKind::missing) ++out[month_key(g.date_of(t))];
    }
  }
  return out;
}

}  // namespace loopflow
