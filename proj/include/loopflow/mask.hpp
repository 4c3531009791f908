#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "loopflow/core/csv.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/store.hpp"

namespace loopflow {

/// A cell deliberately hidden or corrupted, with its true value.
struct MaskedCell {
  std::size_t station = 0;
  Feature feature = Feature::flow;
  std::int64_t t = 0;
  AnomalyKind kind = AnomalyKind::missing;
  double truth = 0.0;

  bool operator==(const MaskedCell&) const = default;
};

using Mask = std::vector<MaskedCell>;

inline constexpr const char* kMaskHeader = "station_id,timestamp,feature,kind,truth";

inline void write_mask(std::ostream& os, const Mask& mask, const SeriesStore& store) {
  os << kMaskHeader << '\n';
  for (const auto& m : mask) {
    os << store.stations()[m.station] << ',' << format_timestamp(store.grid().time_at(m.t)) << ','
       << to_string(m.feature) << ',' << to_string(m.kind) << ',' << csv::fmt(m.truth) << '\n';
  }
}

inline Mask read_mask(std::istream& is, const SeriesStore& store) {
  Mask out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1) {
      if (csv::trim(line) != kMaskHeader) throw DataError("mask file: unexpected header");
      continue;
    }
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    auto bad = [&](const std::string& what) { return DataError("mask file line " + std::to_string(lineno) + ": " + what); };
    if (f.size() != 5) throw bad("expected 5 fields");
    MaskedCell m;
    m.station = store.station_index(std::string(f[0]));
    const auto ts = try_parse_timestamp(f[1]);
    if (!ts) throw bad("invalid timestamp");
    const auto idx = store.grid().index_of(*ts);
    if (!idx) throw bad("timestamp not on the store grid");
    m.t = *idx;
    const auto feat = parse_feature(f[2]);
    const auto kind = parse_anomaly_kind(f[3]);
    const auto truth = csv::parse_double(f[4]);
    if (!feat || !kind || !truth) throw bad("bad field");
    m.feature = *feat;
    m.kind = *kind;
    m.truth = *truth;
    out.push_back(m);
  }
  return out;
}

}  // namespace loopflow
