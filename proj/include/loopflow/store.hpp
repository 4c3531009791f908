#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loopflow/core/error.hpp"
#include "loopflow/core/time.hpp"

namespace loopflow {

enum class Feature : std::uint8_t { flow = 0, speed = 1, occupancy = 2 };
inline constexpr std::array<Feature, 3> kAllFeatures{Feature::flow, Feature::speed, Feature::occupancy};
inline constexpr std::size_t kFeatureCount = 3;

inline const char* to_string(Feature f) {
  switch (f) {
    case Feature::flow: return "flow";
    case Feature::speed: return "speed";
    case Feature::occupancy: return "occupancy";
  }
  return "?";
}

inline std::optional<Feature> parse_feature(std::string_view s) {
  if (s == "flow" || s == "f") return Feature::flow;
  if (s == "speed" || s == "s") return Feature::speed;
  if (s == "occupancy" || s == "o") return Feature::occupancy;
  return std::nullopt;
}

/// Processing stage: D_O -> D_R1 -> D_R2 -> repaired.
enum class Stage : std::uint8_t { raw = 0, zeros_repaired = 1, high_filtered = 2, repaired = 3 };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::raw: return "raw";
    case Stage::zeros_repaired: return "zeros_repaired";
    case Stage::high_filtered: return "high_filtered";
    case Stage::repaired: return "repaired";
  }
  return "?";
}

/// Anomaly set membership of a cell. A cell belongs to at most one set, so
/// R_miss, R_zero and R_high are disjoint by construction.
enum class AnomalyKind : std::uint8_t { none = 0, missing = 1, zero = 2, high = 3 };

inline const char* to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::none: return "none";
    case AnomalyKind::missing: return "missing";
    case AnomalyKind::zero: return "zero";
    case AnomalyKind::high: return "high";
  }
  return "?";
}

inline std::optional<AnomalyKind> parse_anomaly_kind(std::string_view s) {
  if (s == "missing") return AnomalyKind::missing;
  if (s == "zero") return AnomalyKind::zero;
  if (s == "high") return AnomalyKind::high;
  if (s == "none") return AnomalyKind::none;
  return std::nullopt;
}

/// How the current value of an anomalous cell was obtained.
enum class CellFix : std::uint8_t { original = 0, profile_substituted = 1, repaired = 2 };

struct CellRef {
  std::size_t station = 0;
  Feature feature = Feature::flow;
  std::int64_t t = 0;

  auto operator<=>(const CellRef&) const = default;
};

/// Aligned per-station, per-feature series on a fixed grid, with anomaly
/// bookkeeping. Absent values are NaN and always carry AnomalyKind::missing.
class SeriesStore {
 public:
  SeriesStore() = default;

  SeriesStore(TimeGrid grid, std::vector<std::string> stations)
      : grid_{grid}, stations_{std::move(stations)} {
    for (std::size_t i = 0; i < stations_.size(); ++i) {
      if (!index_.emplace(stations_[i], i).second) throw DataError("duplicate station '" + stations_[i] + "'");
    }
    const auto n = cell_count();
    values_.assign(n, std::numeric_limits<double>::quiet_NaN());
    kind_.assign(n, static_cast<std::uint8_t>(AnomalyKind::missing));
    fix_.assign(n, static_cast<std::uint8_t>(CellFix::original));
  }

  const TimeGrid& grid() const { return grid_; }
  const std::vector<std::string>& stations() const { return stations_; }
  std::size_t station_count() const { return stations_.size(); }
  std::int64_t time_count() const { return grid_.size(); }
  std::size_t cell_count() const { return stations_.size() * kFeatureCount * static_cast<std::size_t>(grid_.size()); }

  std::size_t station_index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown station '" + id + "'");
    return it->second;
  }
  bool has_station(const std::string& id) const { return index_.count(id) != 0; }

  Stage stage() const { return stage_; }

  /// Moves to the next stage. Each transition happens once and only forward.
  void advance_stage(Stage next) {
    if (static_cast<int>(next) != static_cast<int>(stage_) + 1) {
      throw UsageError(std::string("illegal stage transition ") + to_string(stage_) + " -> " + to_string(next));
    }
    stage_ = next;
  }

  double value(std::size_t s, Feature f, std::int64_t t) const { return values_[offset(s, f, t)]; }
  double value(const CellRef& c) const { return value(c.station, c.feature, c.t); }

  /// Contiguous series of one station/feature.
  const double* series(std::size_t s, Feature f) const { return values_.data() + offset(s, f, 0); }

  /// Writes an observed value and clears the missing mark. Used by ingest.
  void set_observed(std::size_t s, Feature f, std::int64_t t, double v) {
    const auto o = offset(s, f, t);
    values_[o] = v;
    if (kind_[o] == static_cast<std::uint8_t>(AnomalyKind::missing)) kind_[o] = static_cast<std::uint8_t>(AnomalyKind::none);
  }

  /// Overwrites the value of an anomalous cell and records how.
  void write_fix(std::size_t s, Feature f, std::int64_t t, double v, CellFix how) {
    const auto o = offset(s, f, t);
    if (kind_[o] == static_cast<std::uint8_t>(AnomalyKind::none)) {
      throw UsageError("refusing to overwrite a valid cell");
    }
    values_[o] = v;
    fix_[o] = static_cast<std::uint8_t>(how);
  }

  AnomalyKind anomaly(std::size_t s, Feature f, std::int64_t t) const {
    return static_cast<AnomalyKind>(kind_[offset(s, f, t)]);
  }

  CellFix fix(std::size_t s, Feature f, std::int64_t t) const { return static_cast<CellFix>(fix_[offset(s, f, t)]); }

  /// Adds a valid cell to an anomaly set. Flagging a cell that is already in
  /// another set is an error.
  void flag(std::size_t s, Feature f, std::int64_t t, AnomalyKind k) {
    const auto o = offset(s, f, t);
    const auto cur = static_cast<AnomalyKind>(kind_[o]);
    if (cur == k) return;
    if (cur != AnomalyKind::none) {
      throw UsageError(std::string("cell already in anomaly set '") + to_string(cur) + "'");
    }
    kind_[o] = static_cast<std::uint8_t>(k);
  }

  /// Genuine observation never flagged as anomalous.
  bool is_clean(std::size_t s, Feature f, std::int64_t t) const {
    return kind_[offset(s, f, t)] == static_cast<std::uint8_t>(AnomalyKind::none);
  }

  /// Holds a trustworthy value: clean, or anomalous but already fixed.
  bool is_usable(std::size_t s, Feature f, std::int64_t t) const {
    const auto o = offset(s, f, t);
    return kind_[o] == static_cast<std::uint8_t>(AnomalyKind::none) ||
           (fix_[o] != static_cast<std::uint8_t>(CellFix::original) && !std::isnan(values_[o]));
  }

  /// Anomalous and not yet fixed.
  bool is_invalid(std::size_t s, Feature f, std::int64_t t) const { return !is_usable(s, f, t); }

  std::size_t count(AnomalyKind k) const {
    std::size_t n = 0;
    for (auto v : kind_) n += v == static_cast<std::uint8_t>(k);
    return n;
  }

  std::vector<CellRef> cells(AnomalyKind k) const {
    std::vector<CellRef> out;
    for (std::size_t s = 0; s < station_count(); ++s) {
      for (Feature f : kAllFeatures) {
        for (std::int64_t t = 0; t < time_count(); ++t) {
          if (anomaly(s, f, t) == k) out.push_back({s, f, t});
        }
      }
    }
    return out;
  }

  /// R_miss at record level: (station, time) pairs without a record.
  std::size_t missing_record_count() const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < station_count(); ++s) {
      for (std::int64_t t = 0; t < time_count(); ++t) n += anomaly(s, Feature::flow, t) == AnomalyKind::missing;
    }
    return n;
  }

  void mark_unreliable(std::size_t s, std::int64_t day) { unreliable_.emplace(s, day); }
  bool is_unreliable(std::size_t s, std::int64_t day) const { return unreliable_.count({s, day}) != 0; }
  const std::set<std::pair<std::size_t, std::int64_t>>& unreliable_days() const { return unreliable_; }

  bool operator==(const SeriesStore& o) const {
    if (grid_ != o.grid_ || stations_ != o.stations_ || stage_ != o.stage_ || kind_ != o.kind_ || fix_ != o.fix_ ||
        unreliable_ != o.unreliable_ || values_.size() != o.values_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const double a = values_[i], b = o.values_[i];
      if (!(a == b || (std::isnan(a) && std::isnan(b)))) return false;
    }
    return true;
  }

  // Raw buffers, for serialization.
  const std::vector<double>& raw_values() const { return values_; }
  const std::vector<std::uint8_t>& raw_kinds() const { return kind_; }
  const std::vector<std::uint8_t>& raw_fixes() const { return fix_; }

  void restore_raw(std::vector<double> values, std::vector<std::uint8_t> kinds, std::vector<std::uint8_t> fixes,
                   Stage stage, std::set<std::pair<std::size_t, std::int64_t>> unreliable) {
    if (values.size() != cell_count() || kinds.size() != cell_count() || fixes.size() != cell_count()) {
      throw DataError("store buffers do not match the store shape");
    }
    values_ = std::move(values);
    kind_ = std::move(kinds);
    fix_ = std::move(fixes);
    stage_ = stage;
    unreliable_ = std::move(unreliable);
  }

 private:
  std::size_t offset(std::size_t s, Feature f, std::int64_t t) const {
    return (s * kFeatureCount + static_cast<std::size_t>(f)) * static_cast<std::size_t>(grid_.size()) +
           static_cast<std::size_t>(t);
  }

  TimeGrid grid_;
  std::vector<std::string> stations_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> values_;
  std::vector<std::uint8_t> kind_;
  std::vector<std::uint8_t> fix_;
  std::set<std::pair<std::size_t, std::int64_t>> unreliable_;
  Stage stage_ = Stage::raw;
};

}  // namespace loopflow
