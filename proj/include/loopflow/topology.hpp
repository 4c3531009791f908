#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "loopflow/core/error.hpp"

namespace loopflow {

/// Carriageway. Station ids ending in A are south-bound, B north-bound.
enum class Direction { a_south, b_north };
enum class StationKind { mainline, entry, exit };

struct Station {
  std::string id;
  Direction direction = Direction::a_south;
  StationKind kind = StationKind::mainline;
  int position = 0;  // order along the carriageway, strictly increasing per direction
  std::optional<double> capacity;  // vehicles per time interval
  std::string attach;  // ramps only: the mainline station closing the segment the ramp sits on
};

/// Spatial case of a conservation relation between consecutive mainline stations.
enum class RelationCase {
  plain,  // no ramp: upstream == downstream
  exit,   // off-ramp: upstream == downstream + exit
  entry,  // on-ramp: downstream == upstream + entry
};

/// Detector error allowance: `max(floor, relative * |whole|)`.
struct EpsilonPolicy {
  double relative = 0.05;
  double floor = 2.0;

  static EpsilonPolicy absolute(double eps) { return {0.0, eps}; }
  double allowance(double whole_flow) const { return std::max(floor, relative * std::abs(whole_flow)); }
};

/// `flow(whole) == sum(flow(parts)) +- epsilon`.
///
/// For plain and exit segments `whole` is the upstream mainline station; for
/// an entry it is the downstream mainline station, fed by the upstream one and
/// the on-ramp.
struct ConservationRelation {
  std::string whole;
  std::vector<std::string> parts;
  RelationCase kind = RelationCase::plain;
  EpsilonPolicy epsilon;
};

enum class Verdict { pass, fail, unverifiable };

struct ConsistencyVerdict {
  Verdict verdict = Verdict::unverifiable;
  double residual = 0.0;  // |whole - sum(parts)|; meaningless when unverifiable
  double epsilon = 0.0;
};

/// Checks one relation at one time interval. Stations absent from `flows`
/// (or carrying NaN) make the verdict unverifiable rather than failed.
inline ConsistencyVerdict check_conservation(const std::map<std::string, double>& flows,
                                             const ConservationRelation& rel) {
  auto lookup = [&](const std::string& id) -> std::optional<double> {
    auto it = flows.find(id);
    if (it == flows.end() || std::isnan(it->second)) return std::nullopt;
    return it->second;
  };
  const auto whole = lookup(rel.whole);
  if (!whole) return {};
  double sum = 0.0;
  for (const auto& p : rel.parts) {
    const auto v = lookup(p);
    if (!v) return {};
    sum += *v;
  }
  ConsistencyVerdict out;
  out.residual = std::abs(*whole - sum);
  out.epsilon = rel.epsilon.allowance(*whole);
  out.verdict = out.residual <= out.epsilon ? Verdict::pass : Verdict::fail;
  return out;
}

class MotorwayTopology {
 public:
  MotorwayTopology() = default;

  /// Validates `stations` and derives the conservation relations.
  explicit MotorwayTopology(std::vector<Station> stations, EpsilonPolicy eps = {}) : epsilon_{eps} {
    for (const auto& s : stations) {
      if (s.id.empty()) throw DataError("station with empty id");
      if (index_.count(s.id)) throw DataError("duplicate station id '" + s.id + "'");
      if (s.capacity && !(*s.capacity > 0.0)) throw DataError("station '" + s.id + "' has non-positive capacity");
      index_.emplace(s.id, 0);
    }
    std::stable_sort(stations.begin(), stations.end(), [](const Station& a, const Station& b) {
      if (a.direction != b.direction) return a.direction < b.direction;
      return a.position < b.position;
    });
    for (std::size_t i = 0; i < stations.size(); ++i) {
      index_[stations[i].id] = i;
      if (i > 0 && stations[i - 1].direction == stations[i].direction &&
          stations[i - 1].position == stations[i].position) {
        throw DataError("stations '" + stations[i - 1].id + "' and '" + stations[i].id +
                        "' share a position along the same direction");
      }
    }
    stations_ = std::move(stations);
    derive_relations();
  }

  const std::vector<Station>& stations() const { return stations_; }
  const std::vector<ConservationRelation>& relations() const { return relations_; }
  const EpsilonPolicy& epsilon() const { return epsilon_; }
  std::size_t size() const { return stations_.size(); }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  /// Position of `id` in canonical order (direction A by position, then B).
  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown station '" + id + "'");
    return it->second;
  }

  const Station& at(const std::string& id) const { return stations_[index_of(id)]; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(stations_.size());
    for (const auto& s : stations_) out.push_back(s.id);
    return out;
  }

 private:
  void derive_relations() {
    std::map<std::string, const Station*> ramp_on;  // closing mainline id -> ramp
    for (const auto& s : stations_) {
      if (s.kind == StationKind::mainline) continue;
      if (s.attach.empty()) throw DataError("ramp '" + s.id + "' has no attachment");
      auto it = index_.find(s.attach);
      if (it == index_.end()) throw DataError("ramp '" + s.id + "' attaches to unknown station '" + s.attach + "'");
      const Station& m = stations_[it->second];
      if (m.kind != StationKind::mainline || m.direction != s.direction) {
        throw DataError("ramp '" + s.id + "' must attach to a mainline station of its own direction");
      }
      if (!ramp_on.emplace(s.attach, &s).second) {
        throw DataError("more than one ramp on the segment closing at '" + s.attach + "'");
      }
    }
    for (Direction dir : {Direction::a_south, Direction::b_north}) {
      const Station* prev = nullptr;
      for (const auto& s : stations_) {
        if (s.direction != dir || s.kind != StationKind::mainline) continue;
        auto ramp = ramp_on.find(s.id);
        if (!prev) {
          if (ramp != ramp_on.end()) {
            throw DataError("ramp '" + ramp->second->id + "' attaches before the first mainline station");
          }
          prev = &s;
          continue;
        }
        ConservationRelation rel;
        rel.epsilon = epsilon_;
        if (ramp == ramp_on.end()) {
          rel.kind = RelationCase::plain;
          rel.whole = prev->id;
          rel.parts = {s.id};
        } else {
          const Station& r = *ramp->second;
          if (!(prev->position < r.position && r.position < s.position)) {
            throw DataError("ramp '" + r.id + "' is not positioned between '" + prev->id + "' and '" + s.id + "'");
          }
          if (r.kind == StationKind::exit) {
            rel.kind = RelationCase::exit;
            rel.whole = prev->id;
            rel.parts = {s.id, r.id};
          } else {
            rel.kind = RelationCase::entry;
            rel.whole = s.id;
            rel.parts = {prev->id, r.id};
          }
        }
        relations_.push_back(std::move(rel));
        prev = &s;
      }
    }
  }

  std::vector<Station> stations_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<ConservationRelation> relations_;
  EpsilonPolicy epsilon_;
};

// ---------------------------------------------------------------------------
// Topology file (JSON):
//
//   {
//     "version": 1,
//     "epsilon": {"relative": 0.05, "floor": 2},          // optional
//     "stations": [
//       {"id": "4A", "direction": "A", "kind": "mainline", "position": 0, "capacity": 250},
//       {"id": "3X", "direction": "A", "kind": "exit", "position": 1, "attach": "3A"},
//       {"id": "3A", "direction": "A", "kind": "mainline", "position": 2}
//     ]
//   }
// ---------------------------------------------------------------------------

inline const char* to_string(RelationCase c) {
  switch (c) {
    case RelationCase::plain: return "plain";
    case RelationCase::exit: return "exit";
    case RelationCase::entry: return "entry";
  }
  return "?";
}

inline const char* to_string(Direction d) { return d == Direction::a_south ? "A" : "B"; }

inline const char* to_string(StationKind k) {
  switch (k) {
    case StationKind::mainline: return "mainline";
    case StationKind::entry: return "entry";
    case StationKind::exit: return "exit";
  }
  return "?";
}

inline MotorwayTopology load_topology(const std::string& document) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed topology document: ") + e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("stations") || !doc["stations"].is_array()) {
      throw DataError("malformed topology document: missing 'stations' list");
    }
    EpsilonPolicy eps;
    if (doc.contains("epsilon")) {
      eps.relative = doc["epsilon"].value("relative", eps.relative);
      eps.floor = doc["epsilon"].value("floor", eps.floor);
      if (eps.relative < 0 || eps.floor < 0) throw DataError("epsilon must be non-negative");
    }
    std::vector<Station> stations;
    for (const auto& js : doc["stations"]) {
      Station s;
      s.id = js.at("id").get<std::string>();
      const auto dir = js.at("direction").get<std::string>();
      if (dir == "A") s.direction = Direction::a_south;
      else if (dir == "B") s.direction = Direction::b_north;
      else throw DataError("station '" + s.id + "': direction must be A or B");
      const auto kind = js.value("kind", std::string("mainline"));
      if (kind == "mainline") s.kind = StationKind::mainline;
      else if (kind == "entry" || kind == "E") s.kind = StationKind::entry;
      else if (kind == "exit" || kind == "X") s.kind = StationKind::exit;
      else throw DataError("station '" + s.id + "': unknown kind '" + kind + "'");
      s.position = js.at("position").get<int>();
      if (s.position < 0) throw DataError("station '" + s.id + "': position must be >= 0");
      if (js.contains("capacity") && !js["capacity"].is_null()) s.capacity = js["capacity"].get<double>();
      if (js.contains("attach")) s.attach = js["attach"].get<std::string>();
      if (s.kind == StationKind::mainline && !s.attach.empty()) {
        throw DataError("mainline station '" + s.id + "' cannot attach to another station");
      }
      stations.push_back(std::move(s));
    }
    return MotorwayTopology(std::move(stations), eps);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed topology document: ") + e.what());
  }
}

inline std::string dump_topology(const MotorwayTopology& topo) {
  using nlohmann::json;
  json doc;
  doc["version"] = 1;
  doc["epsilon"] = {{"relative", topo.epsilon().relative}, {"floor", topo.epsilon().floor}};
  json list = json::array();
  for (const auto& s : topo.stations()) {
    json js = {{"id", s.id}, {"direction", to_string(s.direction)}, {"kind", to_string(s.kind)}, {"position", s.position}};
    if (s.capacity) js["capacity"] = *s.capacity;
    if (!s.attach.empty()) js["attach"] = s.attach;
    list.push_back(std::move(js));
  }
  doc["stations"] = std::move(list);
  return doc.dump(2) + "\n";
}

}  // namespace loopflow
