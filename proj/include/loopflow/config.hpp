#pragma once

#include <filesystem>
#include <fstream>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "loopflow/anomaly.hpp"
#include "loopflow/core/error.hpp"
#include "loopflow/core/time.hpp"
#include "loopflow/features.hpp"
#include "loopflow/models/spec.hpp"
#include "loopflow/nn/trainer.hpp"

namespace loopflow {

/// Settings shared by the command-line tools. Fields left unset in the file
/// keep their defaults; command-line flags override both.
struct RunConfig {
  struct Paths {
    std::string topology;
    std::string records;
    std::string store;
    std::string mask;
    std::string model;
    std::string out = ".";
  } paths;

  int interval_minutes = 3;
  SplitSpec split;
  DetectionConfig detection;
  RepairMethod repair_method = RepairMethod::affine;
  RepairOptions repair;
  ModelSpec model;
  nn::TrainConfig train;
  std::string sweep_R = "1..30";
  std::string sweep_P = "1..10";
  int sweep_repetitions = 5;
  std::optional<std::uint64_t> seed;  // required by train and sweep
  int jobs = 1;
};

namespace config_detail {

inline std::chrono::minutes parse_clock(const std::string& hhmm) {
  int h = 0, m = 0;
  if (hhmm.size() != 5 || hhmm[2] != ':' || std::sscanf(hhmm.c_str(), "%d:%d", &h, &m) != 2 || h < 0 || h > 24 || m < 0 ||
      m > 59) {
    throw UsageError("bad clock time '" + hhmm + "' (want HH:MM)");
  }
  return std::chrono::minutes{h * 60 + m};
}

inline std::vector<DateRange> parse_ranges(const nlohmann::json& j) {
  std::vector<DateRange> out;
  for (const auto& r : j) {
    if (!r.is_array() || r.size() != 2) throw UsageError("a date range is a [first, last] pair");
    out.push_back(parse_date_range(r[0].get<std::string>(), r[1].get<std::string>()));
  }
  return out;
}

}  // namespace config_detail

/// "2017-02-06..2017-03-05" or a single date; several ranges separated by ','.
inline std::vector<DateRange> parse_range_list(const std::string& text) {
  std::vector<DateRange> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_date_range(part, part));
    } else {
      out.push_back(parse_date_range(part.substr(0, dots), part.substr(dots + 2)));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using config_detail::parse_clock;
  using config_detail::parse_ranges;
  RunConfig c;
  try {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    static const std::set<std::string> known{"paths", "grid", "split", "detection", "repair", "model", "train", "sweep", "seed", "jobs"};
    for (const auto& [k, v] : j.items()) {
      if (!known.count(k)) throw UsageError("unknown config key '" + k + "'");
    }
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      c.paths.topology = p.value("topology", c.paths.topology);
      c.paths.records = p.value("records", c.paths.records);
      c.paths.store = p.value("store", c.paths.store);
      c.paths.mask = p.value("mask", c.paths.mask);
      c.paths.model = p.value("model", c.paths.model);
      c.paths.out = p.value("out", c.paths.out);
    }
    if (j.contains("grid")) c.interval_minutes = j["grid"].value("interval_minutes", c.interval_minutes);
    if (j.contains("split")) {
      const auto& s = j["split"];
      if (s.contains("train")) c.split.train = parse_ranges(s["train"]);
      if (s.contains("validation")) c.split.validation = parse_ranges(s["validation"]);
      if (s.contains("test")) c.split.test = parse_ranges(s["test"]);
      c.split.align_test_P = s.value("align_test_P", c.split.align_test_P);
      c.split.normalize = s.value("normalize", c.split.normalize);
      check_disjoint(c.split);
    }
    if (j.contains("detection")) {
      const auto& d = j["detection"];
      auto& cfg = c.detection;
      if (d.contains("daytime_begin")) cfg.daytime.begin = parse_clock(d["daytime_begin"].get<std::string>());
      if (d.contains("daytime_end")) cfg.daytime.end = parse_clock(d["daytime_end"].get<std::string>());
      cfg.unreliable.daytime = cfg.daytime;
      if (d.contains("long_period_minutes")) cfg.long_period = std::chrono::minutes{d["long_period_minutes"].get<int>()};
      cfg.high.margin = d.value("high_margin", cfg.high.margin);
      cfg.high.degenerate_relative = d.value("high_degenerate_relative", cfg.high.degenerate_relative);
      cfg.high.robust_spread = d.value("robust_spread", cfg.high.robust_spread);
      cfg.unreliable.daytime_fraction = d.value("unreliable_fraction", cfg.unreliable.daytime_fraction);
      if (d.contains("unreliable_run_minutes")) cfg.unreliable.max_span = std::chrono::minutes{d["unreliable_run_minutes"].get<int>()};
      if (d.contains("profile_range")) {
        const auto r = parse_ranges(nlohmann::json::array({d["profile_range"]}));
        cfg.profile_range = r.front();
      }
      if (!(cfg.daytime.begin < cfg.daytime.end)) throw UsageError("daytime window is empty");
    }
    if (j.contains("repair")) {
      const auto& r = j["repair"];
      const auto m = r.value("method", std::string("m2"));
      if (m != "m1" && m != "m2") throw UsageError("repair method must be m1 or m2");
      c.repair_method = m == "m1" ? RepairMethod::profile : RepairMethod::affine;
      if (r.contains("recency_minutes")) c.repair.recency = std::chrono::minutes{r["recency_minutes"].get<int>()};
    }
    if (j.contains("model")) {
      auto m = j["model"];
      // model files written by the tools carry N; a config may leave it out
      if (!m.contains("N")) m["N"] = 0;
      if (!m.contains("features")) m["features"] = "f";
      if (!m.contains("R")) m["R"] = c.model.R;
      if (!m.contains("P")) m["P"] = c.model.P;
      c.model = model_spec_from_json(m);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.l2_weight = t.value("l2_weight", c.train.l2_weight);
      c.train.patience = t.value("patience", c.train.patience);
      c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
      c.train.validate();
    }
    if (j.contains("sweep")) {
      const auto& s = j["sweep"];
      c.sweep_R = s.value("R", c.sweep_R);
      c.sweep_P = s.value("P", c.sweep_P);
      c.sweep_repetitions = s.value("repetitions", c.sweep_repetitions);
    }
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw UsageError("config file '" + path + "' does not exist");
  std::ifstream is(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace loopflow
