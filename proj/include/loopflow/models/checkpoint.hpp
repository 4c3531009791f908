#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "loopflow/core/error.hpp"
#include "loopflow/features.hpp"
#include "loopflow/models/network.hpp"
#include "loopflow/models/spec.hpp"
#include "loopflow/nn/trainer.hpp"

namespace loopflow {

/// Everything a trained model needs to predict again: architecture, station
/// order, normalisation, parameters and the training history. Profile-based
/// and ARIMA models carry no parameters, only the date ranges they use.
struct TrainedModel {
  ModelSpec spec;
  std::vector<std::string> stations;
  Normalization normalization;
  std::shared_ptr<Network> network;  // null for dpp / arima
  nn::TrainHistory history;
  std::vector<DateRange> profile_ranges;
  std::uint64_t seed = 0;
};

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_json(const TrainedModel& m) {
  using nlohmann::json;
  json j;
  j["format"] = "loopflow-model";
  j["version"] = kCheckpointVersion;
  j["spec"] = to_json(m.spec);
  j["stations"] = m.stations;
  j["seed"] = m.seed;
  j["normalization"] = {{"in_mean", m.normalization.in_mean},
                        {"in_std", m.normalization.in_std},
                        {"out_mean", m.normalization.out_mean},
                        {"out_std", m.normalization.out_std}};
  json params = json::array();
  if (m.network) {
    for (auto* p : const_cast<Network&>(*m.network).parameters()) {
      params.push_back({{"name", p->name},
                        {"rows", p->value.rows()},
                        {"cols", p->value.cols()},
                        {"data", std::vector<double>(p->value.data(), p->value.data() + p->value.size())}});
    }
  }
  j["parameters"] = std::move(params);
  json hist = json::array();
  for (const auto& e : m.history.epochs) hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  j["history"] = {{"epochs", std::move(hist)}, {"best_epoch", m.history.best_epoch}, {"early_stopped", m.history.early_stopped}};
  json ranges = json::array();
  for (const auto& r : m.profile_ranges) ranges.push_back({format_date(r.first), format_date(r.last)});
  j["profile_ranges"] = std::move(ranges);
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "loopflow-model") throw DataError("not a model checkpoint");
    if (j.value("version", 0) != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    TrainedModel m;
    m.spec = model_spec_from_json(j.at("spec"));
    m.stations = j.at("stations").get<std::vector<std::string>>();
    m.seed = j.value("seed", std::uint64_t{0});
    const auto& nz = j.at("normalization");
    m.normalization.N = m.spec.N;
    m.normalization.F = m.spec.features.size();
    m.normalization.in_mean = nz.at("in_mean").get<std::vector<double>>();
    m.normalization.in_std = nz.at("in_std").get<std::vector<double>>();
    m.normalization.out_mean = nz.at("out_mean").get<std::vector<double>>();
    m.normalization.out_std = nz.at("out_std").get<std::vector<double>>();
    if (is_neural(m.spec.kind)) {
      m.network = build_network(m.spec, 0);
      const auto& params = j.at("parameters");
      auto list = m.network->parameters();
      if (params.size() != list.size()) throw DataError("checkpoint parameter count does not match the architecture");
      for (std::size_t k = 0; k < list.size(); ++k) {
        const auto& pj = params[k];
        auto* p = list[k];
        if (pj.at("name").get<std::string>() != p->name || pj.at("rows").get<Index>() != p->value.rows() ||
            pj.at("cols").get<Index>() != p->value.cols()) {
          throw DataError("checkpoint parameter '" + p->name + "' does not match the architecture");
        }
        const auto data = pj.at("data").get<std::vector<double>>();
        if (static_cast<Index>(data.size()) != p->value.size()) throw DataError("checkpoint parameter size mismatch");
        std::copy(data.begin(), data.end(), p->value.data());
      }
    }
    for (const auto& e : j.at("history").at("epochs")) {
      m.history.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>()});
    }
    m.history.best_epoch = j.at("history").at("best_epoch").get<int>();
    m.history.early_stopped = j.at("history").value("early_stopped", false);
    for (const auto& r : j.value("profile_ranges", nlohmann::json::array())) {
      m.profile_ranges.push_back(parse_date_range(r[0].get<std::string>(), r[1].get<std::string>()));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const TrainedModel& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write checkpoint '" + path + "'");
  os << checkpoint_json(m).dump(1) << '\n';
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace loopflow
