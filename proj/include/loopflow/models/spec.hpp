#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "loopflow/core/error.hpp"
#include "loopflow/features.hpp"

namespace loopflow {

enum class ModelKind { dpp, sep_bpnn, bpnn, cnn, lstm, cnn_lstm, arima };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::dpp: return "dpp";
    case ModelKind::sep_bpnn: return "sep-bpnn";
    case ModelKind::bpnn: return "bpnn";
    case ModelKind::cnn: return "cnn";
    case ModelKind::lstm: return "lstm";
    case ModelKind::cnn_lstm: return "cnn-lstm";
    case ModelKind::arima: return "arima";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  for (ModelKind k : {ModelKind::dpp, ModelKind::sep_bpnn, ModelKind::bpnn, ModelKind::cnn, ModelKind::lstm,
                      ModelKind::cnn_lstm, ModelKind::arima}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

inline bool is_neural(ModelKind k) { return k != ModelKind::dpp && k != ModelKind::arima; }

/// Everything needed to rebuild a predictor of a given architecture.
struct ModelSpec {
  ModelKind kind = ModelKind::lstm;
  int R = 10;
  int P = 1;
  FeatureSet features;
  std::size_t N = 0;  // stations

  int bpnn_hidden = 256;
  int sep_hidden = 10;
  int cnn_channels1 = 8;
  int cnn_channels2 = 16;
  int cnn_kernel = 3;
  int cnn_pad = 1;
  int lstm_hidden = 128;
  int hybrid_kernel = 3;  // 1 x k convolution along the station axis

  int arima_p = 2;
  int arima_d = 1;
  int arima_q = 0;
  int arima_history = 100;

  void validate() const {
    if (R < 1 || P < 1) throw UsageError("R and P must be at least 1");
    if (N < 1 && kind != ModelKind::arima) throw UsageError("model needs at least one station");
    switch (kind) {
      case ModelKind::bpnn:
        if (bpnn_hidden < 1) throw UsageError("bpnn hidden size must be positive");
        break;
      case ModelKind::sep_bpnn:
        if (sep_hidden < 1) throw UsageError("sep-bpnn hidden size must be positive");
        break;
      case ModelKind::cnn:
        if (cnn_channels1 < 1 || cnn_channels2 < 1 || cnn_kernel < 1 || cnn_pad < 0) throw UsageError("bad cnn shape");
        if (R + 2 * cnn_pad < cnn_kernel || static_cast<int>(N) + 2 * cnn_pad < cnn_kernel) {
          throw UsageError("R or N smaller than the cnn kernel extent");
        }
        break;
      case ModelKind::lstm:
        if (lstm_hidden < 1) throw UsageError("lstm hidden size must be positive");
        break;
      case ModelKind::cnn_lstm:
        if (lstm_hidden < 1 || hybrid_kernel < 1 || hybrid_kernel % 2 == 0) throw UsageError("bad cnn-lstm shape");
        break;
      case ModelKind::arima:
        if (arima_p < 1 || arima_d < 0 || arima_history < arima_p + arima_d + 11) throw UsageError("bad arima orders");
        if (arima_q != 0) throw UsageError("only q = 0 is supported");
        break;
      case ModelKind::dpp: break;
    }
  }
};

inline nlohmann::json to_json(const ModelSpec& s) {
  return {{"kind", to_string(s.kind)},       {"R", s.R},
          {"P", s.P},                        {"features", s.features.code()},
          {"N", s.N},                        {"bpnn_hidden", s.bpnn_hidden},
          {"sep_hidden", s.sep_hidden},      {"cnn_channels1", s.cnn_channels1},
          {"cnn_channels2", s.cnn_channels2}, {"cnn_kernel", s.cnn_kernel},
          {"cnn_pad", s.cnn_pad},            {"lstm_hidden", s.lstm_hidden},
          {"hybrid_kernel", s.hybrid_kernel}, {"arima_p", s.arima_p},
          {"arima_d", s.arima_d},            {"arima_q", s.arima_q},
          {"arima_history", s.arima_history}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  const auto kind = parse_model_kind(j.at("kind").get<std::string>());
  if (!kind) throw DataError("unknown model kind in spec");
  s.kind = *kind;
  s.R = j.at("R").get<int>();
  s.P = j.at("P").get<int>();
  s.features = FeatureSet::parse(j.at("features").get<std::string>());
  s.N = j.at("N").get<std::size_t>();
  s.bpnn_hidden = j.value("bpnn_hidden", s.bpnn_hidden);
  s.sep_hidden = j.value("sep_hidden", s.sep_hidden);
  s.cnn_channels1 = j.value("cnn_channels1", s.cnn_channels1);
  s.cnn_channels2 = j.value("cnn_channels2", s.cnn_channels2);
  s.cnn_kernel = j.value("cnn_kernel", s.cnn_kernel);
  s.cnn_pad = j.value("cnn_pad", s.cnn_pad);
  s.lstm_hidden = j.value("lstm_hidden", s.lstm_hidden);
  s.hybrid_kernel = j.value("hybrid_kernel", s.hybrid_kernel);
  s.arima_p = j.value("arima_p", s.arima_p);
  s.arima_d = j.value("arima_d", s.arima_d);
  s.arima_q = j.value("arima_q", s.arima_q);
  s.arima_history = j.value("arima_history", s.arima_history);
  return s;
}

}  // namespace loopflow
