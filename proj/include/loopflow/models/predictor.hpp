#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "loopflow/features.hpp"
#include "loopflow/models/arima.hpp"
#include "loopflow/models/network.hpp"
#include "loopflow/profiles.hpp"

namespace loopflow {

/// Common prediction contract: raw flow at t+P for every station, one row per window.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual ModelKind kind() const = 0;
  virtual Mat predict(const WindowSet& ws, std::span<const std::size_t> idx) = 0;

  Mat predict_all(const WindowSet& ws) {
    const auto idx = ws.all_indices();
    return predict(ws, idx);
  }
};

/// Daily-profile predictor: the profile mean of the target's weekday and slot,
/// whatever the window holds. Falls back to the profile's daily mean when the
/// slot has no samples.
class DppPredictor final : public Predictor {
 public:
  explicit DppPredictor(ProfileSet profiles) : profiles_{std::move(profiles)} {}
  ModelKind kind() const override { return ModelKind::dpp; }

  double predict_one(std::size_t station, Weekday wd, std::size_t slot) const {
    const auto& p = profiles_.at(station, wd, Feature::flow);
    if (p.present(slot)) return p.mean[slot];
    double sum = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < p.slots(); ++k) {
      if (p.present(k)) {
        sum += p.mean[k];
        ++n;
      }
    }
    if (n == 0) throw DataError("empty flow profile for station '" + profiles_.stations().at(station) + "'");
    return sum / n;
  }

  Mat predict(const WindowSet& ws, std::span<const std::size_t> idx) override {
    const auto& g = ws.frame().grid;
    Mat out(static_cast<Index>(idx.size()), static_cast<Index>(ws.N()));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto t = ws.target_index(idx[b]);
      const auto wd = g.weekday_at(t);
      const auto slot = static_cast<std::size_t>(g.slot_of_day(t));
      for (std::size_t n = 0; n < ws.N(); ++n) out(static_cast<Index>(b), static_cast<Index>(n)) = predict_one(n, wd, slot);
    }
    return out;
  }

  const ProfileSet& profiles() const { return profiles_; }

 private:
  ProfileSet profiles_;
};

/// Wraps a trained network and the normalisation it was trained with.
class NeuralPredictor final : public Predictor {
 public:
  NeuralPredictor(std::shared_ptr<Network> net, Normalization norm) : net_{std::move(net)}, norm_{std::move(norm)} {}
  ModelKind kind() const override { return net_->spec().kind; }

  Mat predict(const WindowSet& ws, std::span<const std::size_t> idx) override {
    check_compatible(*net_, ws);
    Mat out(static_cast<Index>(idx.size()), static_cast<Index>(ws.N()));
    constexpr std::size_t chunk = 1024;
    for (std::size_t s = 0; s < idx.size(); s += chunk) {
      const auto part = idx.subspan(s, std::min(chunk, idx.size() - s));
      out.middleRows(static_cast<Index>(s), static_cast<Index>(part.size())) = predict_raw(*net_, ws, part, norm_);
    }
    return out;
  }

  Network& network() { return *net_; }
  const Normalization& normalization() const { return norm_; }

 private:
  std::shared_ptr<Network> net_;
  Normalization norm_;
};

/// Per-station ARIMA refitted at every forecast origin on the trailing
/// history (at most `arima_history` points of the current valid run), then
/// rolled forward P steps. A history too short or degenerate to fit falls
/// back to the last observed value.
class ArimaPredictor final : public Predictor {
 public:
  explicit ArimaPredictor(ModelSpec spec) : spec_{std::move(spec)} {
    if (spec_.kind != ModelKind::arima) throw UsageError("ArimaPredictor needs an arima spec");
    spec_.validate();
  }
  ModelKind kind() const override { return ModelKind::arima; }

  Mat predict(const WindowSet& ws, std::span<const std::size_t> idx) override {
    const auto& fr = ws.frame();
    Mat out(static_cast<Index>(idx.size()), static_cast<Index>(ws.N()));
    std::vector<double> hist;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto a = ws.anchor(idx[b]);
      for (std::size_t n = 0; n < ws.N(); ++n) {
        hist.clear();
        for (auto t = a; t >= 0 && hist.size() < static_cast<std::size_t>(spec_.arima_history); --t) {
          const double v = fr.flow(t, n);
          if (std::isnan(v)) break;
          hist.push_back(v);
        }
        std::reverse(hist.begin(), hist.end());
        double pred = hist.empty() ? 0.0 : hist.back();
        try {
          const auto m = arima_fit(hist, spec_.arima_p, spec_.arima_d, 0, static_cast<std::size_t>(spec_.arima_history));
          pred = arima_forecast(m, ws.P()).back();
        } catch (const Error&) {
        }
        out(static_cast<Index>(b), static_cast<Index>(n)) = pred;
      }
    }
    return out;
  }

 private:
  ModelSpec spec_;
};

}  // namespace loopflow
