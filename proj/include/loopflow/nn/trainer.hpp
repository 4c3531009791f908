#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "loopflow/core/error.hpp"
#include "loopflow/nn/graph.hpp"

namespace loopflow::nn {

struct TrainConfig {
  int batch_size = 50;
  double learning_rate = 3e-4;
  double l2_weight = 1e-8;
  int patience = 3;
  int max_epochs = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw UsageError("batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw UsageError("learning_rate must be non-negative");
    if (!(l2_weight >= 0.0)) throw UsageError("l2_weight must be non-negative");
    if (patience < 1) throw UsageError("patience must be at least 1");
    if (max_epochs < 1) throw UsageError("max_epochs must be positive");
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool early_stopped = false;

  double best_val_loss() const {
    return best_epoch > 0 ? epochs[static_cast<std::size_t>(best_epoch - 1)].val_loss
                          : std::numeric_limits<double>::quiet_NaN();
  }
};

/// Raised when a loss becomes non-finite; carries the epochs completed so far.
class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, TrainHistory h) : TrainingError(what), history{std::move(h)} {}
  TrainHistory history;
};

/// Patience rule: an epoch whose validation loss is not strictly below the
/// best so far counts as a miss; `patience` consecutive misses stop training.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_{patience} {
    if (patience < 1) throw UsageError("patience must be at least 1");
  }

  /// Records the loss of the next epoch. Returns true when training should stop.
  bool observe(double val_loss) {
    ++epoch_;
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
      misses_ = 0;
      improved_ = true;
    } else {
      ++misses_;
      improved_ = false;
    }
    return misses_ >= patience_;
  }

  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int misses_ = 0;
  bool improved_ = false;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Epoch loop with early stopping. `run_epoch(e)` trains one epoch and returns
/// its mean training loss; `validate(e)` returns the validation loss. The
/// parameters of the best epoch are restored before returning.
inline TrainHistory fit(const std::vector<Parameter*>& params, const TrainConfig& cfg,
                        const std::function<double(int)>& run_epoch, const std::function<double(int)>& validate) {
  cfg.validate();
  TrainHistory h;
  EarlyStopping stop(cfg.patience);
  std::vector<Mat> best;
  auto snapshot = [&] {
    best.clear();
    for (auto* p : params) best.push_back(p->value);
  };
  snapshot();
  for (int e = 1; e <= cfg.max_epochs; ++e) {
    const double tl = run_epoch(e);
    if (!std::isfinite(tl)) throw DivergenceError("training loss became non-finite at epoch " + std::to_string(e), h);
    const double vl = validate(e);
    if (!std::isfinite(vl)) throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(e), h);
    h.epochs.push_back({e, tl, vl});
    const bool halt = stop.observe(vl);
    if (stop.improved()) snapshot();
    if (halt) {
      h.early_stopped = true;
      break;
    }
  }
  h.best_epoch = stop.best_epoch();
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  return h;
}

}  // namespace loopflow::nn
