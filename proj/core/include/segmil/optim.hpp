#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "segmil/rng.hpp"
#include "segmil/tensor.hpp"

namespace segmil {

struct TrainConfig {
  double learning_rate = 0.001;
  double decay_rate = 0.8;
  int decay_every_epochs = 2;
  int batch_size = 128;
  int patience = 3;
  int max_epochs = 30;
  std::uint64_t seed = 1;
  double validation_fraction = 0.1;  // of training utterances

  void Validate() const;
};

// Staircase exponential decay: lr * decay^floor(epoch / every).
double LrSchedule(int epoch, const TrainConfig& cfg);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update. `step` is 1-based.
template <typename T>
void AdamUpdate(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, long step,
                double lr, const AdamHyper& hyper = {});

template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Param<T>*> params, AdamHyper hyper = {});
  void Step(double lr);
  long steps() const { return step_; }

 private:
  std::vector<Param<T>*> params_;
  AdamHyper hyper_;
  std::vector<std::vector<T>> m_, v_;
  long step_ = 0;
};

// Stops once the monitored loss has failed to improve for `patience`
// consecutive epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // Returns true when training should stop after this epoch.
  bool Update(double loss);
  bool last_improved() const { return last_improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = -1;
  int best_epoch_ = -1;
  int wait_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool last_improved_ = false;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  bool stopped_early = false;
};

struct LossAndAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainCallbacks {
  // Forward + backward on the given training indices (mean loss, gradients
  // accumulated into zeroed parameter grads).
  std::function<double(std::span<const std::size_t>)> train_batch;
  // Held-out evaluation; optional. Without it every epoch counts as improved.
  std::function<LossAndAccuracy()> validate;
};

// Mini-batch Adam with per-epoch learning-rate schedule and early stopping.
// On return the parameters hold the best-validation snapshot.
TrainLog RunTrainLoop(const TrainConfig& cfg, std::size_t num_train, const std::vector<Param<float>*>& params,
                      const TrainCallbacks& callbacks);

}  // namespace segmil
