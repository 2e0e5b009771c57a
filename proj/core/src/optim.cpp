#include "segmil/optim.hpp"

#include <cmath>
#include <numeric>

#include "segmil/layers.hpp"

namespace segmil {

void TrainConfig::Validate() const {
  if (!(learning_rate > 0.0) || !(decay_rate > 0.0) || decay_rate > 1.0 || decay_every_epochs <= 0 ||
      batch_size <= 0 || patience <= 0 || max_epochs <= 0 || validation_fraction < 0.0 ||
      validation_fraction >= 1.0) {
    throw Error(ErrorCode::kInvalidConfig, "training hyperparameters out of range");
  }
}

double LrSchedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw Error(ErrorCode::kInvalidConfig, "negative epoch");
  return cfg.learning_rate * std::pow(cfg.decay_rate, epoch / cfg.decay_every_epochs);
}

template <typename T>
void AdamUpdate(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, long step,
                double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam state does not match parameters");
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(hyper.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    params[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), T(0));
    v_.emplace_back(p->value.size(), T(0));
  }
}

template <typename T>
void Adam<T>::Step(double lr) {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    AdamUpdate<T>(params_[i]->value.values(), params_[i]->grad.values(), m_[i], v_[i], step_, lr, hyper_);
  }
}

bool EarlyStopping::Update(double loss) {
  ++epoch_;
  last_improved_ = loss < best_;
  if (last_improved_) {
    best_ = loss;
    best_epoch_ = epoch_;
    wait_ = 0;
    return false;
  }
  return ++wait_ >= patience_;
}

TrainLog RunTrainLoop(const TrainConfig& cfg, std::size_t num_train, const std::vector<Param<float>*>& params,
                      const TrainCallbacks& callbacks) {
  cfg.Validate();
  if (num_train == 0) throw Error(ErrorCode::kDegenerateData, "no training examples");
  Rng rng(DeriveSeed(cfg.seed, "batch-order"));
  Adam<float> adam(params);
  EarlyStopping stopper(cfg.patience);
  TrainLog log;

  std::vector<std::vector<float>> best(params.size());
  auto snapshot = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) {
      best[i].assign(params[i]->value.values().begin(), params[i]->value.values().end());
    }
  };
  snapshot();

  std::vector<std::size_t> order(num_train);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = LrSchedule(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < num_train; start += batch) {
      const std::size_t n = std::min(batch, num_train - start);
      ZeroGrads(params);
      const double loss = callbacks.train_batch(std::span<const std::size_t>(order.data() + start, n));
      loss_sum += loss * static_cast<double>(n);
      adam.Step(lr);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(num_train);
    bool stop = false;
    if (callbacks.validate) {
      const auto val = callbacks.validate();
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
      stop = stopper.Update(val.loss);
      if (stopper.last_improved()) snapshot();
    } else {
      snapshot();
      log.best_epoch = epoch;
    }
    log.epochs.push_back(rec);
    if (stop) {
      log.stopped_early = true;
      break;
    }
  }
  if (callbacks.validate) {
    log.best_epoch = stopper.best_epoch();
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(best[i].begin(), best[i].end(), params[i]->value.values().begin());
    }
  }
  return log;
}

template void AdamUpdate<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>, long,
                                double, const AdamHyper&);
template void AdamUpdate<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                 long, double, const AdamHyper&);
template class Adam<float>;
template class Adam<double>;

}  // namespace segmil
