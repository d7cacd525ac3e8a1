#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "riskcause/model.hpp"
#include "riskcause/rng.hpp"
#include "riskcause/scene.hpp"

namespace riskcause {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 5e-4;
  double weight_decay = 5e-4;
  bool intervention_enabled = true;
  /// Probability that an eligible Go sample is actually intervened. At 1.0
  /// every eligible sample carries a mask hole, which lets the model read
  /// the label off the hole itself on clean renders; mixing in untouched Go
  /// samples removes that shortcut. 1.0 restores the always-intervene rule.
  double intervention_rate = 0.5;
  double val_fraction = 0.1;  // held out from the train list, by manifest order
  uint64_t rng_seed = 0;

  void validate() const;  // throws DataError on non-positive hyperparameters
};

std::string train_config_to_json(const TrainConfig& config);

/// Cross entropy -log s_label, with the log argument clamped at 1e-12.
double cross_entropy(const Prediction& prediction, Behavior label);

/// Algorithm-1 target selection: only Go samples with more than one object
/// are eligible; an eligible sample is intervened with the given rate, on
/// one uniformly random tracklet.
std::optional<int> sample_intervention(const Episode& episode, bool intervention_enabled, Rng& rng,
                                       double rate = 1.0);

/// Decoupled weight decay Adam. Moments are kept in double regardless of the
/// model scalar; params update in place (float32 storage).
class AdamW {
 public:
  AdamW(const ModelParams& params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  template <typename S>
  void step(ModelParams& params, const Grads<S>& grads);

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

struct TrainResult {
  ModelParams params;        // best-validation snapshot
  ModelConfig config;
  std::vector<EpochMetrics> history;
  int best_epoch = -1;
  double best_val_accuracy = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Full training loop over in-memory episodes (the train split, in manifest
/// order; the last val_fraction of it is held out for checkpoint selection).
/// Deterministic given rng_seed. Throws DataError when the train portion has
/// a single class and NumericError when the loss goes non-finite.
TrainResult train(const std::vector<const Episode*>& train_episodes, const ModelConfig& model_config,
                  const TrainConfig& train_config, const EpochCallback& on_epoch = {});

}  // namespace riskcause
