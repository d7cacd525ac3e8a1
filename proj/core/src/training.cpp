#include "riskcause/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nlohmann/json.hpp"
#include "riskcause/errors.hpp"
#include "riskcause/intervention.hpp"

namespace riskcause {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs <= 0) throw DataError("train config: epochs must be positive");
  if (batch_size <= 0) throw DataError("train config: batch size must be positive");
  if (learning_rate <= 0) throw DataError("train config: learning rate must be positive");
  if (weight_decay < 0) throw DataError("train config: weight decay must be non-negative");
  if (intervention_rate < 0 || intervention_rate > 1)
    throw DataError("train config: intervention rate must be in [0, 1]");
  if (val_fraction < 0 || val_fraction >= 1)
    throw DataError("train config: val fraction must be in [0, 1)");
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["intervention_enabled"] = c.intervention_enabled;
  j["intervention_rate"] = c.intervention_rate;
  j["val_fraction"] = c.val_fraction;
  j["rng_seed"] = c.rng_seed;
  return j.dump();
}

double cross_entropy(const Prediction& prediction, Behavior label) {
  const double p = label == Behavior::go ? prediction.s_go : prediction.s_stop;
  return -std::log(std::max(p, 1e-12));
}

std::optional<int> sample_intervention(const Episode& episode, bool intervention_enabled, Rng& rng,
                                       double rate) {
  if (!intervention_enabled) return std::nullopt;
  if (episode.label != Behavior::go) return std::nullopt;
  const size_t n = episode.tracklets.size();
  if (n <= 1) return std::nullopt;
  if (rate < 1.0 && !rng.bernoulli(rate)) return std::nullopt;
  std::vector<int> ids;
  ids.reserve(n);
  for (const auto& t : episode.tracklets) ids.push_back(t.id);
  std::sort(ids.begin(), ids.end());
  return ids[rng.uniform_index(n)];
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamW::AdamW(const ModelParams& params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params.tensors.size());
  v_.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

template <typename S>
void AdamW::step(ModelParams& params, const Grads<S>& grads) {
  if (grads.g.size() != params.tensors.size())
    throw DataError("optimizer: gradient layout mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& theta = params.tensors[ti].v;
    const auto& g = grads.g[ti];
    auto& m = m_[ti];
    auto& v = v_[ti];
    for (size_t i = 0; i < theta.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      const double updated =
          static_cast<double>(theta[i]) * (1.0 - lr_ * wd_) - lr_ * mhat / (std::sqrt(vhat) + eps_);
      theta[i] = static_cast<float>(updated);
    }
  }
}

template void AdamW::step(ModelParams&, const Grads<float>&);
template void AdamW::step(ModelParams&, const Grads<double>&);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(const std::vector<const Episode*>& train_episodes,
                  const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();

  const int total = static_cast<int>(train_episodes.size());
  const int n_val = static_cast<int>(std::lround(total * train_config.val_fraction));
  const int n_fit = total - n_val;
  if (n_fit <= 0) throw DataError("train: no training episodes after validation holdout");

  bool has_go = false, has_stop = false;
  for (int i = 0; i < n_fit; ++i)
    (train_episodes[i]->label == Behavior::go ? has_go : has_stop) = true;
  if (!has_go || !has_stop) throw DataError("train: training split must contain both classes");

  ModelParams params = init_params(model_config, derive_seed(train_config.rng_seed, 0));
  DrivingModel<float> model(model_config, params);
  AdamW optimizer(params, train_config.learning_rate, train_config.weight_decay);

  Rng shuffle_rng(derive_seed(train_config.rng_seed, 1));
  Rng intervention_rng(derive_seed(train_config.rng_seed, 2));
  Rng dropout_rng(derive_seed(train_config.rng_seed, 3));

  TrainResult result;
  result.config = model_config;
  result.params = params;

  std::vector<int> order(n_fit);
  for (int i = 0; i < n_fit; ++i) order[i] = i;

  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    for (int i = n_fit - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    double epoch_loss = 0;
    int epoch_correct = 0;
    Grads<float> grads(params);

    for (int start = 0; start < n_fit; start += train_config.batch_size) {
      const int end = std::min(n_fit, start + train_config.batch_size);
      grads.zero();
      double batch_loss = 0;

      for (int bi = start; bi < end; ++bi) {
        const Episode& ep = *train_episodes[order[bi]];
        const std::optional<int> target =
            sample_intervention(ep, train_config.intervention_enabled, intervention_rng,
                                train_config.intervention_rate);
        // Stop samples are never intervened; the supervision label is always
        // the original one.
        if (target.has_value() && ep.label != Behavior::go)
          throw NumericError("train: intervention selected for a Stop sample");
        const uint64_t drop_seed = dropout_rng.next_u64();

        ModelInput<float> input = target.has_value()
                                      ? intervened_input<float>(ep, *target, model_config.mask_type)
                                      : plain_input<float>(ep);
        ForwardResult<float> fwd;
        const float loss =
            model.accumulate_gradients(input, ep.label, /*training=*/true, drop_seed, grads, &fwd);
        batch_loss += loss;
        epoch_loss += loss;
        if (fwd.prediction.label() == ep.label) ++epoch_correct;
      }

      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "train: non-finite loss at epoch " << epoch << ", batch starting at sample "
           << start;
        throw NumericError(os.str());
      }

      const float inv = 1.0f / static_cast<float>(end - start);
      for (auto& t : grads.g)
        for (auto& x : t) x *= inv;
      optimizer.step(params, grads);
      model.refresh(params);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / n_fit;
    m.train_accuracy = static_cast<double>(epoch_correct) / n_fit;

    if (n_val > 0) {
      double val_loss = 0;
      int val_correct = 0;
      for (int i = n_fit; i < total; ++i) {
        const Episode& ep = *train_episodes[i];
        ModelInput<float> input = plain_input<float>(ep);
        const ForwardResult<float> fwd = model.forward(input);
        val_loss += cross_entropy(fwd.prediction, ep.label);
        if (fwd.prediction.label() == ep.label) ++val_correct;
      }
      m.val_loss = val_loss / n_val;
      m.val_accuracy = static_cast<double>(val_correct) / n_val;
    }

    result.history.push_back(m);
    const double criterion = n_val > 0 ? m.val_accuracy : m.train_accuracy;
    if (result.best_epoch < 0 || criterion > result.best_val_accuracy) {
      result.best_epoch = epoch;
      result.best_val_accuracy = criterion;
      result.params = params;
    }
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace riskcause
