#pragma once

#include <functional>
#include <optional>

#include "lasi/classifier.hpp"
#include "lasi/metrics.hpp"

namespace lasi::train {

struct TrainConfig {
  double lr = 2e-5;
  double weight_decay = 0.01;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 1;  // fixed worker count; part of the reproducibility contract

  void validate() const;
};

/// Per-parameter first/second moment accumulators with a shared step counter.
template <class T>
struct AdamState {
  struct Moments {
    std::vector<T> m, v;
  };
  std::vector<Moments> slots;
  int64_t step = 0;

  void ensure(const nn::ParamList<T>& params);
};

/// Bias-corrected Adam update with decoupled weight decay (the decay term
/// param -= lr*wd*param is applied separately from the moment update).
/// Aborts with the parameter name on a non-finite gradient.
template <class T>
void adam_step(nn::ParamList<T>& params, AdamState<T>& state, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double loss_cls = 0;
  double loss_aux = 0;
  bool has_aux = false;
  double val_accuracy = 0;
  double wall_seconds = 0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  int best_epoch = 0;  // 1-based; earliest epoch wins ties
  double best_val_accuracy = 0;
};

/// Fine-tuning loop: seeded shuffled mini-batches, per-epoch validation
/// accuracy, best-epoch checkpointing (the model's parameters are restored to
/// the best epoch before returning).
TrainResult train_model(StitchedModel<float>& model, std::span<const data::LasiExample> train_ex,
                        std::span<const data::LasiExample> val_ex, const TrainConfig& cfg);

/// Deterministic evaluation; the perturbation, when given, is applied to each
/// example first (per-(doc_id,k) seeding) and never changes the example
/// count.
Metrics evaluate(const StitchedModel<float>& model, std::span<const data::LasiExample> examples,
                 const std::optional<data::PerturbationSpec>& perturbation = {});

/// Label predictions for an example set (perturbation applied first).
std::vector<int> predict_all(const StitchedModel<float>& model,
                             std::span<const data::LasiExample> examples,
                             const std::optional<data::PerturbationSpec>& perturbation = {});

struct FeatureBasedResult {
  Tensor<float> weight, bias;
  double train_accuracy = 0;
  Metrics test_metrics;
};

/// Experiment-I baseline: pooled [CLS] features from a frozen encoder feed a
/// multinomial softmax classifier (full-batch Adam on the head only).
FeatureBasedResult feature_based_fit(const lm::EncoderModel<float>& frozen_encoder,
                                     std::span<const data::LasiExample> train_ex,
                                     std::span<const data::LasiExample> test_ex,
                                     const TrainConfig& cfg);

// ---- shared batch machinery (also used by pretraining) ----------------------

struct BatchItemOut {
  Tensor<float> loss;
  double loss_cls = 0;
  double loss_aux = 0;
  bool has_aux = false;
};

using BatchItemFn = std::function<BatchItemOut(int index, Rng& rng)>;

struct BatchStats {
  double loss = 0, loss_cls = 0, loss_aux = 0;
  bool has_aux = false;
  int count = 0;
};

/// Runs the items of one mini-batch (optionally across a fixed number of
/// workers), accumulates parameter gradients in deterministic worker order,
/// and scales them to the batch mean.
BatchStats run_batch(nn::ParamList<float>& params, std::span<const int> indices,
                     const BatchItemFn& fn, uint64_t seed_base, int threads);

struct PretrainResult {
  std::vector<double> epoch_losses;
};

/// Generic pretraining loop over example losses (MLM / CLM / denoising).
PretrainResult pretrain_loop(nn::ParamList<float>& params, int n_examples, const BatchItemFn& fn,
                             const TrainConfig& cfg);

}  // namespace lasi::train
