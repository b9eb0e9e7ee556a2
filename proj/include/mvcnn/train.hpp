#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvcnn/data.hpp"
#include "mvcnn/model.hpp"
#include "mvcnn/tensor.hpp"
#include "mvcnn/views.hpp"

namespace mvcnn::train {

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor d_logits;
};

/// Mean negative log-probability of the true classes, with probabilities
/// clamped to 1e-12 before the log, and the fused gradient with respect to
/// the logits, (p - y) / n. Labels must be one-hot rows; a malformed row
/// raises LabelError with its index. Optional per-class weights rescale each
/// sample's term by weight[true class] and normalize by the batch's total
/// weight; empty weights mean uniform.
CrossEntropyResult cross_entropy(const Tensor& probabilities, const Tensor& onehot_labels,
                                 const std::vector<float>& class_weights = {});

/// Inverse-frequency weights: total / (class_count * count_c). Classes absent
/// from the histogram get weight 0 (they cannot appear in a batch either).
std::vector<float> inverse_frequency_weights(const std::vector<size_t>& class_histogram);

/// Gradients of the scalar loss for every stage, parallel to model.layers.
/// Pool entries stay empty.
struct LayerGrads {
  Tensor d_weights;
  std::vector<float> d_bias, d_gamma, d_beta;
};
struct ModelGrads {
  std::vector<LayerGrads> layers;
  Tensor d_input;
};

/// Full backward pass through the cached forward. The cache's mode decides
/// the norm rule: train-mode caches backpropagate through the batch
/// statistics; infer-mode caches treat the norm as the fixed affine map it
/// applied.
ModelGrads backward(const model::Model& model, const model::ActivationCache& cache,
                    const Tensor& d_logits);

/// Backward pass that stops at conv stage `layer_index` and returns the
/// gradient with respect to that stage's post-ReLU activation (the heatmap
/// target). `d_logits` here is the gradient seeded at the dense output.
Tensor backward_to_activation(const model::Model& model, const model::ActivationCache& cache,
                              const Tensor& d_logits, size_t layer_index);

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// First/second moment estimates for every trainable array of a model, in
/// the fixed order (weights, bias, norm scale, norm shift) per layer.
struct AdamState {
  AdamConfig hyper;
  int64_t t = 0;
  std::vector<std::vector<float>> m, v;

  static AdamState init(const model::Model& model, const AdamConfig& hyper);
};

/// One Adam update on a raw array: m and v are updated in place with the
/// standard exponential moments, then param -= lr * m_hat / (sqrt(v_hat) +
/// epsilon). `t` is the 1-based step count after the increment.
void adam_update(float* param, const float* grad, float* m, float* v, size_t count,
                 const AdamConfig& hyper, int64_t t);

/// Applies one optimization step to every trainable array of the model.
void adam_step(model::Model& model, const ModelGrads& grads, AdamState& state);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  AdamConfig adam;
  float dropout_rate = 0.2f;
  uint64_t seed = 0;
  views::ViewParams view_params;
  bool weight_by_class = false;  // inverse-frequency loss weighting
  int checkpoint_every = 0;      // extra checkpoint cadence; 0 = best-only
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0, train_acc = 0.0;
  double val_loss = 0.0, val_acc = 0.0;
  double seconds = 0.0;  // wall time of the training pass only
};

struct History {
  std::vector<EpochRecord> epochs;
};

/// CSV with header `epoch,train_loss,train_acc,val_loss,val_acc,seconds`,
/// one row per epoch, floats with 6 decimals.
void write_history_csv(const std::string& path, const History& history);

/// One pass over the training set: shuffled batches fixed by (config.seed,
/// epoch_index), forward in train mode, loss, backward, Adam step. Returns
/// the mean loss and accuracy over the epoch (seconds left at 0; fit fills
/// it). Decode failures abort the epoch with the sample's path.
EpochStats train_epoch(model::Model& model, const data::Dataset& train_set,
                       const TrainConfig& config, AdamState& state, uint64_t epoch_index);

/// Mean loss and accuracy of the model on a dataset, in infer mode.
EpochStats evaluate(const model::Model& model, const data::Dataset& dataset,
                    const TrainConfig& config);

/// Full training loop: per-epoch train pass and infer-mode validation.
/// When out_dir is non-empty it receives history.csv (rewritten after every
/// epoch), checkpoint_best.mvck (highest validation accuracy) and, when
/// checkpoint_every > 0, checkpoint_epoch_<e>.mvck on that cadence. The
/// model's dropout rate is taken from config.
History fit(model::Model& model, const data::Dataset& train_set, const data::Dataset& val_set,
            const TrainConfig& config, const std::string& out_dir = "");

}  // namespace mvcnn::train
