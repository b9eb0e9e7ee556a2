#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mvcnn/tensor.hpp"
#include "mvcnn/views.hpp"

namespace mvcnn::model {

enum class LayerKind : uint8_t { Conv = 1, Pool = 2, Dense = 3 };

/// One stage of the network plan. Convolutions are stride-1 valid 3x3 (the
/// kernel edge is configurable), each followed by ReLU and a per-channel batch
/// norm. Pools are fixed 2x2 stride 2. The dense stage is the classifier head
/// reached through global average pooling and dropout.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int out_channels = 0;  // conv filters / dense outputs; ignored for pools
  int kernel = 3;        // conv kernel edge; ignored otherwise
};

/// The full-size plan: seven 3x3 convolutions with 32, 32, 64, 64, 128, 128,
/// 256 filters and 2x2 pools after the second, fourth, sixth and seventh.
/// Sized for 256x256 inputs.
std::vector<LayerSpec> default_conv_plan();

/// Reduced plan with the same block structure (16, 16, P, 32, 32, P, 64, P)
/// for small inputs such as 64x64.
std::vector<LayerSpec> compact_conv_plan();

struct ModelConfig {
  views::ViewCombination combo = views::ViewCombination::RgbGm;
  int input_h = 256;
  int input_w = 256;
  int class_count = 38;
  float dropout_rate = 0.2f;
  std::vector<LayerSpec> conv_plan = default_conv_plan();
};

struct Layer {
  LayerSpec spec;
  LayerParams params;
};

/// A built network: the conv/pool stages of the plan followed by one dense
/// layer. Immutable during inference; train-mode forward passes update the
/// batch-norm running statistics and therefore need exclusive access.
struct Model {
  ModelConfig config;
  std::vector<Layer> layers;
  uint64_t seed = 0;

  int input_channels() const { return views::channel_count(config.combo); }
};

/// Human-readable stage name for error messages: "conv3", "pool2", "dense".
std::string layer_name(const std::vector<LayerSpec>& plan, size_t index);

/// Output (h, w) after each conv/pool stage of the plan for the given input
/// size. Throws ConfigError naming the first stage whose input is smaller
/// than its window.
std::vector<std::pair<int, int>> spatial_trace(const ModelConfig& config);

/// Deterministically initializes a model from the seed: conv and dense
/// weights are uniform in +-sqrt(2 / fan_in) on a per-layer stream, biases
/// zero, norm scale 1 / shift 0, running statistics at mean 0 / variance 1.
Model build_model(const ModelConfig& config, uint64_t seed);

/// Everything a forward pass computed, retained for backward passes and for
/// activation heatmaps. Entries of `layers` parallel the model's layers; the
/// classifier head's tensors live in the named fields.
struct LayerTrace {
  Tensor pre_act;                  // conv output before ReLU
  Tensor activated;                // ReLU output, input of the norm
  BnCache bn;                      // statistics the norm applied
  Shape4 pool_in_shape;            // pool layers: input shape
  std::vector<int32_t> pool_argmax;
  Tensor output;                   // stage output (empty for the dense entry)
};

struct ActivationCache {
  Mode mode = Mode::Infer;
  Tensor input;
  std::vector<LayerTrace> layers;
  Tensor gap_out;          // (n, c, 1, 1)
  DropoutResult dropout;   // mask empty in infer mode
  Tensor dense_in;         // dropout output, input of the dense layer
  Tensor logits;
  Tensor probs;
};

/// Runs the network on a batch of view stacks. Returns class probabilities of
/// shape (n, class_count, 1, 1); if `cache` is given it is filled with the
/// intermediate activations. `seed` drives dropout and is ignored in infer
/// mode. Train mode updates the batch-norm running statistics.
Tensor forward(Model& model, const Tensor& batch, Mode mode, uint64_t seed,
               ActivationCache* cache = nullptr);
/// Infer-mode-only overload for shared (const) models.
Tensor forward(const Model& model, const Tensor& batch, Mode mode, uint64_t seed,
               ActivationCache* cache = nullptr);

struct ParamCount {
  int64_t trainable = 0;
  int64_t total = 0;  // trainable plus the norm running statistics
};
ParamCount count_parameters(const Model& model);

/// Checkpoint file: magic "MVCK", u16 version, u16 layer count, u32 class
/// count, u16 input channel count (all little-endian); per layer a kind byte,
/// the weight shape as four u32, then the parameter arrays as raw
/// little-endian float32 in the order weights, bias, and for conv layers
/// norm scale, shift, running mean, running variance; finally the CRC32 of
/// everything after the 14-byte header.
void save_checkpoint(const Model& model, const std::string& path);

/// Loads a checkpoint. `expected_class_count` of 0 skips the check; otherwise
/// a mismatch raises CheckpointError naming the dense layer. Input size and
/// dropout rate are not stored in the file and come back as the defaults.
Model load_checkpoint(const std::string& path, int expected_class_count = 0);

}  // namespace mvcnn::model
