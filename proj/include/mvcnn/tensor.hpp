#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvcnn/errors.hpp"

namespace mvcnn {

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;
  int64_t numel() const { return int64_t(n) * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense rank-4 float32 tensor in row-major (n, c, h, w) order.
///
/// Tensors are plain values: the layer operations below never mutate their
/// inputs and return fresh tensors, so a constructed tensor can be shared
/// across threads freely. Mutable access exists only to fill a tensor while
/// it is being built.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w);  // zero-filled
  static Tensor from(Shape4 shape, std::vector<float> values);

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  int64_t numel() const { return shape_.numel(); }

  float& at(int n, int c, int y, int x) {
    return data_[((int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  // Start of sample n / of channel c within sample n.
  float* sample(int n) { return data() + int64_t(n) * shape_.c * shape_.h * shape_.w; }
  const float* sample(int n) const { return data() + int64_t(n) * shape_.c * shape_.h * shape_.w; }
  float* channel(int n, int c) { return sample(n) + int64_t(c) * shape_.h * shape_.w; }
  const float* channel(int n, int c) const { return sample(n) + int64_t(c) * shape_.h * shape_.w; }

  bool all_finite() const;

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

/// Trainable state of one layer. Convolution layers carry the batch-norm
/// vectors of the norm that follows them; the dense head leaves them empty.
struct LayerParams {
  Tensor weights;  // conv: (out, in, k, k); dense: (out, in, 1, 1)
  std::vector<float> bias;
  std::vector<float> bn_gamma, bn_beta, bn_running_mean, bn_running_var;
  bool has_bn() const { return !bn_gamma.empty(); }
};

/// Gradients of a scalar loss with respect to a layer's input and parameters.
struct GradBundle {
  Tensor d_input;
  Tensor d_weights;
  std::vector<float> d_bias;
};

struct BnGrads {
  Tensor d_input;
  std::vector<float> d_gamma, d_beta;
};

// Per-channel batch statistics saved by a train-mode forward pass.
struct BnCache {
  std::vector<float> mean, inv_std;
};

enum class Mode { Train, Infer };

// ---- layer primitives ----
// All convolutions are stride 1, valid padding (no padding); output spatial
// dims are (h - k + 1, w - k + 1). Pooling is 2x2 stride 2 with floor
// semantics: an odd trailing row/column is dropped.

Tensor conv2d_forward(const Tensor& input, const LayerParams& params);
GradBundle conv2d_backward(const Tensor& input, const LayerParams& params, const Tensor& d_output);

Tensor relu(const Tensor& input);
// Gradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& d_output);

struct PoolResult {
  Tensor output;
  // Flat (y*w + x) index into the source channel of the chosen maximum, one
  // per output element; ties resolve to the first position in row-major scan
  // order of the 2x2 window.
  std::vector<int32_t> argmax;
};
PoolResult maxpool2d(const Tensor& input);
Tensor maxpool2d_backward(const Shape4& input_shape, const std::vector<int32_t>& argmax,
                          const Tensor& d_output);

/// Per-channel normalization over (n, h, w). Train mode normalizes with batch
/// statistics and folds them into the running estimates as
/// running <- (1 - momentum) * running + momentum * batch; infer mode uses the
/// running estimates. The const overload serves infer mode only.
Tensor batchnorm_forward(const Tensor& input, LayerParams& params, Mode mode,
                         float momentum = 0.1f, float epsilon = 1e-5f, BnCache* cache = nullptr);
Tensor batchnorm_forward(const Tensor& input, const LayerParams& params, Mode mode,
                         float momentum = 0.1f, float epsilon = 1e-5f);
BnGrads batchnorm_backward(const Tensor& input, const LayerParams& params, const BnCache& cache,
                           const Tensor& d_output, float epsilon = 1e-5f);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape4& input_shape, const Tensor& d_output);

Tensor dense_forward(const Tensor& input, const LayerParams& params);
GradBundle dense_backward(const Tensor& input, const LayerParams& params, const Tensor& d_output);

// Softmax along the channel axis, max-subtracted for stability.
Tensor softmax(const Tensor& logits);

struct DropoutResult {
  Tensor output;
  std::vector<uint8_t> mask;  // 1 = kept; empty in infer mode or rate 0
};
/// Inverted dropout: train mode zeroes with probability `rate` and scales
/// survivors by 1/(1-rate); infer mode is the identity. The mask is a pure
/// function of the seed.
DropoutResult dropout(const Tensor& input, float rate, Mode mode, uint64_t seed);
Tensor dropout_backward(const std::vector<uint8_t>& mask, float rate, const Tensor& d_output);

}  // namespace mvcnn
