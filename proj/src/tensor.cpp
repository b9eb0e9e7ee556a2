#include "mvcnn/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <sstream>

#include "mvcnn/util.hpp"

namespace mvcnn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

Tensor::Tensor(int n, int c, int h, int w) : shape_{n, c, h, w} {
  if (n < 1 || c < 1 || h < 1 || w < 1) {
    throw DimensionError("tensor dimensions must all be >= 1, got " + shape_.str());
  }
  data_.assign(static_cast<size_t>(shape_.numel()), 0.0f);
}

Tensor Tensor::from(Shape4 shape, std::vector<float> values) {
  Tensor t(shape.n, shape.c, shape.h, shape.w);
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
  }
  t.data_ = std::move(values);
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---- convolution ----

namespace {

// Unpacks the receptive fields of one sample into a (c*k*k) x (oh*ow) matrix,
// row index ((c*k + ky)*k + kx), column index y*ow + x.
void im2col(const float* src, int c, int h, int w, int k, float* col) {
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  float* dst = col;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = src + static_cast<int64_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int y = 0; y < oh; ++y) {
          const float* row = plane + (y + ky) * w + kx;
          std::memcpy(dst, row, static_cast<size_t>(ow) * sizeof(float));
          dst += ow;
        }
      }
    }
  }
}

// Scatter-add of a column matrix back onto one sample's image.
void col2im_add(const float* col, int c, int h, int w, int k, float* dst) {
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  const float* src = col;
  for (int ch = 0; ch < c; ++ch) {
    float* plane = dst + static_cast<int64_t>(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        for (int y = 0; y < oh; ++y) {
          float* row = plane + (y + ky) * w + kx;
          for (int x = 0; x < ow; ++x) row[x] += src[x];
          src += ow;
        }
      }
    }
  }
}

void check_conv_shapes(const Tensor& input, const LayerParams& params) {
  const Shape4& ws = params.weights.shape();
  if (ws.h != ws.w) {
    throw DimensionError("conv2d: kernel must be square, got " + ws.str());
  }
  if (input.c() != ws.c) {
    throw DimensionError("conv2d: input channel axis c=" + std::to_string(input.c()) +
                         " does not match kernel in_channels=" + std::to_string(ws.c));
  }
  if (ws.h > input.h() || ws.w > input.w()) {
    throw DimensionError("conv2d: kernel size " + std::to_string(ws.h) +
                         " exceeds input spatial axes (h=" + std::to_string(input.h()) +
                         ", w=" + std::to_string(input.w()) + ")");
  }
  if (static_cast<int>(params.bias.size()) != ws.n) {
    throw DimensionError("conv2d: bias length " + std::to_string(params.bias.size()) +
                         " does not match out_channels=" + std::to_string(ws.n));
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const LayerParams& params) {
  check_conv_shapes(input, params);
  const Shape4& ws = params.weights.shape();
  const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
  const int o = ws.n, k = ws.h;
  const int oh = h - k + 1, ow = w - k + 1;
  const int ckk = c * k * k;
  const int spatial = oh * ow;

  Tensor out(n, o, oh, ow);
  ConstMapMat wm(params.weights.data(), o, ckk);

  parallel_for(n, [&](int64_t begin, int64_t end) {
    std::vector<float> col(static_cast<size_t>(ckk) * spatial);
    for (int64_t s = begin; s < end; ++s) {
      im2col(input.sample(static_cast<int>(s)), c, h, w, k, col.data());
      ConstMapMat cm(col.data(), ckk, spatial);
      MapMat om(out.sample(static_cast<int>(s)), o, spatial);
      om.noalias() = wm * cm;
      for (int oc = 0; oc < o; ++oc) om.row(oc).array() += params.bias[oc];
    }
  });
  return out;
}

GradBundle conv2d_backward(const Tensor& input, const LayerParams& params, const Tensor& d_output) {
  check_conv_shapes(input, params);
  const Shape4& ws = params.weights.shape();
  const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
  const int o = ws.n, k = ws.h;
  const int oh = h - k + 1, ow = w - k + 1;
  const Shape4 expect{n, o, oh, ow};
  if (d_output.shape() != expect) {
    throw DimensionError("conv2d_backward: d_output shape " + d_output.shape().str() +
                         " does not match forward output " + expect.str());
  }
  const int ckk = c * k * k;
  const int spatial = oh * ow;

  GradBundle g;
  g.d_input = Tensor(n, c, h, w);
  g.d_weights = Tensor(o, c, k, k);
  g.d_bias.assign(static_cast<size_t>(o), 0.0f);

  // d_bias: plain reduction over batch and spatial positions, in order.
  for (int oc = 0; oc < o; ++oc) {
    double acc = 0.0;
    for (int s = 0; s < n; ++s) {
      const float* plane = d_output.channel(s, oc);
      for (int i = 0; i < spatial; ++i) acc += plane[i];
    }
    g.d_bias[static_cast<size_t>(oc)] = static_cast<float>(acc);
  }

  ConstMapMat wm(params.weights.data(), o, ckk);

  // d_input: independent per sample.
  parallel_for(n, [&](int64_t begin, int64_t end) {
    std::vector<float> colg(static_cast<size_t>(ckk) * spatial);
    for (int64_t s = begin; s < end; ++s) {
      ConstMapMat dom(d_output.sample(static_cast<int>(s)), o, spatial);
      MapMat cg(colg.data(), ckk, spatial);
      cg.noalias() = wm.transpose() * dom;
      col2im_add(colg.data(), c, h, w, k, g.d_input.sample(static_cast<int>(s)));
    }
  });

  // d_weights: per-sample products computed independently, then reduced in
  // sample order so the result does not depend on the worker count.
  std::vector<float> per_sample(static_cast<size_t>(n) * o * ckk);
  parallel_for(n, [&](int64_t begin, int64_t end) {
    std::vector<float> col(static_cast<size_t>(ckk) * spatial);
    for (int64_t s = begin; s < end; ++s) {
      im2col(input.sample(static_cast<int>(s)), c, h, w, k, col.data());
      ConstMapMat cm(col.data(), ckk, spatial);
      ConstMapMat dom(d_output.sample(static_cast<int>(s)), o, spatial);
      MapMat dwm(per_sample.data() + s * o * ckk, o, ckk);
      dwm.noalias() = dom * cm.transpose();
    }
  });
  MapMat dw(g.d_weights.data(), o, ckk);
  for (int s = 0; s < n; ++s) {
    dw += ConstMapMat(per_sample.data() + static_cast<int64_t>(s) * o * ckk, o, ckk);
  }
  return g;
}

// ---- relu ----

Tensor relu(const Tensor& input) {
  Tensor out(input.n(), input.c(), input.h(), input.w());
  const float* src = input.data();
  float* dst = out.data();
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& d_output) {
  if (input.shape() != d_output.shape()) {
    throw DimensionError("relu_backward: d_output shape " + d_output.shape().str() +
                         " does not match input " + input.shape().str());
  }
  Tensor out(input.n(), input.c(), input.h(), input.w());
  const float* src = input.data();
  const float* dy = d_output.data();
  float* dst = out.data();
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? dy[i] : 0.0f;
  return out;
}

// ---- max pooling ----

PoolResult maxpool2d(const Tensor& input) {
  const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
  if (h < 2 || w < 2) {
    throw DimensionError("maxpool2d: spatial axes must be >= 2, got h=" + std::to_string(h) +
                         ", w=" + std::to_string(w));
  }
  const int oh = h / 2, ow = w / 2;
  PoolResult res;
  res.output = Tensor(n, c, oh, ow);
  res.argmax.resize(static_cast<size_t>(res.output.numel()));
  int64_t idx = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = input.channel(s, ch);
      float* out = res.output.channel(s, ch);
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          int best = (2 * y) * w + 2 * x;
          float bv = plane[best];
          const int cand[3] = {(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                               (2 * y + 1) * w + 2 * x + 1};
          for (int pos : cand) {
            if (plane[pos] > bv) {  // strict: first max in scan order wins
              bv = plane[pos];
              best = pos;
            }
          }
          out[y * ow + x] = bv;
          res.argmax[static_cast<size_t>(idx++)] = best;
        }
      }
    }
  }
  return res;
}

Tensor maxpool2d_backward(const Shape4& input_shape, const std::vector<int32_t>& argmax,
                          const Tensor& d_output) {
  const int oh = input_shape.h / 2, ow = input_shape.w / 2;
  const Shape4 expect{input_shape.n, input_shape.c, oh, ow};
  if (d_output.shape() != expect) {
    throw DimensionError("maxpool2d_backward: d_output shape " + d_output.shape().str() +
                         " does not match pooled shape " + expect.str());
  }
  if (argmax.size() != static_cast<size_t>(d_output.numel())) {
    throw DimensionError("maxpool2d_backward: argmax length does not match d_output");
  }
  Tensor d_input(input_shape.n, input_shape.c, input_shape.h, input_shape.w);
  int64_t idx = 0;
  for (int s = 0; s < input_shape.n; ++s) {
    for (int ch = 0; ch < input_shape.c; ++ch) {
      float* plane = d_input.channel(s, ch);
      const float* dy = d_output.channel(s, ch);
      for (int i = 0; i < oh * ow; ++i) {
        plane[argmax[static_cast<size_t>(idx++)]] += dy[i];
      }
    }
  }
  return d_input;
}

// ---- batch normalization ----

namespace {

void check_bn_shapes(const Tensor& input, const LayerParams& params) {
  if (static_cast<int>(params.bn_gamma.size()) != input.c()) {
    throw DimensionError("batchnorm: gamma length " + std::to_string(params.bn_gamma.size()) +
                         " does not match channel axis c=" + std::to_string(input.c()));
  }
}

Tensor bn_apply(const Tensor& input, const std::vector<float>& gamma,
                const std::vector<float>& beta, const std::vector<float>& mean,
                const std::vector<float>& inv_std) {
  Tensor out(input.n(), input.c(), input.h(), input.w());
  const int hw = input.h() * input.w();
  for (int s = 0; s < input.n(); ++s) {
    for (int ch = 0; ch < input.c(); ++ch) {
      const float* src = input.channel(s, ch);
      float* dst = out.channel(s, ch);
      const float g = gamma[static_cast<size_t>(ch)] * inv_std[static_cast<size_t>(ch)];
      const float b = beta[static_cast<size_t>(ch)] - mean[static_cast<size_t>(ch)] * g;
      for (int i = 0; i < hw; ++i) dst[i] = src[i] * g + b;
    }
  }
  return out;
}

}  // namespace

Tensor batchnorm_forward(const Tensor& input, LayerParams& params, Mode mode, float momentum,
                         float epsilon, BnCache* cache) {
  check_bn_shapes(input, params);
  const int c = input.c();
  if (mode == Mode::Infer) {
    std::vector<float> inv_std(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
      inv_std[ch] = 1.0f / std::sqrt(params.bn_running_var[ch] + epsilon);
    }
    return bn_apply(input, params.bn_gamma, params.bn_beta, params.bn_running_mean, inv_std);
  }

  const int64_t m = int64_t(input.n()) * input.h() * input.w();
  if (m < 2) {
    throw DegenerateBatchError(
        "batchnorm train mode needs at least 2 values per channel, got n*h*w=" +
        std::to_string(m));
  }
  std::vector<float> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  const int hw = input.h() * input.w();
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (int s = 0; s < input.n(); ++s) {
      const float* src = input.channel(s, ch);
      for (int i = 0; i < hw; ++i) {
        sum += src[i];
        sq += double(src[i]) * src[i];
      }
    }
    const double mu = sum / double(m);
    double var = sq / double(m) - mu * mu;
    if (var < 0.0) var = 0.0;  // guard fp cancellation
    mean[ch] = static_cast<float>(mu);
    inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + epsilon));
    params.bn_running_mean[ch] =
        (1.0f - momentum) * params.bn_running_mean[ch] + momentum * static_cast<float>(mu);
    params.bn_running_var[ch] =
        (1.0f - momentum) * params.bn_running_var[ch] + momentum * static_cast<float>(var);
  }
  if (cache) {
    cache->mean = mean;
    cache->inv_std = inv_std;
  }
  return bn_apply(input, params.bn_gamma, params.bn_beta, mean, inv_std);
}

Tensor batchnorm_forward(const Tensor& input, const LayerParams& params, Mode mode, float momentum,
                         float epsilon) {
  if (mode != Mode::Infer) {
    throw ParameterError("batchnorm train mode requires mutable params (running stats update)");
  }
  LayerParams& p = const_cast<LayerParams&>(params);  // infer path never writes
  return batchnorm_forward(input, p, Mode::Infer, momentum, epsilon, nullptr);
}

BnGrads batchnorm_backward(const Tensor& input, const LayerParams& params, const BnCache& cache,
                           const Tensor& d_output, float epsilon) {
  (void)epsilon;  // folded into cache.inv_std
  check_bn_shapes(input, params);
  if (input.shape() != d_output.shape()) {
    throw DimensionError("batchnorm_backward: d_output shape " + d_output.shape().str() +
                         " does not match input " + input.shape().str());
  }
  const int c = input.c();
  const int hw = input.h() * input.w();
  const int64_t m = int64_t(input.n()) * hw;

  BnGrads g;
  g.d_input = Tensor(input.n(), input.c(), input.h(), input.w());
  g.d_gamma.assign(static_cast<size_t>(c), 0.0f);
  g.d_beta.assign(static_cast<size_t>(c), 0.0f);

  for (int ch = 0; ch < c; ++ch) {
    const float mu = cache.mean[static_cast<size_t>(ch)];
    const float is = cache.inv_std[static_cast<size_t>(ch)];
    const float gamma = params.bn_gamma[static_cast<size_t>(ch)];
    // First pass: sum(dy) and sum(dy * xhat).
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int s = 0; s < input.n(); ++s) {
      const float* x = input.channel(s, ch);
      const float* dy = d_output.channel(s, ch);
      for (int i = 0; i < hw; ++i) {
        const double xhat = double(x[i] - mu) * is;
        sum_dy += dy[i];
        sum_dy_xhat += double(dy[i]) * xhat;
      }
    }
    g.d_beta[static_cast<size_t>(ch)] = static_cast<float>(sum_dy);
    g.d_gamma[static_cast<size_t>(ch)] = static_cast<float>(sum_dy_xhat);
    // dx = (gamma * inv_std / m) * (m*dy - sum_dy - xhat * sum_dy_xhat)
    const double k = double(gamma) * is / double(m);
    for (int s = 0; s < input.n(); ++s) {
      const float* x = input.channel(s, ch);
      const float* dy = d_output.channel(s, ch);
      float* dx = g.d_input.channel(s, ch);
      for (int i = 0; i < hw; ++i) {
        const double xhat = double(x[i] - mu) * is;
        dx[i] = static_cast<float>(k * (double(m) * dy[i] - sum_dy - xhat * sum_dy_xhat));
      }
    }
  }
  return g;
}

// ---- global average pooling ----

Tensor global_avg_pool(const Tensor& input) {
  Tensor out(input.n(), input.c(), 1, 1);
  const int hw = input.h() * input.w();
  for (int s = 0; s < input.n(); ++s) {
    for (int ch = 0; ch < input.c(); ++ch) {
      const float* src = input.channel(s, ch);
      double acc = 0.0;
      for (int i = 0; i < hw; ++i) acc += src[i];
      out.at(s, ch, 0, 0) = static_cast<float>(acc / hw);
    }
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape4& input_shape, const Tensor& d_output) {
  const Shape4 expect{input_shape.n, input_shape.c, 1, 1};
  if (d_output.shape() != expect) {
    throw DimensionError("global_avg_pool_backward: d_output shape " + d_output.shape().str() +
                         " does not match " + expect.str());
  }
  Tensor d_input(input_shape.n, input_shape.c, input_shape.h, input_shape.w);
  const int hw = input_shape.h * input_shape.w;
  const float scale = 1.0f / static_cast<float>(hw);
  for (int s = 0; s < input_shape.n; ++s) {
    for (int ch = 0; ch < input_shape.c; ++ch) {
      const float v = d_output.at(s, ch, 0, 0) * scale;
      float* dst = d_input.channel(s, ch);
      for (int i = 0; i < hw; ++i) dst[i] = v;
    }
  }
  return d_input;
}

// ---- dense ----

namespace {
void check_dense_shapes(const Tensor& input, const LayerParams& params) {
  const Shape4& ws = params.weights.shape();
  if (input.c() * input.h() * input.w() != ws.c) {
    throw DimensionError("dense: input feature count " +
                         std::to_string(input.c() * input.h() * input.w()) +
                         " does not match in_units=" + std::to_string(ws.c));
  }
  if (static_cast<int>(params.bias.size()) != ws.n) {
    throw DimensionError("dense: bias length " + std::to_string(params.bias.size()) +
                         " does not match out_units=" + std::to_string(ws.n));
  }
}
}  // namespace

Tensor dense_forward(const Tensor& input, const LayerParams& params) {
  check_dense_shapes(input, params);
  const int n = input.n();
  const int in = params.weights.c(), out = params.weights.n();
  Tensor result(n, out, 1, 1);
  ConstMapMat xm(input.data(), n, in);
  ConstMapMat wm(params.weights.data(), out, in);
  MapMat om(result.data(), n, out);
  om.noalias() = xm * wm.transpose();
  for (int s = 0; s < n; ++s) {
    for (int oc = 0; oc < out; ++oc) result.at(s, oc, 0, 0) += params.bias[oc];
  }
  return result;
}

GradBundle dense_backward(const Tensor& input, const LayerParams& params, const Tensor& d_output) {
  check_dense_shapes(input, params);
  const int n = input.n();
  const int in = params.weights.c(), out = params.weights.n();
  const Shape4 expect{n, out, 1, 1};
  if (d_output.shape() != expect) {
    throw DimensionError("dense_backward: d_output shape " + d_output.shape().str() +
                         " does not match " + expect.str());
  }
  GradBundle g;
  g.d_input = Tensor(input.n(), input.c(), input.h(), input.w());
  g.d_weights = Tensor(out, in, 1, 1);
  g.d_bias.assign(static_cast<size_t>(out), 0.0f);

  ConstMapMat xm(input.data(), n, in);
  ConstMapMat wm(params.weights.data(), out, in);
  ConstMapMat dym(d_output.data(), n, out);
  MapMat dxm(g.d_input.data(), n, in);
  MapMat dwm(g.d_weights.data(), out, in);
  dxm.noalias() = dym * wm;
  dwm.noalias() = dym.transpose() * xm;
  for (int oc = 0; oc < out; ++oc) {
    double acc = 0.0;
    for (int s = 0; s < n; ++s) acc += d_output.at(s, oc, 0, 0);
    g.d_bias[static_cast<size_t>(oc)] = static_cast<float>(acc);
  }
  return g;
}

// ---- softmax ----

Tensor softmax(const Tensor& logits) {
  Tensor out(logits.n(), logits.c(), logits.h(), logits.w());
  const int k = logits.c();
  const int hw = logits.h() * logits.w();
  for (int s = 0; s < logits.n(); ++s) {
    for (int pos = 0; pos < hw; ++pos) {
      float mx = logits.channel(s, 0)[pos];
      for (int ch = 1; ch < k; ++ch) mx = std::max(mx, logits.channel(s, ch)[pos]);
      double sum = 0.0;
      for (int ch = 0; ch < k; ++ch) {
        sum += std::exp(double(logits.channel(s, ch)[pos]) - mx);
      }
      for (int ch = 0; ch < k; ++ch) {
        out.channel(s, ch)[pos] =
            static_cast<float>(std::exp(double(logits.channel(s, ch)[pos]) - mx) / sum);
      }
    }
  }
  return out;
}

// ---- dropout ----

DropoutResult dropout(const Tensor& input, float rate, Mode mode, uint64_t seed) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult res;
  if (mode == Mode::Infer || rate == 0.0f) {
    res.output = input;
    return res;
  }
  res.output = Tensor(input.n(), input.c(), input.h(), input.w());
  res.mask.resize(static_cast<size_t>(input.numel()));
  Rng rng(seed);
  const float scale = 1.0f / (1.0f - rate);
  const float* src = input.data();
  float* dst = res.output.data();
  for (int64_t i = 0; i < input.numel(); ++i) {
    const bool keep = rng.next_float01() >= rate;
    res.mask[static_cast<size_t>(i)] = keep ? 1 : 0;
    dst[i] = keep ? src[i] * scale : 0.0f;
  }
  return res;
}

Tensor dropout_backward(const std::vector<uint8_t>& mask, float rate, const Tensor& d_output) {
  if (mask.empty()) return d_output;  // identity forward
  if (mask.size() != static_cast<size_t>(d_output.numel())) {
    throw DimensionError("dropout_backward: mask length does not match d_output");
  }
  Tensor out(d_output.n(), d_output.c(), d_output.h(), d_output.w());
  const float scale = 1.0f / (1.0f - rate);
  const float* dy = d_output.data();
  float* dst = out.data();
  for (int64_t i = 0; i < d_output.numel(); ++i) {
    dst[i] = mask[static_cast<size_t>(i)] ? dy[i] * scale : 0.0f;
  }
  return out;
}

}  // namespace mvcnn
