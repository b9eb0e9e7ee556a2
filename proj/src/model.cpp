#include "mvcnn/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mvcnn/util.hpp"

namespace mvcnn::model {

std::vector<LayerSpec> default_conv_plan() {
  auto conv = [](int filters) { return LayerSpec{LayerKind::Conv, filters, 3}; };
  const LayerSpec pool{LayerKind::Pool, 0, 0};
  return {conv(32), conv(32), pool, conv(64),  conv(64),  pool,
          conv(128), conv(128), pool, conv(256), pool};
}

std::vector<LayerSpec> compact_conv_plan() {
  auto conv = [](int filters) { return LayerSpec{LayerKind::Conv, filters, 3}; };
  const LayerSpec pool{LayerKind::Pool, 0, 0};
  return {conv(16), conv(16), pool, conv(32), conv(32), pool, conv(64), pool};
}

std::string layer_name(const std::vector<LayerSpec>& plan, size_t index) {
  int convs = 0, pools = 0;
  for (size_t i = 0; i <= index && i < plan.size(); ++i) {
    switch (plan[i].kind) {
      case LayerKind::Conv: ++convs; break;
      case LayerKind::Pool: ++pools; break;
      case LayerKind::Dense: return "dense";
    }
  }
  if (plan[index].kind == LayerKind::Conv) return "conv" + std::to_string(convs);
  return "pool" + std::to_string(pools);
}

std::vector<std::pair<int, int>> spatial_trace(const ModelConfig& config) {
  std::vector<std::pair<int, int>> trace;
  int h = config.input_h, w = config.input_w;
  for (size_t i = 0; i < config.conv_plan.size(); ++i) {
    const LayerSpec& spec = config.conv_plan[i];
    if (spec.kind == LayerKind::Conv) {
      if (h < spec.kernel || w < spec.kernel) {
        throw ConfigError("input shrinks to " + std::to_string(h) + "x" + std::to_string(w) +
                          " before " + layer_name(config.conv_plan, i) + ", smaller than its " +
                          std::to_string(spec.kernel) + "x" + std::to_string(spec.kernel) +
                          " kernel");
      }
      h -= spec.kernel - 1;
      w -= spec.kernel - 1;
    } else if (spec.kind == LayerKind::Pool) {
      if (h < 2 || w < 2) {
        throw ConfigError("input shrinks to " + std::to_string(h) + "x" + std::to_string(w) +
                          " before " + layer_name(config.conv_plan, i) +
                          ", smaller than its 2x2 window");
      }
      h /= 2;
      w /= 2;
    } else {
      throw ConfigError("conv plan may only contain conv and pool stages");
    }
    trace.emplace_back(h, w);
  }
  return trace;
}

namespace {

// Weights uniform in +-sqrt(2 / fan_in); one stream per layer so a layer's
// initial values do not depend on how many draws earlier layers consumed.
Tensor init_weights(int out, int in, int k, uint64_t seed, uint64_t stream) {
  Rng rng(seed, stream);
  const float bound = std::sqrt(2.0f / (float(k) * k * in));
  Tensor w(out, in, k, k);
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = rng.next_uniform(-bound, bound);
  return w;
}

}  // namespace

Model build_model(const ModelConfig& config, uint64_t seed) {
  if (config.class_count < 2) {
    throw ConfigError("class_count must be at least 2, got " +
                      std::to_string(config.class_count));
  }
  if (config.dropout_rate < 0.0f || config.dropout_rate >= 1.0f) {
    throw ParameterError("dropout_rate must lie in [0, 1), got " +
                         std::to_string(config.dropout_rate));
  }
  if (config.conv_plan.empty() || config.conv_plan.front().kind != LayerKind::Conv) {
    throw ConfigError("conv plan must start with a conv stage");
  }
  for (const LayerSpec& spec : config.conv_plan) {
    if (spec.kind == LayerKind::Conv && spec.out_channels < 1) {
      throw ConfigError("conv stage needs at least one filter");
    }
  }
  spatial_trace(config);  // throws if any stage underflows

  Model m;
  m.config = config;
  m.seed = seed;
  int in_ch = views::channel_count(config.combo);
  for (size_t i = 0; i < config.conv_plan.size(); ++i) {
    const LayerSpec& spec = config.conv_plan[i];
    Layer layer;
    layer.spec = spec;
    if (spec.kind == LayerKind::Conv) {
      layer.params.weights = init_weights(spec.out_channels, in_ch, spec.kernel, seed, i);
      layer.params.bias.assign(size_t(spec.out_channels), 0.0f);
      layer.params.bn_gamma.assign(size_t(spec.out_channels), 1.0f);
      layer.params.bn_beta.assign(size_t(spec.out_channels), 0.0f);
      layer.params.bn_running_mean.assign(size_t(spec.out_channels), 0.0f);
      layer.params.bn_running_var.assign(size_t(spec.out_channels), 1.0f);
      in_ch = spec.out_channels;
    }
    m.layers.push_back(std::move(layer));
  }

  Layer head;
  head.spec = LayerSpec{LayerKind::Dense, config.class_count, 1};
  head.params.weights = init_weights(config.class_count, in_ch, 1, seed, config.conv_plan.size());
  head.params.bias.assign(size_t(config.class_count), 0.0f);
  m.layers.push_back(std::move(head));
  return m;
}

Tensor forward(Model& model, const Tensor& batch, Mode mode, uint64_t seed,
               ActivationCache* cache) {
  if (batch.c() != model.input_channels()) {
    throw DimensionError("batch has " + std::to_string(batch.c()) + " channels, model expects " +
                         std::to_string(model.input_channels()));
  }
  if (cache) {
    *cache = ActivationCache{};
    cache->mode = mode;
    cache->input = batch;
    cache->layers.resize(model.layers.size());
  }

  Tensor x = batch;
  Tensor probs;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    Layer& layer = model.layers[i];
    LayerTrace* trace = cache ? &cache->layers[i] : nullptr;
    switch (layer.spec.kind) {
      case LayerKind::Conv: {
        Tensor pre = conv2d_forward(x, layer.params);
        Tensor act = relu(pre);
        BnCache bn;
        Tensor out = mode == Mode::Train
                         ? batchnorm_forward(act, layer.params, mode, 0.1f, 1e-5f, &bn)
                         : batchnorm_forward(act, std::as_const(layer.params), mode);
        if (mode == Mode::Infer) {
          // Record the statistics the norm actually used so a backward pass
          // through an infer-mode cache scales by the same factors.
          bn.mean = layer.params.bn_running_mean;
          bn.inv_std.resize(layer.params.bn_running_var.size());
          for (size_t c = 0; c < bn.inv_std.size(); ++c) {
            bn.inv_std[c] = 1.0f / std::sqrt(layer.params.bn_running_var[c] + 1e-5f);
          }
        }
        if (trace) {
          trace->pre_act = std::move(pre);
          trace->activated = std::move(act);
          trace->bn = std::move(bn);
          trace->output = out;
        }
        x = std::move(out);
        break;
      }
      case LayerKind::Pool: {
        PoolResult pr = maxpool2d(x);
        if (trace) {
          trace->pool_in_shape = x.shape();
          trace->pool_argmax = std::move(pr.argmax);
          trace->output = pr.output;
        }
        x = std::move(pr.output);
        break;
      }
      case LayerKind::Dense: {
        Tensor pooled = global_avg_pool(x);
        DropoutResult drop = dropout(pooled, model.config.dropout_rate, mode, seed);
        Tensor logits = dense_forward(drop.output, layer.params);
        probs = softmax(logits);
        if (cache) {
          cache->gap_out = std::move(pooled);
          cache->dense_in = drop.output;
          cache->dropout = std::move(drop);
          cache->logits = std::move(logits);
          cache->probs = probs;
        }
        break;
      }
    }
  }
  return probs;
}

Tensor forward(const Model& model, const Tensor& batch, Mode mode, uint64_t seed,
               ActivationCache* cache) {
  if (mode == Mode::Train) {
    throw ParameterError("train-mode forward updates norm statistics and needs a mutable model");
  }
  // Infer mode leaves the model untouched, so the mutable overload is safe.
  return forward(const_cast<Model&>(model), batch, mode, seed, cache);
}

ParamCount count_parameters(const Model& model) {
  ParamCount pc;
  for (const Layer& layer : model.layers) {
    if (layer.spec.kind == LayerKind::Pool) continue;
    pc.trainable += layer.params.weights.numel() + int64_t(layer.params.bias.size());
    pc.trainable += int64_t(layer.params.bn_gamma.size() + layer.params.bn_beta.size());
    pc.total += int64_t(layer.params.bn_running_mean.size() + layer.params.bn_running_var.size());
  }
  pc.total += pc.trainable;
  return pc;
}

namespace {

constexpr size_t kHeaderSize = 14;  // magic + version + layer count + classes + channels

void write_array(ByteWriter& w, const std::vector<float>& v) {
  w.f32_array(v.data(), v.size());
}

std::vector<float> read_array(ByteReader& r, size_t count) {
  std::vector<float> v(count);
  r.f32_array(v.data(), count);
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  ByteWriter payload;
  for (const Layer& layer : model.layers) {
    payload.u8(static_cast<uint8_t>(layer.spec.kind));
    const Shape4 s = layer.params.weights.shape();
    payload.u32(uint32_t(s.n));
    payload.u32(uint32_t(s.c));
    payload.u32(uint32_t(s.h));
    payload.u32(uint32_t(s.w));
    if (layer.spec.kind == LayerKind::Pool) continue;
    payload.f32_array(layer.params.weights.data(), size_t(layer.params.weights.numel()));
    write_array(payload, layer.params.bias);
    if (layer.spec.kind == LayerKind::Conv) {
      write_array(payload, layer.params.bn_gamma);
      write_array(payload, layer.params.bn_beta);
      write_array(payload, layer.params.bn_running_mean);
      write_array(payload, layer.params.bn_running_var);
    }
  }

  ByteWriter out;
  out.bytes("MVCK", 4);
  out.u16(1);
  out.u16(uint16_t(model.layers.size()));
  out.u32(uint32_t(model.config.class_count));
  out.u16(uint16_t(model.input_channels()));
  out.bytes(payload.buf.data(), payload.buf.size());
  out.u32(crc32_bytes(payload.buf.data(), payload.buf.size()));
  write_binary_file(path, out.buf);
}

Model load_checkpoint(const std::string& path, int expected_class_count) {
  const std::vector<uint8_t> bytes = read_binary_file(path);
  if (bytes.size() < kHeaderSize + 4) {
    throw CheckpointError("checkpoint truncated: " + std::to_string(bytes.size()) +
                          " bytes is shorter than header plus checksum");
  }
  if (std::memcmp(bytes.data(), "MVCK", 4) != 0) {
    throw CheckpointError("bad checkpoint magic at offset 0");
  }

  ByteReader header(bytes.data(), bytes.size());
  header.pos = 4;
  const uint16_t version = header.u16();
  if (version != 1) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " at offset 4");
  }
  const uint16_t layer_count = header.u16();
  const uint32_t class_count = header.u32();
  const uint16_t channel_count = header.u16();

  const size_t payload_size = bytes.size() - kHeaderSize - 4;
  const uint32_t stored_crc = uint32_t(bytes[bytes.size() - 4]) |
                              uint32_t(bytes[bytes.size() - 3]) << 8 |
                              uint32_t(bytes[bytes.size() - 2]) << 16 |
                              uint32_t(bytes[bytes.size() - 1]) << 24;
  const uint32_t actual_crc = crc32_bytes(bytes.data() + kHeaderSize, payload_size);
  if (stored_crc != actual_crc) {
    throw CheckpointError("checkpoint checksum mismatch at offset " +
                          std::to_string(bytes.size() - 4));
  }

  views::ViewCombination combo;
  try {
    combo = views::combo_from_channels(int(channel_count));
  } catch (const DataError&) {
    throw CheckpointError("checkpoint names an unknown input channel count " +
                          std::to_string(channel_count) + " at offset 12");
  }
  if (class_count < 2) {
    throw CheckpointError("checkpoint class count " + std::to_string(class_count) +
                          " at offset 8 is below 2");
  }

  Model m;
  m.config.combo = combo;
  m.config.class_count = int(class_count);
  ByteReader r(bytes.data(), bytes.size() - 4);  // checksum is not layer data
  r.pos = kHeaderSize;
  int in_ch = int(channel_count);
  try {
    for (uint16_t i = 0; i < layer_count; ++i) {
      const size_t kind_offset = r.pos;
      const uint8_t kind = r.u8();
      Layer layer;
      Shape4 s;
      s.n = int(r.u32());
      s.c = int(r.u32());
      s.h = int(r.u32());
      s.w = int(r.u32());
      switch (kind) {
        case uint8_t(LayerKind::Conv): {
          layer.spec = LayerSpec{LayerKind::Conv, s.n, s.h};
          if (s.c != in_ch || s.h != s.w || s.n < 1) {
            throw CheckpointError("conv shape " + s.str() + " at offset " +
                                  std::to_string(kind_offset) + " does not continue " +
                                  std::to_string(in_ch) + " input channels");
          }
          layer.params.weights = Tensor(s.n, s.c, s.h, s.w);
          r.f32_array(layer.params.weights.data(), size_t(s.numel()));
          layer.params.bias = read_array(r, size_t(s.n));
          layer.params.bn_gamma = read_array(r, size_t(s.n));
          layer.params.bn_beta = read_array(r, size_t(s.n));
          layer.params.bn_running_mean = read_array(r, size_t(s.n));
          layer.params.bn_running_var = read_array(r, size_t(s.n));
          in_ch = s.n;
          break;
        }
        case uint8_t(LayerKind::Pool):
          layer.spec = LayerSpec{LayerKind::Pool, 0, 0};
          break;
        case uint8_t(LayerKind::Dense): {
          layer.spec = LayerSpec{LayerKind::Dense, s.n, 1};
          if (i + 1 != layer_count) {
            throw CheckpointError("dense layer at offset " + std::to_string(kind_offset) +
                                  " is not the final layer");
          }
          if (s.c != in_ch || s.h != 1 || s.w != 1) {
            throw CheckpointError("dense shape " + s.str() + " at offset " +
                                  std::to_string(kind_offset) + " does not continue " +
                                  std::to_string(in_ch) + " input channels");
          }
          if (s.n != int(class_count)) {
            throw CheckpointError("dense layer emits " + std::to_string(s.n) +
                                  " classes but the header says " + std::to_string(class_count));
          }
          layer.params.weights = Tensor(s.n, s.c, s.h, s.w);
          r.f32_array(layer.params.weights.data(), size_t(s.numel()));
          layer.params.bias = read_array(r, size_t(s.n));
          break;
        }
        default:
          throw CheckpointError("unknown layer kind " + std::to_string(kind) + " at offset " +
                                std::to_string(kind_offset));
      }
      m.layers.push_back(std::move(layer));
    }
  } catch (const std::out_of_range& e) {
    throw CheckpointError(std::string("checkpoint shape table overruns the file: ") + e.what());
  }
  if (!r.exhausted()) {
    throw CheckpointError("checkpoint carries " + std::to_string(r.size - r.pos) +
                          " unexpected trailing bytes at offset " + std::to_string(r.pos));
  }
  if (m.layers.empty() || m.layers.back().spec.kind != LayerKind::Dense) {
    throw CheckpointError("checkpoint does not end in a dense layer");
  }
  if (expected_class_count > 0 && expected_class_count != int(class_count)) {
    throw CheckpointError("dense layer emits " + std::to_string(class_count) +
                          " classes, expected " + std::to_string(expected_class_count));
  }

  m.config.conv_plan.clear();
  for (size_t i = 0; i + 1 < m.layers.size(); ++i) m.config.conv_plan.push_back(m.layers[i].spec);
  return m;
}

}  // namespace mvcnn::model
