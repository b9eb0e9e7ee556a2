#include "mvcnn/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mvcnn/train.hpp"
#include "mvcnn/util.hpp"

namespace mvcnn::gradcam {

namespace {

// Conv-stage index for a user-facing name; empty picks the last conv.
size_t resolve_layer(const model::Model& m, const std::string& layer) {
  const std::vector<model::LayerSpec>& plan = m.config.conv_plan;
  if (layer.empty()) {
    for (size_t i = plan.size(); i-- > 0;) {
      if (plan[i].kind == model::LayerKind::Conv) return i;
    }
    throw ConfigError("the model has no conv stage to take a heatmap from");
  }
  for (size_t i = 0; i < plan.size(); ++i) {
    if (model::layer_name(plan, i) == layer) {
      if (plan[i].kind != model::LayerKind::Conv) {
        throw ConfigError("stage '" + layer + "' is not a conv stage");
      }
      return i;
    }
  }
  throw ConfigError("the model has no stage named '" + layer + "'");
}

// Corner-aligned bilinear resampling of a single-channel field, matching the
// image resizing convention. A 1x1 source broadcasts as a constant.
Field resize_field(const Field& src, int target_h, int target_w) {
  if (src.h == target_h && src.w == target_w) return src;
  Field out(target_h, target_w);
  if (src.h == 1 && src.w == 1) {
    std::fill(out.data.begin(), out.data.end(), src.at(0, 0));
    return out;
  }
  const double sy = src.h > 1 ? double(src.h - 1) / double(target_h - 1) : 0.0;
  const double sx = src.w > 1 ? double(src.w - 1) / double(target_w - 1) : 0.0;
  for (int y = 0; y < target_h; ++y) {
    const double fy = y * sy;
    int y0 = static_cast<int>(fy);
    if (y0 >= src.h - 1) y0 = std::max(src.h - 2, 0);
    const double wy = fy - y0;
    const int y1 = std::min(y0 + 1, src.h - 1);
    for (int x = 0; x < target_w; ++x) {
      const double fx = x * sx;
      int x0 = static_cast<int>(fx);
      if (x0 >= src.w - 1) x0 = std::max(src.w - 2, 0);
      const double wx = fx - x0;
      const int x1 = std::min(x0 + 1, src.w - 1);
      const double top = src.at(y0, x0) * (1.0 - wx) + src.at(y0, x1) * wx;
      const double bot = src.at(y1, x0) * (1.0 - wx) + src.at(y1, x1) * wx;
      out.at(y, x) = static_cast<float>(top * (1.0 - wy) + bot * wy);
    }
  }
  return out;
}

}  // namespace

HeatMap compute_heatmap(const model::Model& model, const views::ViewStack& input,
                        int target_class, const std::string& layer) {
  if (target_class < 0 || target_class >= model.config.class_count) {
    throw ParameterError("target class " + std::to_string(target_class) +
                         " is outside the model's " +
                         std::to_string(model.config.class_count) + " classes");
  }
  const size_t idx = resolve_layer(model, layer);

  model::ActivationCache cache;
  model::forward(model, input.data, Mode::Infer, 0, &cache);

  Tensor seed(1, model.config.class_count, 1, 1);
  seed.at(0, target_class, 0, 0) = 1.0f;
  Tensor d_act = train::backward_to_activation(model, cache, seed, idx);
  const Tensor& act = cache.layers[idx].activated;  // (1, c', h', w')

  HeatMap heat;
  heat.target_class = target_class;
  heat.layer_name = model::layer_name(model.config.conv_plan, idx);
  heat.raw = Field(act.h(), act.w());
  const int64_t area = int64_t(act.h()) * act.w();
  for (int c = 0; c < act.c(); ++c) {
    double weight = 0.0;
    const float* g = d_act.channel(0, c);
    for (int64_t i = 0; i < area; ++i) weight += double(g[i]);
    weight /= double(area);
    const float* a = act.channel(0, c);
    for (int64_t i = 0; i < area; ++i) {
      heat.raw.data[size_t(i)] += float(weight * double(a[i]));
    }
  }
  for (float& v : heat.raw.data) v = std::max(v, 0.0f);

  heat.upsampled = resize_field(heat.raw, input.data.h(), input.data.w());
  float peak = 0.0f;
  for (float v : heat.upsampled.data) peak = std::max(peak, v);
  if (peak > 0.0f) {
    for (float& v : heat.upsampled.data) v /= peak;
  }
  return heat;
}

std::array<float, 3> heat_color(float value) {
  const float v = std::clamp(value, 0.0f, 1.0f);
  const float t = float(std::lround(v * 255.0f)) / 255.0f;
  if (t <= 0.5f) {
    return {0.0f, 2.0f * t, 1.0f - 2.0f * t};
  }
  return {2.0f * t - 1.0f, 2.0f - 2.0f * t, 0.0f};
}

Image overlay(const HeatMap& heatmap, const Image& rgb, float alpha) {
  if (alpha < 0.0f || alpha > 1.0f) {
    throw ParameterError("overlay alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  const Field& heat = heatmap.upsampled;
  if (rgb.h != heat.h || rgb.w != heat.w) {
    throw DimensionError("overlay: image is " + std::to_string(rgb.h) + "x" +
                         std::to_string(rgb.w) + " but the heatmap is " +
                         std::to_string(heat.h) + "x" + std::to_string(heat.w));
  }
  if (alpha == 0.0f) return rgb;

  Image out(rgb.h, rgb.w);
  for (int y = 0; y < rgb.h; ++y) {
    for (int x = 0; x < rgb.w; ++x) {
      const std::array<float, 3> color = heat_color(heat.at(y, x));
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = (1.0f - alpha) * rgb.at(y, x, c) + alpha * color[size_t(c)];
      }
    }
  }
  return out;
}

void write_heat_field(const std::string& path, const Field& field) {
  ByteWriter w;
  w.bytes("MVVS", 4);
  w.u16(1);  // version
  w.u16(1);  // channel count
  w.u32(static_cast<uint32_t>(field.h));
  w.u32(static_cast<uint32_t>(field.w));
  w.f32_array(field.data.data(), field.data.size());
  write_binary_file(path, w.buf);
}

Field read_heat_field(const std::string& path) {
  const std::vector<uint8_t> bytes = read_binary_file(path);
  if (bytes.size() < 16) throw DataError(path + ": too short for a heat-field header");
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MVVS", 4) != 0) throw DataError(path + ": not a heat-field file");
  const uint16_t version = r.u16();
  if (version != 1) {
    throw DataError(path + ": unsupported heat-field version " + std::to_string(version));
  }
  const int c = r.u16();
  if (c != 1) {
    throw DataError(path + ": a heat field has exactly 1 channel, found " + std::to_string(c));
  }
  const int h = static_cast<int>(r.u32());
  const int w = static_cast<int>(r.u32());
  const size_t count = size_t(h) * size_t(w);
  if (bytes.size() != 16 + count * 4) {
    throw DataError(path + ": heat-field payload size mismatch");
  }
  Field field(h, w);
  r.f32_array(field.data.data(), count);
  return field;
}

}  // namespace mvcnn::gradcam
