#include "mvcnn/views.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>

#include "mvcnn/util.hpp"

namespace mvcnn::views {

int channel_count(ViewCombination combo) {
  switch (combo) {
    case ViewCombination::Rgb: return 3;
    case ViewCombination::RgbGm: return 4;
    case ViewCombination::RgbGxGy: return 5;
    case ViewCombination::RgbGxGyGm: return 6;
  }
  throw ParameterError("unknown view combination");
}

std::string combo_name(ViewCombination combo) {
  switch (combo) {
    case ViewCombination::Rgb: return "rgb";
    case ViewCombination::RgbGm: return "rgb+gm";
    case ViewCombination::RgbGxGy: return "rgb+gxgy";
    case ViewCombination::RgbGxGyGm: return "rgb+gxgygm";
  }
  throw ParameterError("unknown view combination");
}

ViewCombination combo_from_name(const std::string& name) {
  for (ViewCombination c : all_combinations()) {
    if (combo_name(c) == name) return c;
  }
  throw ConfigError("unknown view combination '" + name +
                    "' (expected rgb, rgb+gxgy, rgb+gxgygm, or rgb+gm)");
}

ViewCombination combo_from_channels(int channels) {
  switch (channels) {
    case 3: return ViewCombination::Rgb;
    case 4: return ViewCombination::RgbGm;
    case 5: return ViewCombination::RgbGxGy;
    case 6: return ViewCombination::RgbGxGyGm;
    default:
      throw DataError("no view combination has " + std::to_string(channels) + " channels");
  }
}

std::vector<ViewCombination> all_combinations() {
  return {ViewCombination::Rgb, ViewCombination::RgbGxGy, ViewCombination::RgbGxGyGm,
          ViewCombination::RgbGm};
}

Field to_luminance(const Image& rgb) {
  Field out(rgb.h, rgb.w);
  for (int y = 0; y < rgb.h; ++y)
    for (int x = 0; x < rgb.w; ++x)
      out.at(y, x) =
          0.299f * rgb.at(y, x, 0) + 0.587f * rgb.at(y, x, 1) + 0.114f * rgb.at(y, x, 2);
  return out;
}

namespace {

void validate_params(const ViewParams& p) {
  if (!(p.sigma > 0.0)) {
    throw ParameterError("view sigma must be > 0, got " + std::to_string(p.sigma));
  }
  if (p.d < 1) {
    throw ParameterError("view window radius d must be >= 1, got " + std::to_string(p.d));
  }
}

// Mirrored index without edge repetition: -1 -> 1, n -> n-2.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

Field correlate(const Field& src, const std::vector<double>& kernel, int radius) {
  Field out(src.h, src.w);
  const int k = 2 * radius + 1;
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int u = -radius; u <= radius; ++u) {
        const int yy = reflect(y + u, src.h);
        for (int v = -radius; v <= radius; ++v) {
          acc += kernel[size_t(u + radius) * k + size_t(v + radius)] *
                 src.at(yy, reflect(x + v, src.w));
        }
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

Field render_view(const Field& response, const ViewParams& p) {
  Field out(response.h, response.w);
  if (p.mode == ViewMode::AbsoluteResponse) {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::abs(response.data[i]);
    return out;
  }
  for (int y = 0; y < response.h; ++y) {
    for (int x = 0; x < response.w; ++x) {
      double acc = 0.0;
      for (int s = -p.d; s <= p.d; ++s) {
        const int yy = reflect(y + s, response.h);
        for (int t = -p.d; t <= p.d; ++t) {
          const double v = response.at(yy, reflect(x + t, response.w));
          acc += v * v;
        }
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

void check_kernel_fits(const Field& luma, int radius) {
  const int k = 2 * radius + 1;
  if (k > luma.h || k > luma.w) {
    throw DimensionError("gradient kernel width " + std::to_string(k) +
                         " exceeds image size " + std::to_string(luma.h) + "x" +
                         std::to_string(luma.w));
  }
}

}  // namespace

const KernelPair& gaussian_derivative_kernels(const ViewParams& params) {
  validate_params(params);
  static std::mutex mu;
  static std::map<uint64_t, KernelPair> cache;  // node stability keeps refs valid

  uint64_t key;
  static_assert(sizeof(double) == sizeof(uint64_t));
  std::memcpy(&key, &params.sigma, sizeof(key));

  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  KernelPair kp;
  kp.radius = static_cast<int>(std::ceil(3.0 * params.sigma));
  const int k = 2 * kp.radius + 1;
  kp.kx.assign(size_t(k) * k, 0.0);
  kp.ky.assign(size_t(k) * k, 0.0);
  const double inv2s2 = 1.0 / (2.0 * params.sigma * params.sigma);
  double ramp = 0.0;  // response to I(y, x) = x
  for (int u = -kp.radius; u <= kp.radius; ++u) {
    for (int v = -kp.radius; v <= kp.radius; ++v) {
      const double g = v * std::exp(-(double(u) * u + double(v) * v) * inv2s2);
      kp.kx[size_t(u + kp.radius) * k + size_t(v + kp.radius)] = g;
      ramp += v * g;
    }
  }
  for (double& e : kp.kx) e /= ramp;
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v) kp.ky[size_t(u) * k + v] = kp.kx[size_t(v) * k + u];
  return cache.emplace(key, std::move(kp)).first->second;
}

Field grad_x(const Field& luma, const ViewParams& params) {
  validate_params(params);
  const KernelPair& kp = gaussian_derivative_kernels(params);
  check_kernel_fits(luma, kp.radius);
  return render_view(correlate(luma, kp.kx, kp.radius), params);
}

Field grad_y(const Field& luma, const ViewParams& params) {
  // Built as the transposed horizontal operator so that
  // grad_y(f) == transpose(grad_x(transpose(f))) holds bitwise: running the
  // vertical kernel directly would visit the taps in a different order and
  // can round differently.
  Field flipped(luma.w, luma.h);
  for (int i = 0; i < luma.h; ++i)
    for (int j = 0; j < luma.w; ++j) flipped.at(j, i) = luma.at(i, j);
  Field g = grad_x(flipped, params);
  Field out(luma.h, luma.w);
  for (int i = 0; i < out.h; ++i)
    for (int j = 0; j < out.w; ++j) out.at(i, j) = g.at(j, i);
  return out;
}

Field grad_magnitude(const Field& gx, const Field& gy) {
  if (gx.h != gy.h || gx.w != gy.w) {
    throw DimensionError("grad_magnitude: field shapes differ (" + std::to_string(gx.h) + "x" +
                         std::to_string(gx.w) + " vs " + std::to_string(gy.h) + "x" +
                         std::to_string(gy.w) + ")");
  }
  Field out(gx.h, gx.w);
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(
        std::sqrt(double(gx.data[i]) * gx.data[i] + double(gy.data[i]) * gy.data[i]));
  }
  return out;
}

Field normalize_channel(const Field& field) {
  float lo = field.data[0], hi = field.data[0];
  for (float v : field.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Field out(field.h, field.w);
  if (hi == lo) return out;  // constant field -> all zeros
  const float range = hi - lo;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = (field.data[i] - lo) / range;
  return out;
}

ViewStack stack_views(const Image& rgb, ViewCombination combo, const ViewParams& params) {
  ViewStack stack;
  stack.combo = combo;
  stack.data = Tensor(1, channel_count(combo), rgb.h, rgb.w);

  for (int c = 0; c < 3; ++c) {
    float* dst = stack.data.channel(0, c);
    for (int y = 0; y < rgb.h; ++y)
      for (int x = 0; x < rgb.w; ++x) {
        float v = rgb.at(y, x, c);
        dst[size_t(y) * rgb.w + x] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      }
  }
  if (combo == ViewCombination::Rgb) return stack;

  const Field luma = to_luminance(rgb);
  const Field gx = grad_x(luma, params);
  const Field gy = grad_y(luma, params);
  int next = 3;
  auto put = [&](const Field& f) {
    const Field n = normalize_channel(f);
    std::memcpy(stack.data.channel(0, next), n.data.data(), sizeof(float) * n.data.size());
    ++next;
  };
  if (combo == ViewCombination::RgbGxGy || combo == ViewCombination::RgbGxGyGm) {
    put(gx);
    put(gy);
  }
  if (combo != ViewCombination::RgbGxGy) {
    put(grad_magnitude(gx, gy));
  }
  return stack;
}

void write_view_stack(const std::string& path, const ViewStack& stack) {
  const Shape4& s = stack.data.shape();
  ByteWriter w;
  w.bytes("MVVS", 4);
  w.u16(1);
  w.u16(static_cast<uint16_t>(s.c));
  w.u32(static_cast<uint32_t>(s.h));
  w.u32(static_cast<uint32_t>(s.w));
  w.f32_array(stack.data.data(), static_cast<size_t>(stack.data.numel()));
  write_binary_file(path, w.buf);
}

ViewStack read_view_stack(const std::string& path) {
  const std::vector<uint8_t> bytes = read_binary_file(path);
  if (bytes.size() < 16) throw DataError(path + ": too short for a view-stack header");
  ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MVVS", 4) != 0) throw DataError(path + ": not a view-stack file");
  const uint16_t version = r.u16();
  if (version != 1) {
    throw DataError(path + ": unsupported view-stack version " + std::to_string(version));
  }
  const int c = r.u16();
  const int h = static_cast<int>(r.u32());
  const int w = static_cast<int>(r.u32());
  ViewStack stack;
  stack.combo = combo_from_channels(c);
  const size_t count = size_t(c) * h * w;
  if (bytes.size() != 16 + count * 4) {
    throw DataError(path + ": view-stack payload size mismatch");
  }
  std::vector<float> data(count);
  r.f32_array(data.data(), count);
  stack.data = Tensor::from({1, c, h, w}, std::move(data));
  return stack;
}

}  // namespace mvcnn::views
