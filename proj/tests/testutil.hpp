#pragma once

// Shared helpers for building random test fixtures.

#include <filesystem>
#include <string>
#include <vector>

#include "mvcnn/tensor.hpp"
#include "mvcnn/util.hpp"

namespace testutil {

inline std::vector<float> uniform_vec(int n, mvcnn::Rng& rng, float lo, float hi) {
  std::vector<float> v(static_cast<size_t>(n));
  for (float& e : v) e = rng.next_uniform(lo, hi);
  return v;
}

inline mvcnn::Tensor random_tensor(mvcnn::Shape4 shape, mvcnn::Rng& rng, float lo = -1.0f,
                                   float hi = 1.0f) {
  return mvcnn::Tensor::from(shape, uniform_vec(static_cast<int>(shape.numel()), rng, lo, hi));
}

// Random tensor whose values stay away from zero (for kinked activations).
inline mvcnn::Tensor random_tensor_off_zero(mvcnn::Shape4 shape, mvcnn::Rng& rng,
                                            float min_abs = 0.01f) {
  std::vector<float> v(static_cast<size_t>(shape.numel()));
  for (float& e : v) {
    float m = rng.next_uniform(min_abs, 1.0f);
    e = rng.next_float01() < 0.5f ? -m : m;
  }
  return mvcnn::Tensor::from(shape, std::move(v));
}

// Random tensor whose every 2x2 pooling window holds four values separated by
// at least ~0.15, so maxima are stable under small perturbations.
inline mvcnn::Tensor random_pool_friendly(mvcnn::Shape4 shape, mvcnn::Rng& rng) {
  mvcnn::Tensor t(shape.n, shape.c, shape.h, shape.w);
  for (int s = 0; s < shape.n; ++s)
    for (int ch = 0; ch < shape.c; ++ch)
      for (int y = 0; y + 1 < shape.h; y += 2)
        for (int x = 0; x + 1 < shape.w; x += 2) {
          std::vector<float> offs = {0.0f, 0.15f, 0.3f, 0.45f};
          rng.shuffle(offs);
          const float base = rng.next_uniform(-1.0f, 0.5f);
          t.at(s, ch, y, x) = base + offs[0];
          t.at(s, ch, y, x + 1) = base + offs[1];
          t.at(s, ch, y + 1, x) = base + offs[2];
          t.at(s, ch, y + 1, x + 1) = base + offs[3];
        }
  return t;
}

// Scoped temporary directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("mvcnn_test_" + tag);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
