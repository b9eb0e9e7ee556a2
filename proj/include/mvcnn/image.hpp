#pragma once

#include <string>
#include <vector>

#include "mvcnn/errors.hpp"

namespace mvcnn {

/// Interleaved H x W x 3 float RGB image with values in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> data;  // row-major, channel-interleaved
  Image() = default;
  Image(int h_, int w_) : h(h_), w(w_), data(size_t(h_) * w_ * 3, 0.0f) {}
  float& at(int y, int x, int c) { return data[(size_t(y) * w + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(size_t(y) * w + x) * 3 + c]; }
};

/// Single-channel H x W float field.
struct Field {
  int h = 0, w = 0;
  std::vector<float> data;
  Field() = default;
  Field(int h_, int w_) : h(h_), w(w_), data(size_t(h_) * w_, 0.0f) {}
  float& at(int y, int x) { return data[size_t(y) * w + x]; }
  float at(int y, int x) const { return data[size_t(y) * w + x]; }
};

namespace data {

/// Decodes a PNG, JPEG, or binary PPM/PGM file into RGB in [0, 1] (values
/// scaled by 1/255). Grayscale sources are promoted by channel replication.
/// Throws DataError when the file is missing or not decodable.
Image load_image(const std::string& path);

/// Writes an image as 8-bit RGB PNG; values are clamped to [0, 1] first.
void save_png_rgb8(const std::string& path, const Image& img);

/// Corner-aligned bilinear resampling. Returns a bitwise-identical copy when
/// the size already matches. Both source and target must be at least 2x2.
Image resize_bilinear(const Image& src, int target_h, int target_w);

}  // namespace data
}  // namespace mvcnn
