#pragma once

#include <string>
#include <vector>

#include "mvcnn/image.hpp"
#include "mvcnn/tensor.hpp"

namespace mvcnn::views {

/// How the gradient views are rendered from the Gaussian-derivative response.
/// WindowedEnergy sums squared responses over a (2d+1)^2 neighborhood, giving
/// a nonnegative local gradient energy; AbsoluteResponse takes the plain
/// magnitude of the response at each pixel.
enum class ViewMode { WindowedEnergy, AbsoluteResponse };

struct ViewParams {
  double sigma = 1.0;  // Gaussian standard deviation, pixels
  int d = 1;           // half-width of the energy window
  ViewMode mode = ViewMode::WindowedEnergy;
};

/// Which feature views ride along with the RGB channels.
enum class ViewCombination { Rgb, RgbGm, RgbGxGy, RgbGxGyGm };

int channel_count(ViewCombination combo);              // 3, 4, 5, 6
std::string combo_name(ViewCombination combo);         // "rgb", "rgb+gm", ...
ViewCombination combo_from_name(const std::string&);   // ConfigError on unknown name
ViewCombination combo_from_channels(int channels);     // DataError on unknown count
std::vector<ViewCombination> all_combinations();       // ablation order

/// Multi-channel input stack: R, G, B, then Grad_X, Grad_Y, Grad_M in that
/// order when selected. Every channel lies in [0, 1].
struct ViewStack {
  ViewCombination combo = ViewCombination::Rgb;
  Tensor data;  // shape (1, channel_count, h, w)
};

/// y = 0.299 R + 0.587 G + 0.114 B.
Field to_luminance(const Image& rgb);

/// Sampled Gaussian-derivative pair on a square grid of half-width
/// ceil(3 sigma), rescaled so the response to a unit-slope ramp in the
/// detected direction is exactly 1. kx detects horizontal change and is odd
/// in x, even in y; ky is its transpose. Entries are row-major (2r+1)^2.
struct KernelPair {
  int radius = 0;
  std::vector<double> kx, ky;
};
const KernelPair& gaussian_derivative_kernels(const ViewParams& params);

/// Horizontal / vertical gradient views of a luminance field. Borders are
/// handled by mirrored (reflect-101) padding for both the derivative
/// correlation and the energy window.
Field grad_x(const Field& luma, const ViewParams& params);
Field grad_y(const Field& luma, const ViewParams& params);

/// Elementwise sqrt(gx^2 + gy^2).
Field grad_magnitude(const Field& gx, const Field& gy);

/// Min-max rescale to [0, 1]; a constant field maps to all zeros.
Field normalize_channel(const Field& field);

/// Assembles the selected channels: RGB copied through untouched, gradient
/// views computed from luminance and each min-max normalized.
ViewStack stack_views(const Image& rgb, ViewCombination combo, const ViewParams& params);

/// Flat binary persistence: 16-byte header (magic "MVVS", u16 version=1,
/// u16 channel count, u32 height, u32 width, little-endian) followed by
/// channel-major f32 little-endian data.
void write_view_stack(const std::string& path, const ViewStack& stack);
ViewStack read_view_stack(const std::string& path);

}  // namespace mvcnn::views
