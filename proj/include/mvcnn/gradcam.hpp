#pragma once

#include <array>
#include <string>

#include "mvcnn/image.hpp"
#include "mvcnn/model.hpp"
#include "mvcnn/views.hpp"

namespace mvcnn::gradcam {

/// Class-activation heatmap of one conv stage for one input.
struct HeatMap {
  Field raw;        // conv-stage spatial size, nonnegative
  Field upsampled;  // input resolution, max-normalized into [0, 1]
  int target_class = 0;
  std::string layer_name;  // the conv stage the map was taken from
};

/// Builds the heatmap: an infer-mode forward caches the target conv stage's
/// post-ReLU activation A, the target class's pre-softmax logit is
/// backpropagated to A, each channel k is weighted by the spatial mean of
/// that gradient, and raw = ReLU(sum_k weight_k * A_k). The map is then
/// resized (corner-aligned bilinear; a 1x1 map broadcasts as a constant) to
/// the stack's resolution and divided by its maximum — an all-zero map stays
/// zero. `layer` selects the conv stage by name ("conv3"); empty means the
/// last conv stage. A name that is missing or not a conv stage raises
/// ConfigError; an out-of-range class raises ParameterError.
HeatMap compute_heatmap(const model::Model& model, const views::ViewStack& input,
                        int target_class, const std::string& layer = "");

/// 256-entry blue -> green -> red colormap: value 0 is pure blue, 0.5 green,
/// 1 red, linearly interpolated per channel. Input is clamped to [0, 1].
std::array<float, 3> heat_color(float value);

/// Blends the colormapped heatmap over an RGB image:
/// pixel = (1 - alpha) * image + alpha * heat_color(upsampled). Alpha 0
/// returns the image untouched. The image must match the upsampled size
/// (DimensionError) and alpha must lie in [0, 1] (ParameterError).
Image overlay(const HeatMap& heatmap, const Image& rgb, float alpha);

/// Persists a raw heatmap field in the view-stack binary layout with channel
/// count 1 (a count no view combination uses, so the view-stack reader
/// refuses such files; this pair owns them).
void write_heat_field(const std::string& path, const Field& field);
Field read_heat_field(const std::string& path);

}  // namespace mvcnn::gradcam
