#pragma once

#include <string>

#include "catnet/model.hpp"
#include "catnet/tensor.hpp"

namespace catnet {

// Relevance map over the hooked layer's spatial grid. Entries are rectified
// and max-normalized: all values in [0,1], and the max is exactly 1 unless
// the map is identically zero.
struct GradCamMap {
  Tensor heatmap;  // [h,w]
  int target_class = 0;
  std::string source_layer;
};

// Forward to the logits, backward from the target-class logit to the last
// mbconv block's output A, weight each channel by the spatial mean of its
// gradient, rectify the weighted sum, max-normalize. `image` is a [C,H,W]
// feature map matching the model input.
GradCamMap compute_gradcam(Model& model, const Tensor& image, int target_class);

// Upsamples the map to the image grid bilinearly, colors it through a fixed
// blue-to-red ramp, alpha-blends at 0.5 over the image, and writes a PNG.
// `image` is a [3,H,W] feature map with values in [0,1].
void render_overlay(const GradCamMap& map, const Tensor& image, const std::string& path);

// CSV rows `row,col,value` for the raw heatmap.
std::string heatmap_csv(const GradCamMap& map);

}  // namespace catnet
