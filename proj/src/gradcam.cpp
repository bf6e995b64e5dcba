#include "catnet/gradcam.hpp"

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "catnet/errors.hpp"
#include "catnet/image.hpp"

namespace catnet {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Center-aligned bilinear resize with edge clamping.
std::vector<double> resize_plane(const std::vector<double>& src, int sh, int sw, int dh,
                                 int dw) {
  std::vector<double> out(static_cast<std::size_t>(dh) * static_cast<std::size_t>(dw));
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sh / dh - 0.5;
    if (fy < 0.0) fy = 0.0;
    if (fy > sh - 1.0) fy = sh - 1.0;
    int y0 = static_cast<int>(fy);
    int y1 = y0 + 1 < sh ? y0 + 1 : sh - 1;
    double ty = fy - y0;
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sw / dw - 0.5;
      if (fx < 0.0) fx = 0.0;
      if (fx > sw - 1.0) fx = sw - 1.0;
      int x0 = static_cast<int>(fx);
      int x1 = x0 + 1 < sw ? x0 + 1 : sw - 1;
      double tx = fx - x0;
      double top = src[static_cast<std::size_t>(y0) * sw + x0] * (1.0 - tx) +
                   src[static_cast<std::size_t>(y0) * sw + x1] * tx;
      double bot = src[static_cast<std::size_t>(y1) * sw + x0] * (1.0 - tx) +
                   src[static_cast<std::size_t>(y1) * sw + x1] * tx;
      out[static_cast<std::size_t>(y) * dw + x] = top * (1.0 - ty) + bot * ty;
    }
  }
  return out;
}

}  // namespace

GradCamMap compute_gradcam(Model& model, const Tensor& image, int target_class) {
  const ModelConfig& cfg = model.config();
  int hook_stage = -1;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    if (cfg.stages[i].kind == StageKind::Mbconv) hook_stage = static_cast<int>(i);
  }
  if (hook_stage < 0) {
    throw StructureError("gradcam needs an mbconv stage to hook");
  }
  if (target_class < 0 || target_class >= cfg.num_classes) {
    throw IndexError("gradcam target class out of range");
  }
  if (image.rank() != 3 || image.shape()[0] != cfg.in_channels ||
      image.shape()[1] != cfg.in_height || image.shape()[2] != cfg.in_width) {
    throw ShapeError("gradcam image does not match the model input shape");
  }

  Tensor batch = Tensor::from_shared(
      {1, cfg.in_channels, cfg.in_height, cfg.in_width}, image.values_ptr());
  Graph g;
  Model::Forward fwd = model.forward(batch, &g, false);

  std::vector<double> onehot(static_cast<std::size_t>(cfg.num_classes), 0.0);
  onehot[static_cast<std::size_t>(target_class)] = 1.0;
  Tensor mask = Tensor::from_values({1, cfg.num_classes}, std::move(onehot));
  Tensor score = sum(mul(fwd.logits, mask));
  GradientMap grads = g.backward(score);

  const Shape& hs = fwd.conv_hook.shape();
  int channels = hs[1], h = hs[2], w = hs[3];
  long long plane = static_cast<long long>(h) * w;
  const std::vector<double>& acts = fwd.conv_hook.values();
  const std::vector<double>& dacts = grads[static_cast<std::size_t>(fwd.conv_hook.node())];

  std::vector<double> heat(static_cast<std::size_t>(plane), 0.0);
  for (int k = 0; k < channels; ++k) {
    const double* gk = dacts.data() + static_cast<long long>(k) * plane;
    double alpha = 0.0;
    for (long long p = 0; p < plane; ++p) alpha += gk[p];
    alpha /= static_cast<double>(plane);
    const double* ak = acts.data() + static_cast<long long>(k) * plane;
    for (long long p = 0; p < plane; ++p) heat[static_cast<std::size_t>(p)] += alpha * ak[p];
  }
  double peak = 0.0;
  for (double& v : heat) {
    if (v < 0.0) v = 0.0;
    if (v > peak) peak = v;
  }
  if (peak > 0.0) {
    for (double& v : heat) v /= peak;
  }

  GradCamMap out;
  out.heatmap = Tensor::from_values({h, w}, std::move(heat));
  out.target_class = target_class;
  out.source_layer = "stage" + std::to_string(hook_stage) + ".block" +
                     std::to_string(cfg.stages[static_cast<std::size_t>(hook_stage)].blocks - 1);
  return out;
}

void render_overlay(const GradCamMap& map, const Tensor& image, const std::string& path) {
  if (map.heatmap.rank() != 2) throw ShapeError("heatmap must be a [h,w] tensor");
  if (image.rank() != 3 || image.shape()[0] != 3) {
    throw ShapeError("overlay image must be a [3,H,W] feature map");
  }
  int height = image.shape()[1], width = image.shape()[2];
  std::vector<double> up = resize_plane(map.heatmap.values(), map.heatmap.shape()[0],
                                        map.heatmap.shape()[1], height, width);
  long long plane = static_cast<long long>(height) * width;
  const std::vector<double>& img = image.values();
  std::vector<double> blended(static_cast<std::size_t>(3 * plane));
  for (long long p = 0; p < plane; ++p) {
    double v = up[static_cast<std::size_t>(p)];
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    blended[static_cast<std::size_t>(p)] = 0.5 * img[static_cast<std::size_t>(p)] + 0.5 * v;
    blended[static_cast<std::size_t>(plane + p)] = 0.5 * img[static_cast<std::size_t>(plane + p)];
    blended[static_cast<std::size_t>(2 * plane + p)] =
        0.5 * img[static_cast<std::size_t>(2 * plane + p)] + 0.5 * (1.0 - v);
  }
  write_png(path, to_image_u8(Tensor::from_values({3, height, width}, std::move(blended))));
}

std::string heatmap_csv(const GradCamMap& map) {
  if (map.heatmap.rank() != 2) throw ShapeError("heatmap must be a [h,w] tensor");
  int h = map.heatmap.shape()[0], w = map.heatmap.shape()[1];
  const std::vector<double>& vals = map.heatmap.values();
  std::string out = "row,col,value\n";
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      out += std::to_string(r);
      out += ',';
      out += std::to_string(c);
      out += ',';
      out += fmt(vals[static_cast<std::size_t>(r) * w + c]);
      out += '\n';
    }
  }
  return out;
}

}  // namespace catnet
