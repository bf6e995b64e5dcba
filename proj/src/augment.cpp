#include "catnet/augment.hpp"

#include <cmath>
#include <random>

#include "catnet/rng.hpp"

namespace catnet {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

void check_range(double lo, double hi, const char* what) {
  if (!(lo > 0.0) || !(hi >= lo)) {
    throw ConfigError(std::string(what) + " range must satisfy 0 < lo <= hi");
  }
}

// Bilinear tap with zero fill outside the map.
double sample_plane(const double* plane, int h, int w, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0;
  const double fx = x - x0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int yy = y0 + dy;
      const int xx = x0 + dx;
      if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
      const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
      acc += wgt * plane[static_cast<std::size_t>(yy) * w + xx];
    }
  }
  return acc;
}

std::vector<double> resample(const std::vector<double>& src, int h, int w,
                             double zoom, double rotation_turns) {
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double a = rotation_turns * kTau;
  const double cos_a = std::cos(a);
  const double sin_a = std::sin(a);
  std::vector<double> dst(src.size(), 0.0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < 3; ++c) {
    const double* in = src.data() + static_cast<std::size_t>(c) * plane;
    double* out = dst.data() + static_cast<std::size_t>(c) * plane;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double oy = y - cy;
        const double ox = x - cx;
        const double ry = cos_a * oy - sin_a * ox;
        const double rx = sin_a * oy + cos_a * ox;
        out[static_cast<std::size_t>(y) * w + x] =
            sample_plane(in, h, w, cy + ry / zoom, cx + rx / zoom);
      }
    }
  }
  return dst;
}

}  // namespace

void AugmentationConfig::validate() const {
  if (!(rotation_max >= 0.0) || rotation_max >= 1.0) {
    throw ConfigError("rotation factor must lie in [0, 1)");
  }
  if (!(zoom_max >= 0.0) || zoom_max >= 1.0) {
    throw ConfigError("zoom factor must lie in [0, 1)");
  }
  check_range(contrast_lo, contrast_hi, "contrast");
  check_range(brightness_lo, brightness_hi, "brightness");
  check_range(saturation_lo, saturation_hi, "saturation");
}

Tensor resample_about_center(const Tensor& sample, double zoom, double rotation_turns) {
  if (sample.rank() != 3 || sample.shape()[0] != 3) {
    throw ShapeError("resample expects a [3,H,W] map");
  }
  if (!(zoom > 0.0)) throw ConfigError("zoom scale must be positive");
  return Tensor::from_values(
      sample.shape(),
      resample(sample.values(), sample.shape()[1], sample.shape()[2], zoom, rotation_turns));
}

AugmentationDraw draw_augmentation(const AugmentationConfig& config,
                                   std::uint64_t sample_index) {
  config.validate();
  std::mt19937_64 g(rng::mix(config.seed, sample_index));
  AugmentationDraw d;
  d.zoom = rng::uniform(g, 1.0 - config.zoom_max, 1.0 + config.zoom_max);
  d.rotation = rng::uniform(g, -config.rotation_max, config.rotation_max);
  d.contrast = rng::uniform(g, config.contrast_lo, config.contrast_hi);
  d.brightness = rng::uniform(g, config.brightness_lo, config.brightness_hi);
  d.saturation = rng::uniform(g, config.saturation_lo, config.saturation_hi);
  return d;
}

Tensor augment(const Tensor& sample, const AugmentationConfig& config,
               std::uint64_t sample_index) {
  if (sample.rank() != 3 || sample.shape()[0] != 3) {
    throw ShapeError("augment expects a [3,H,W] map");
  }
  const AugmentationDraw d = draw_augmentation(config, sample_index);
  const int h = sample.shape()[1];
  const int w = sample.shape()[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  std::vector<double> pix = resample(sample.values(), h, w, d.zoom, 0.0);
  pix = resample(pix, h, w, 1.0, d.rotation);

  // Contrast about each channel's own mean, then brightness, with one clip.
  for (int c = 0; c < 3; ++c) {
    double* p = pix.data() + static_cast<std::size_t>(c) * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    mean /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      double v = ((p[i] - mean) * d.contrast + mean) * d.brightness;
      p[i] = std::min(1.0, std::max(0.0, v));
    }
  }

  // Saturation: blend with the luminance gray.
  double* r = pix.data();
  double* gch = pix.data() + plane;
  double* b = pix.data() + 2 * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const double gray = 0.299 * r[i] + 0.587 * gch[i] + 0.114 * b[i];
    r[i] = std::min(1.0, std::max(0.0, gray + (r[i] - gray) * d.saturation));
    gch[i] = std::min(1.0, std::max(0.0, gray + (gch[i] - gray) * d.saturation));
    b[i] = std::min(1.0, std::max(0.0, gray + (b[i] - gray) * d.saturation));
  }

  return Tensor::from_values(sample.shape(), std::move(pix));
}

}  // namespace catnet
