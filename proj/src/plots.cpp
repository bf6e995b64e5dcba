#include "catnet/plots.hpp"

#include <cmath>
#include <cstdlib>

#include "catnet/errors.hpp"

namespace catnet {

namespace {

void put(ImageU8& img, int x, int y, int r, int g, int b) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  std::size_t i = 3 * (static_cast<std::size_t>(y) * img.width + x);
  img.rgb[i] = static_cast<std::uint8_t>(r);
  img.rgb[i + 1] = static_cast<std::uint8_t>(g);
  img.rgb[i + 2] = static_cast<std::uint8_t>(b);
}

void line(ImageU8& img, int x0, int y0, int x1, int y1, int r, int g, int b) {
  int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  if (steps == 0) {
    put(img, x0, y0, r, g, b);
    return;
  }
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    put(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
        static_cast<int>(std::lround(y0 + t * (y1 - y0))), r, g, b);
  }
}

ImageU8 blank(int w, int h) {
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.rgb.assign(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 255);
  return img;
}

}  // namespace

ImageU8 pr_curve_plot(const PRCurve& curve, int width, int height) {
  if (width < 64 || height < 64) throw ConfigError("plot canvas must be at least 64x64");
  ImageU8 img = blank(width, height);
  const int margin = 24;
  const int left = margin, top = margin;
  const int right = width - margin - 1, bottom = height - margin - 1;

  for (int q = 0; q <= 4; ++q) {
    int x = left + static_cast<int>(std::lround(q / 4.0 * (right - left)));
    int y = top + static_cast<int>(std::lround(q / 4.0 * (bottom - top)));
    line(img, x, top, x, bottom, 220, 220, 220);
    line(img, left, y, right, y, 220, 220, 220);
  }
  line(img, left, top, left, bottom, 120, 120, 120);
  line(img, left, bottom, right, bottom, 120, 120, 120);

  auto px = [&](double recall) {
    return left + static_cast<int>(std::lround(recall * (right - left)));
  };
  auto py = [&](double precision) {
    return top + static_cast<int>(std::lround((1.0 - precision) * (bottom - top)));
  };
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
    line(img, px(curve.points[i].recall), py(curve.points[i].precision),
         px(curve.points[i + 1].recall), py(curve.points[i + 1].precision), 180, 40, 40);
  }
  for (const PRPoint& p : curve.points) {
    int x = px(p.recall), y = py(p.precision);
    put(img, x, y, 180, 40, 40);
    put(img, x + 1, y, 180, 40, 40);
    put(img, x, y + 1, 180, 40, 40);
    put(img, x + 1, y + 1, 180, 40, 40);
  }
  return img;
}

ImageU8 confusion_plot(const ConfusionMatrix& matrix, int cell) {
  const int n = matrix.num_classes();
  if (n < 1) throw SizeError("confusion plot needs a non-empty matrix");
  if (cell < 4) throw ConfigError("confusion plot cells must be at least 4px");

  long long peak = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (matrix.at(i, j) > peak) peak = matrix.at(i, j);
    }
  }

  ImageU8 img = blank(n * cell, n * cell);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double t = peak > 0 ? static_cast<double>(matrix.at(i, j)) / static_cast<double>(peak)
                          : 0.0;
      int r = static_cast<int>(std::lround(255.0 + t * (30.0 - 255.0)));
      int g = static_cast<int>(std::lround(255.0 + t * (60.0 - 255.0)));
      int b = static_cast<int>(std::lround(255.0 + t * (180.0 - 255.0)));
      for (int y = i * cell; y < (i + 1) * cell; ++y) {
        for (int x = j * cell; x < (j + 1) * cell; ++x) put(img, x, y, r, g, b);
      }
    }
  }
  for (int k = 0; k <= n; ++k) {
    line(img, k * cell, 0, k * cell, n * cell - 1, 120, 120, 120);
    line(img, 0, k * cell, n * cell - 1, k * cell, 120, 120, 120);
  }
  return img;
}

}  // namespace catnet
