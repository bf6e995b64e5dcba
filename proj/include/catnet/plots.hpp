#pragma once

#include "catnet/image.hpp"
#include "catnet/metrics.hpp"

namespace catnet {

// Rasterizes a PR curve (recall on x, precision on y, both spanning [0,1])
// onto a white canvas with a light quarter grid. The staircase is drawn as
// connected segments through the sweep points.
ImageU8 pr_curve_plot(const PRCurve& curve, int width = 480, int height = 480);

// Confusion-matrix heatmap: one square cell per entry, shaded from white to
// a fixed blue by count relative to the matrix maximum.
ImageU8 confusion_plot(const ConfusionMatrix& matrix, int cell = 32);

}  // namespace catnet
