#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "catnet/errors.hpp"
#include "catnet/tensor.hpp"

namespace catnet {

// Interleaved 8-bit RGB raster.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height bytes, row major
};

// Reads a P6 PPM (maxval 255) or an 8-bit PNG, normalizing to RGB.
// Unsupported container or header -> FormatError; short or damaged payload ->
// CorruptionError; unreadable file -> IoError.
ImageU8 read_image_rgb8(const std::string& path);

void write_ppm(const std::string& path, const ImageU8& image);
void write_png(const std::string& path, const ImageU8& image);

// [3,H,W] channel-major map with values byte/255.
Tensor to_feature_map(const ImageU8& image);

// Inverse of to_feature_map: clips to [0,1] and rounds to bytes.
ImageU8 to_image_u8(const Tensor& map);

// read_image_rgb8 followed by to_feature_map.
Tensor decode_image(const std::string& path);

}  // namespace catnet
