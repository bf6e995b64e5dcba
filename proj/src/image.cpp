#include "catnet/image.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace catnet {

namespace {

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0) throw FormatError("non-positive image dimensions");
  if (static_cast<long long>(width) * height > 100'000'000LL) {
    throw FormatError("image dimensions exceed the supported size");
  }
}

// Skips PPM whitespace and '#' comment lines, then parses one decimal field.
int ppm_int(std::istream& in) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw FormatError("malformed ppm header");
  long long value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    if (value > 1'000'000'000LL) throw FormatError("ppm header field out of range");
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(value);
}

ImageU8 read_ppm(std::istream& in) {
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw FormatError("not a P6 ppm");
  const int width = ppm_int(in);
  const int height = ppm_int(in);
  const int maxval = ppm_int(in);
  check_dims(width, height);
  if (maxval != 255) throw FormatError("only maxval 255 ppm files are supported");
  const int sep = in.get();
  if (sep == EOF || !std::isspace(sep)) throw FormatError("missing ppm header terminator");

  ImageU8 img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.rgb.size()) {
    throw CorruptionError("ppm pixel data is truncated");
  }
  return img;
}

struct PngReadCtx {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t len) {
  auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
  if (ctx->pos + len > ctx->size) {
    png_error(png, "read past end of file");
  }
  std::memcpy(out, ctx->data + ctx->pos, len);
  ctx->pos += len;
}

[[noreturn]] void png_raise(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }

void png_quiet(png_structp, png_const_charp) {}

ImageU8 read_png(const std::vector<std::uint8_t>& bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_raise, png_quiet);
  if (!png) throw RuntimeFailure("png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw RuntimeFailure("png info allocation failed");
  }

  ImageU8 img;
  std::vector<png_bytep> rows;
  PngReadCtx ctx{bytes.data(), bytes.size(), 0};

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptionError("png stream is damaged or truncated");
  }

  png_set_read_fn(png, &ctx, png_mem_read);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  check_dims(img.width, img.height);
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    rows[y] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

std::vector<std::uint8_t> slurp_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

ImageU8 read_image_rgb8(const std::string& path) {
  const std::vector<std::uint8_t> bytes = slurp_bytes(path);
  static const std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) {
    return read_png(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    return read_ppm(in);
  }
  throw FormatError("unsupported image container: " + path);
}

void write_ppm(const std::string& path, const ImageU8& image) {
  check_dims(image.width, image.height);
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw SizeError("pixel buffer does not match image dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("short write to " + path);
}

void write_png(const std::string& path, const ImageU8& image) {
  check_dims(image.width, image.height);
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw SizeError("pixel buffer does not match image dimensions");
  }
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_raise, png_quiet);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw RuntimeFailure("png writer allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("png encoding failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() +
                                             static_cast<std::size_t>(y) * image.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor to_feature_map(const ImageU8& image) {
  check_dims(image.width, image.height);
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw SizeError("pixel buffer does not match image dimensions");
  }
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
  std::vector<double> values(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      values[static_cast<std::size_t>(c) * plane + i] =
          static_cast<double>(image.rgb[i * 3 + static_cast<std::size_t>(c)]) / 255.0;
    }
  }
  return Tensor::from_values({3, image.height, image.width}, std::move(values));
}

ImageU8 to_image_u8(const Tensor& map) {
  if (map.rank() != 3 || map.shape()[0] != 3) {
    throw ShapeError("expected a [3,H,W] feature map");
  }
  ImageU8 img;
  img.height = map.shape()[1];
  img.width = map.shape()[2];
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  img.rgb.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      double v = map.values()[static_cast<std::size_t>(c) * plane + i];
      v = std::min(1.0, std::max(0.0, v));
      img.rgb[i * 3 + static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

Tensor decode_image(const std::string& path) { return to_feature_map(read_image_rgb8(path)); }

}  // namespace catnet
