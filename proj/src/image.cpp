#include "vera/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

namespace vera {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path);
  return f;
}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed");
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw DataError("libpng init failed");
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

}  // namespace

void write_png_rgb(const std::string& path, const Image& image) {
  if (image.height < 1 || image.width < 1 || image.data.rows() != image.pixels())
    throw ArgumentError("write_png_rgb: malformed image");
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw DataError("png write failed: " + path);
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Eigen::Index p = static_cast<Eigen::Index>(y) * image.width + x;
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
            to_byte(image.data(p, c));
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

Image read_png_rgb(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  if (setjmp(png_jmpbuf(r.png))) throw DataError("png read failed: " + path);
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);

  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_packing(r.png);
  if (png_get_color_type(r.png, r.info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (png_get_color_type(r.png, r.info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(r.png, r.info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);

  const int height = static_cast<int>(png_get_image_height(r.png, r.info));
  const int width = static_cast<int>(png_get_image_width(r.png, r.info));
  if (png_get_channels(r.png, r.info) != 3) throw DataError("unexpected channel count: " + path);

  Image img;
  img.height = height;
  img.width = width;
  img.data.resize(static_cast<Eigen::Index>(height) * width, 3);
  std::vector<png_byte> row(static_cast<std::size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      const Eigen::Index p = static_cast<Eigen::Index>(y) * width + x;
      for (int c = 0; c < 3; ++c)
        img.data(p, c) = from_byte(row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)]);
    }
  }
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_labels(const std::string& path, const Eigen::VectorXi& labels, int height,
                      int width, int num_labels) {
  if (labels.size() != static_cast<Eigen::Index>(height) * width)
    throw ArgumentError("write_png_labels: size mismatch");
  if (num_labels < 1 || num_labels > 256) throw ArgumentError("write_png_labels: bad label count");
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw DataError("png write failed: " + path);
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // Deterministic palette: evenly spread gray ramp so label maps are viewable.
  std::vector<png_color> palette(static_cast<std::size_t>(num_labels));
  for (int i = 0; i < num_labels; ++i) {
    const png_byte v = static_cast<png_byte>(num_labels > 1 ? (255 * i) / (num_labels - 1) : 0);
    palette[static_cast<std::size_t>(i)] = png_color{v, v, v};
  }
  png_set_PLTE(w.png, w.info, palette.data(), num_labels);
  png_write_info(w.png, w.info);
  std::vector<png_byte> row(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int v = labels[static_cast<Eigen::Index>(y) * width + x];
      if (v < 0 || v >= num_labels) throw ArgumentError("write_png_labels: label out of range");
      row[static_cast<std::size_t>(x)] = static_cast<png_byte>(v);
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

std::pair<Eigen::VectorXi, std::pair<int, int>> read_png_labels(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  if (setjmp(png_jmpbuf(r.png))) throw DataError("png read failed: " + path);
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);

  const png_byte color = png_get_color_type(r.png, r.info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY)
    throw DataError("label map must be an indexed or grayscale PNG: " + path);
  png_set_strip_16(r.png);
  png_set_packing(r.png);  // widen 1/2/4-bit samples to bytes, indices intact
  png_read_update_info(r.png, r.info);

  const int height = static_cast<int>(png_get_image_height(r.png, r.info));
  const int width = static_cast<int>(png_get_image_width(r.png, r.info));
  Eigen::VectorXi labels(static_cast<Eigen::Index>(height) * width);
  std::vector<png_byte> row(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < width; ++x)
      labels[static_cast<Eigen::Index>(y) * width + x] = row[static_cast<std::size_t>(x)];
  }
  png_read_end(r.png, nullptr);
  return {labels, {height, width}};
}

void write_png_mask(const std::string& path, const MaskImage& mask) {
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  if (setjmp(png_jmpbuf(w.png))) throw DataError("png write failed: " + path);
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(mask.cols()),
               static_cast<png_uint_32>(mask.rows()), 1, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  png_set_packing(w.png);  // accept one byte per pixel, pack to 1-bit rows
  std::vector<png_byte> row(static_cast<std::size_t>(mask.cols()));
  for (Eigen::Index y = 0; y < mask.rows(); ++y) {
    for (Eigen::Index x = 0; x < mask.cols(); ++x)
      row[static_cast<std::size_t>(x)] = mask(y, x) != 0 ? 1 : 0;
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

MaskImage read_png_mask(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  if (setjmp(png_jmpbuf(r.png))) throw DataError("png read failed: " + path);
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);
  if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
    throw DataError("mask must be a grayscale PNG: " + path);
  png_set_strip_16(r.png);
  png_set_packing(r.png);
  png_read_update_info(r.png, r.info);
  const int height = static_cast<int>(png_get_image_height(r.png, r.info));
  const int width = static_cast<int>(png_get_image_width(r.png, r.info));
  MaskImage mask(height, width);
  std::vector<png_byte> row(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) mask(y, x) = row[static_cast<std::size_t>(x)] != 0 ? 1 : 0;
  }
  png_read_end(r.png, nullptr);
  return mask;
}

}  // namespace vera
