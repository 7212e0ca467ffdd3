#pragma once

#include "vera/common.hpp"
#include "vera/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

namespace vera {

/// RGB image in model range [-1, 1], pixel-major rows: data is (H*W, 3) with
/// pixel p = y*W + x.
struct Image {
  int height = 0;
  int width = 0;
  Mat data;

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
};

/// Binary mask (H, W) with values in {0, 1}.
using MaskImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline Image image_from_generated(const GeneratedOutput& g) {
  return Image{g.height, g.width, g.image};
}

/// The documented I/O affine map: [-1,1] -> [0,255] with rounding and clamp.
inline std::uint8_t to_byte(double x) {
  const double v = std::round((x + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, v)));
}
inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

// ---- PNG I/O (8-bit RGB images, indexed label maps, 1-bit masks) ----

void write_png_rgb(const std::string& path, const Image& image);
Image read_png_rgb(const std::string& path);

/// Indexed 8-bit PNG whose palette indices are the label values.
void write_png_labels(const std::string& path, const Eigen::VectorXi& labels, int height,
                      int width, int num_labels);
/// Reads raw palette indices (or gray levels) without palette expansion.
std::pair<Eigen::VectorXi, std::pair<int, int>> read_png_labels(const std::string& path);

void write_png_mask(const std::string& path, const MaskImage& mask);
MaskImage read_png_mask(const std::string& path);

}  // namespace vera
