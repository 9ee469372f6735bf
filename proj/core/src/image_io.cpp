#include "score/image_io.hpp"

#include <algorithm>
#include <cmath>

namespace score {
namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

}  // namespace

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("encode_ppm: expected 3 x H x W, got " + shape_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::string out = header("P6", w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte(image.at(c, y, x))));
  return out;
}

std::string encode_heatmap_pgm(const Heatmap& heatmap) {
  std::string out = header("P5", heatmap.width, heatmap.height);
  const double scale = heatmap.max_abs();
  for (float v : heatmap.values) {
    out.push_back(static_cast<char>(scale > 0.0 ? to_byte(std::max(0.0, static_cast<double>(v)) / scale) : 0));
  }
  return out;
}

std::string encode_overlay_ppm(const Tensor& image, const Heatmap& heatmap) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (heatmap.height != h || heatmap.width != w) throw DimensionError("encode_overlay_ppm: heatmap size differs from image");
  std::string out = header("P6", w, h);
  const double scale = heatmap.max_abs();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double gray = (image.at(0, y, x) + image.at(1, y, x) + image.at(2, y, x)) / 3.0;
      const double r = scale > 0.0 ? heatmap.at(y, x) / scale : 0.0;
      const double red = r > 0.0 ? r : 0.0;
      const double blue = r < 0.0 ? -r : 0.0;
      const double rgb[3] = {red, 0.0, blue};
      for (double c : rgb) out.push_back(static_cast<char>(to_byte(0.5 * gray + 0.5 * c)));
    }
  }
  return out;
}

}  // namespace score
