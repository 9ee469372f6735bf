#pragma once

#include <string>

#include "score/lrp.hpp"
#include "score/tensor.hpp"

namespace score {

// Binary PPM (P6) of a 3 x H x W image in [0, 1].
std::string encode_ppm(const Tensor& image);
// Binary PGM (P5) of positive relevance scaled by the map's max |value|.
std::string encode_heatmap_pgm(const Heatmap& heatmap);
// Heatmap colored red (positive) / blue (negative), alpha-blended at 0.5
// over the grayscale original.
std::string encode_overlay_ppm(const Tensor& image, const Heatmap& heatmap);

}  // namespace score
