#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "netsurgeon/geometry.hpp"
#include "netsurgeon/tensor.hpp"

namespace netsurgeon {

/// Reads an 8- or 16-bit PNG into [0, 1]. Gray and gray+alpha give 1 channel,
/// RGB and RGBA give 3; alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

/// PNG header dimensions without decoding pixel data.
Extent2 png_extent(const std::filesystem::path& path);

/// Encodes a 1- or 3-channel tensor as an 8-bit PNG; values are clamped to [0, 1].
std::vector<unsigned char> encode_png(const Tensor& image);
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Bilinear resize with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, int height, int width);

/// Crop of `rect` (which must lie inside the image).
Tensor crop(const Tensor& image, const PixelRect& rect);

struct PyramidLevel {
  double scale = 1.0;
  Tensor image;
};

inline constexpr int kDefaultPyramidScales = 5;
inline const double kDefaultPyramidFactor = 1.0 / std::sqrt(2.0);

/// Level i is the image resized by factor^i; level 0 is the original.
std::vector<PyramidLevel> make_pyramid(const Tensor& image, int num_scales,
                                       double factor = kDefaultPyramidFactor);

}  // namespace netsurgeon
