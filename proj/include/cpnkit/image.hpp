#pragma once

#include "cpnkit/grid.hpp"

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <utility>
#include <vector>

namespace cpnkit {

/// 3 x H x W float image in [0, 1].
using Image = Grid<float>;
using Rgb = std::array<float, 3>;

/// PNG (any bit depth, converted to 8-bit RGB) or binary PPM (P6, maxval 255).
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Integer pixels (x, y) whose centre lies within `half_width` of segment ab.
std::vector<std::pair<Index, Index>> segment_pixels(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                                                    double half_width, Index height, Index width);
std::vector<std::pair<Index, Index>> disk_pixels(const Eigen::Vector2d& center, double radius, Index height,
                                                 Index width);

void paint(Image& image, const std::vector<std::pair<Index, Index>>& pixels, const Rgb& color);

/// Fixed per-channel normalisation applied to crops before the network.
inline constexpr float kPixelMean = 0.5f;
inline constexpr float kPixelStd = 0.25f;
Image normalize_pixels(const Image& image);

}  // namespace cpnkit
