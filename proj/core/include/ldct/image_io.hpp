#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldct/tensor.hpp"

namespace ldct::io {

inline constexpr double kHuOffset = 1000.0;
inline constexpr double kDisplayLow = -160.0;
inline constexpr double kDisplayHigh = 240.0;

/// Stores a 2-D HU image as tensor "image" holding HU + hu_offset.
void write_image(const std::filesystem::path& path, const Tensor<double>& hu);
Tensor<double> read_image(const std::filesystem::path& path);

/// 8-bit grayscale PNG of a 2-D array, mapping [low, high] to [0, 255] with clipping.
void write_png(const std::filesystem::path& path, const Tensor<double>& image, double low, double high);
inline void write_png_hu(const std::filesystem::path& path, const Tensor<double>& hu) {
  write_png(path, hu, kDisplayLow, kDisplayHigh);
}
/// Reads an 8-bit grayscale PNG back as values in [0, 255].
Tensor<double> read_png(const std::filesystem::path& path);

/// Lays out equally sized 2-D tiles row-major in a grid, each rescaled to its own [min, max] -> [0, 1].
Tensor<double> tile_grid(const std::vector<Tensor<double>>& tiles, std::size_t columns, std::size_t gap = 2);

}  // namespace ldct::io
