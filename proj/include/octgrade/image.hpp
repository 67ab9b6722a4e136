#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "octgrade/tensor.hpp"

namespace octgrade {

/// 8-bit raster as decoded from disk; interleaved channels.
struct Image8 {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  bool operator==(const Image8&) const = default;
};

/// Half-pixel-centre bilinear resampling with edge clamping.
Matrix resample_bilinear(const Matrix& src, int rows, int cols);

/// Box-filter (area) resampling; each output pixel averages the source
/// footprint it covers. Used when shrinking scans to the network input size.
Matrix resample_area(const Matrix& src, int rows, int cols);

/// Picks area resampling for shrinking and bilinear otherwise, per axis pair.
Matrix resample(const Matrix& src, int rows, int cols);

Image8 read_png(const std::filesystem::path& path);

/// Writes gray (1 channel) or RGB (3 channel) 8-bit PNGs with fixed encoder
/// settings, so equal inputs produce byte-identical files.
void write_png(const std::filesystem::path& path, const Image8& image);

/// Rounds [0,1] values to the nearest 8-bit level.
Image8 quantize_gray(const Matrix& pixels);

}  // namespace octgrade
