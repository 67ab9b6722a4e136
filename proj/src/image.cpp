#include "octgrade/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "octgrade/error.hpp"

namespace octgrade {

Matrix resample_bilinear(const Matrix& src, int rows, int cols) {
  Matrix out(rows, cols);
  const double sy = static_cast<double>(src.rows) / rows;
  const double sx = static_cast<double>(src.cols) / cols;
  for (int r = 0; r < rows; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.rows - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.rows - 1);
    const double wy = fy - y0;
    for (int c = 0; c < cols; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.cols - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.cols - 1);
      const double wx = fx - x0;
      const double top = src(y0, x0) * (1.0 - wx) + src(y0, x1) * wx;
      const double bottom = src(y1, x0) * (1.0 - wx) + src(y1, x1) * wx;
      out(r, c) = top * (1.0 - wy) + bottom * wy;
    }
  }
  return out;
}

namespace {

// Overlap weights of each output cell with the source cells along one axis.
struct AxisFootprint {
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

AxisFootprint footprint(int src, int dst) {
  AxisFootprint fp;
  fp.first.resize(dst);
  fp.weights.resize(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    const int a = static_cast<int>(std::floor(lo));
    const int b = std::min(src, static_cast<int>(std::ceil(hi)));
    fp.first[i] = a;
    for (int s = a; s < b; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      fp.weights[i].push_back(overlap / scale);
    }
  }
  return fp;
}

}  // namespace

Matrix resample_area(const Matrix& src, int rows, int cols) {
  const AxisFootprint fy = footprint(src.rows, rows);
  const AxisFootprint fx = footprint(src.cols, cols);
  Matrix out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < fy.weights[r].size(); ++i) {
        const int y = fy.first[r] + static_cast<int>(i);
        double row_acc = 0.0;
        for (std::size_t j = 0; j < fx.weights[c].size(); ++j) {
          row_acc += fx.weights[c][j] * src(y, fx.first[c] + static_cast<int>(j));
        }
        acc += fy.weights[r][i] * row_acc;
      }
      out(r, c) = acc;
    }
  }
  return out;
}

Matrix resample(const Matrix& src, int rows, int cols) {
  if (src.rows == rows && src.cols == cols) return src;
  if (rows <= src.rows && cols <= src.cols) return resample_area(src, rows, cols);
  return resample_bilinear(src, rows, cols);
}

Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(ErrorCode::IoFailure, "cannot read PNG " + path.string() + ": " + image.message);
  }
  Image8 out;
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (color) {
    image.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    out.channels = alpha ? 4 : 3;
  } else {
    image.format = alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY;
    out.channels = alpha ? 2 : 1;
  }
  out.rows = static_cast<int>(image.height);
  out.cols = static_cast<int>(image.width);
  out.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::IoFailure, "cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::IoFailure, "write_png supports 1 or 3 channels");
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.cols);
  image.height = static_cast<png_uint_32>(img.rows);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoFailure, "cannot write PNG " + path.string() + ": " + image.message);
  }
}

Image8 quantize_gray(const Matrix& pixels) {
  Image8 out;
  out.rows = pixels.rows;
  out.cols = pixels.cols;
  out.channels = 1;
  out.data.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(pixels.data[i], 0.0, 1.0);
    out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace octgrade
