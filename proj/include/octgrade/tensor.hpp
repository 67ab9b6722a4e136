#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace octgrade {

/// Dense row-major real matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return data.size(); }
  bool operator==(const Matrix&) const = default;
};

/// Channel-major feature volume (C, H, W).
struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool operator==(const Shape3&) const = default;
};

struct Tensor {
  Shape3 shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape3 s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}

  double& at(int c, int h, int w) {
    return data[(static_cast<std::size_t>(c) * shape.height + h) * shape.width + w];
  }
  double at(int c, int h, int w) const {
    return data[(static_cast<std::size_t>(c) * shape.height + h) * shape.width + w];
  }

  std::span<double> channel(int c) {
    const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
    return {data.data() + c * plane, plane};
  }
  std::span<const double> channel(int c) const {
    const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
    return {data.data() + c * plane, plane};
  }
};

}  // namespace octgrade
