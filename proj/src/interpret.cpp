#include "octgrade/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "octgrade/error.hpp"

namespace octgrade {

Matrix cam_raw(const Tensor& features, std::span<const double> classifier_weights, int n_classes,
               GradeLabel grade) {
  const int channels = features.shape.channels;
  if (classifier_weights.size() != static_cast<std::size_t>(channels) * n_classes) {
    throw Error(ErrorCode::ShapeMismatch, "classifier weights do not match the feature channels");
  }
  const int c = index_of(grade);
  if (c >= n_classes) throw Error(ErrorCode::ShapeMismatch, "class index outside the classifier");
  Matrix m(features.shape.height, features.shape.width);
  for (int k = 0; k < channels; ++k) {
    const double w = classifier_weights[static_cast<std::size_t>(k) * n_classes + c];
    const auto plane = features.channel(k);
    for (std::size_t i = 0; i < plane.size(); ++i) m.data[i] += w * plane[i];
  }
  return m;
}

Matrix normalize_unit(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  if (m.data.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(m.data.begin(), m.data.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = (m.data[i] - lo) / (hi - lo);
  return out;
}

ClassActivationMap compute_cam(const ForwardTrace& trace, std::span<const double> classifier_weights,
                               int n_classes, GradeLabel grade, int rows, int cols) {
  if (trace.features.data.empty()) throw Error(ErrorCode::ShapeMismatch, "trace has no feature volume");
  ClassActivationMap cam;
  cam.grade = grade;
  cam.map = normalize_unit(resample_bilinear(cam_raw(trace.features, classifier_weights, n_classes, grade),
                                             rows, cols));
  return cam;
}

ClassActivationMap compute_cam(const Network& net, const ForwardTrace& trace, GradeLabel grade) {
  const auto& logits = net.graph.layers[net.graph.logits_node];
  const auto& w = net.params.arrays[logits.weight_param].values;
  return compute_cam(trace, w, logits.out_channels, grade);
}

std::array<double, 3> heat_color(double t) {
  static constexpr double knots[6] = {0.0, 1.0 / 8, 3.0 / 8, 5.0 / 8, 7.0 / 8, 1.0};
  static constexpr double colors[6][3] = {
      {0.0, 0.0, 0.5}, {0.0, 0.0, 1.0}, {0.0, 1.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 0.0}, {0.5, 0.0, 0.0}};
  t = std::clamp(t, 0.0, 1.0);
  int k = 0;
  while (k < 4 && t > knots[k + 1]) ++k;
  const double f = (t - knots[k]) / (knots[k + 1] - knots[k]);
  return {colors[k][0] + f * (colors[k + 1][0] - colors[k][0]),
          colors[k][1] + f * (colors[k + 1][1] - colors[k][1]),
          colors[k][2] + f * (colors[k + 1][2] - colors[k][2])};
}

Image8 render_overlay(const ClassActivationMap& cam, const BScan& scan) {
  if (cam.map.rows != scan.pixels.rows || cam.map.cols != scan.pixels.cols) {
    throw Error(ErrorCode::ShapeMismatch, "map and scan sizes differ");
  }
  constexpr double alpha = 0.5;
  Image8 img;
  img.rows = scan.pixels.rows;
  img.cols = scan.pixels.cols;
  img.channels = 3;
  img.data.resize(scan.pixels.size() * 3);
  for (std::size_t i = 0; i < scan.pixels.size(); ++i) {
    const double gray = std::clamp(scan.pixels.data[i], 0.0, 1.0);
    const double m = std::clamp(cam.map.data[i], 0.0, 1.0);
    const auto color = heat_color(m);
    for (int ch = 0; ch < 3; ++ch) {
      const double v = gray * (1.0 - alpha * m) + color[ch] * alpha * m;
      img.data[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

void export_heatmap(const ClassActivationMap& cam, const BScan& scan, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png(path, render_overlay(cam, scan));
}

void write_float_matrix(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << m.rows << ' ' << m.cols << '\n' << std::setprecision(17);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
}

}  // namespace octgrade
