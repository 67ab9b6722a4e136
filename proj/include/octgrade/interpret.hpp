#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "octgrade/dataset.hpp"
#include "octgrade/model.hpp"

namespace octgrade {

struct ClassActivationMap {
  Matrix map;  // scan resolution, values in [0,1]
  GradeLabel grade = GradeLabel::healthy;
  std::string image_id;
};

/// sum_k weights[k, c] * features[k, h, w] at feature resolution.
/// `classifier_weights` is row-major (channels x classes).
Matrix cam_raw(const Tensor& features, std::span<const double> classifier_weights, int n_classes,
               GradeLabel grade);

/// Min-max scaling to [0,1]; a constant map becomes all zeros.
Matrix normalize_unit(const Matrix& m);

/// Weighted channel sum, bilinear upsampling to rows x cols, then min-max.
ClassActivationMap compute_cam(const ForwardTrace& trace, std::span<const double> classifier_weights,
                               int n_classes, GradeLabel grade, int rows = kScanRows,
                               int cols = kScanCols);

/// Convenience overload reading the classifier from a built network.
ClassActivationMap compute_cam(const Network& net, const ForwardTrace& trace, GradeLabel grade);

/// Colour for a relevance value in [0,1]: a jet-style ramp
/// blue -> cyan -> yellow -> red  (piecewise linear through
/// (0,0,0.5) (0,0,1) (0,1,1) (1,1,0) (1,0,0) (0.5,0,0) at t = 0, 1/8, 3/8, 5/8, 7/8, 1).
std::array<double, 3> heat_color(double t);

/// 8-bit RGB overlay: out = gray * (1 - alpha*m) + heat_color(m) * alpha*m
/// with alpha = 0.5, so zero relevance leaves the grayscale scan unchanged.
Image8 render_overlay(const ClassActivationMap& cam, const BScan& scan);

void export_heatmap(const ClassActivationMap& cam, const BScan& scan, const std::filesystem::path& path);

/// Raw map dump: "rows cols\n" followed by row-major values, one row per line.
void write_float_matrix(const Matrix& m, const std::filesystem::path& path);

}  // namespace octgrade
