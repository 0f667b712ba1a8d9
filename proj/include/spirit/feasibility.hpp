#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "spirit/numeric.hpp"
#include "spirit/tensor.hpp"

namespace spirit {

/// Axis-aligned box in continuous pixel coordinates; pixel (x, y) covers
/// [x, x+1) x [y, y+1).
struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }
  double center_x() const noexcept { return 0.5 * (x1 + x2); }
  double center_y() const noexcept { return 0.5 * (y1 + y2); }
  bool finite() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2);
  }
  bool valid() const noexcept { return finite() && x1 < x2 && y1 < y2; }
  bool operator==(const Box&) const = default;
};

struct Detection {
  Box box;
  double score = 0.0;
  bool operator==(const Detection&) const = default;
};

struct FeasibilityField {
  Matrix values;  // H_L x W_L, strictly positive
  double kappa = 2.0;
  std::size_t sources = 0;
};

inline constexpr double kDefaultKappa = 2.0;
/// Detections scoring below this floor do not seed the field.
inline constexpr double kReliableScore = 0.3;
inline constexpr double kMinPeakScale = 0.5;

/// Sum of isotropic Gaussians centred on the detections mapped to the grid.
/// Grid point (i, j) sits at the centre of cell (i, j); a box centre at pixel
/// (cx, cy) maps to grid coordinates (cx*W_L/W_img - 1/2, cy*H_L/H_img - 1/2).
/// Peak width is kappa * max(0.5, (scaled width + scaled height) / 4).
inline FeasibilityField build_field(const std::vector<Detection>& dets, GridSize image_size,
                                    GridSize grid, double kappa = kDefaultKappa,
                                    double min_score = kReliableScore) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InvalidInput("build_field: kappa must be > 0");
  if (image_size.cells() == 0 || grid.cells() == 0) throw InvalidInput("build_field: empty grid");

  FeasibilityField field;
  field.kappa = kappa;
  field.values = Matrix(grid.height, grid.width, 0.0);
  const double sx = static_cast<double>(grid.width) / static_cast<double>(image_size.width);
  const double sy = static_cast<double>(grid.height) / static_cast<double>(image_size.height);

  for (const auto& d : dets) {
    if (!d.box.finite() || !std::isfinite(d.score)) throw InvalidInput("build_field: non-finite detection");
    if (d.score < min_score) continue;
    const double x1 = std::clamp(d.box.x1, 0.0, static_cast<double>(image_size.width));
    const double x2 = std::clamp(d.box.x2, 0.0, static_cast<double>(image_size.width));
    const double y1 = std::clamp(d.box.y1, 0.0, static_cast<double>(image_size.height));
    const double y2 = std::clamp(d.box.y2, 0.0, static_cast<double>(image_size.height));
    const double cx = 0.5 * (x1 + x2) * sx - 0.5;
    const double cy = 0.5 * (y1 + y2) * sy - 0.5;
    const double scale = std::max(kMinPeakScale, 0.25 * (std::abs(x2 - x1) * sx + std::abs(y2 - y1) * sy));
    const double denom = 2.0 * kappa * kappa * scale * scale;
    for (std::size_t i = 0; i < grid.height; ++i) {
      const double dy = static_cast<double>(i) - cy;
      for (std::size_t j = 0; j < grid.width; ++j) {
        const double dx = static_cast<double>(j) - cx;
        field.values(i, j) += std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
    ++field.sources;
  }
  if (field.sources == 0) {
    field.values = Matrix(grid.height, grid.width, 1.0);
  }
  // Far tails can underflow to 0; the field is kept strictly positive.
  for (auto& v : field.values.data()) v = std::max(v, std::numeric_limits<double>::min());
  return field;
}

/// g = sigmoid(conv3x3(downsample_avg(G))), one value per deep-grid cell.
inline Matrix make_gate_map(const FeasibilityField& field, GridSize grid, const Matrix& kernel, double bias) {
  Matrix g = conv3x3(downsample_avg(field.values, grid.height, grid.width), kernel, bias);
  for (auto& v : g.data()) v = sigmoid(v);
  return g;
}

inline double sample_prior(const FeasibilityField& field, std::size_t row, std::size_t col) {
  if (row >= field.values.rows() || col >= field.values.cols()) {
    throw InvalidInput("sample_prior: position (" + std::to_string(row) + "," + std::to_string(col) +
                       ") outside field");
  }
  return field.values(row, col);
}

}  // namespace spirit
