#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "spirit/error.hpp"
#include "spirit/tensor.hpp"

namespace spirit {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

/// Solves A W = B for symmetric positive-definite A by Cholesky factorization.
inline Matrix solve_spd(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("solve_spd: A must be square");
  if (b.rows() != n) throw ShapeError("solve_spd: B row count must match A");
  if (!a.all_finite() || !b.all_finite()) throw InvalidInput("solve_spd: non-finite entry");

  // Lower-triangular factor L with A = L L^T.
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) {
      throw NumericalError("solve_spd: non-positive pivot at index " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }

  Matrix w = b;
  const std::size_t m = b.cols();
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = w(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * w(k, c);
      w(i, c) = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = w(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * w(k, c);
      w(ii, c) = s / l(ii, ii);
    }
  }
  return w;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& s) {
  if (s.cols() == 0) throw InvalidInput("softmax_rows: empty row dimension");
  if (!s.all_finite()) throw InvalidInput("softmax_rows: non-finite logit");
  Matrix out(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.cols(); ++c) mx = std::max(mx, s(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < s.cols(); ++c) {
      out(r, c) = std::exp(s(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < s.cols(); ++c) out(r, c) /= z;
  }
  return out;
}

/// 3x3 correlation with zero padding; output has the input's shape.
inline Matrix conv3x3(const Matrix& plane, const Matrix& kernel, double bias) {
  if (kernel.rows() != 3 || kernel.cols() != 3) throw ShapeError("conv3x3: kernel must be 3x3");
  if (!kernel.all_finite() || !std::isfinite(bias)) throw InvalidInput("conv3x3: non-finite kernel");
  if (plane.rows() == 0 || plane.cols() == 0) throw InvalidInput("conv3x3: empty plane");
  const auto h = static_cast<std::ptrdiff_t>(plane.rows());
  const auto w = static_cast<std::ptrdiff_t>(plane.cols());
  Matrix out(plane.rows(), plane.cols());
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = bias;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
        const std::ptrdiff_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          acc += kernel(static_cast<std::size_t>(dy + 1), static_cast<std::size_t>(dx + 1)) *
                 plane(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        }
      }
      out(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
    }
  }
  return out;
}

/// Start of block i when splitting `extent` into `parts` near-equal blocks.
inline std::size_t block_start(std::size_t i, std::size_t extent, std::size_t parts) {
  return i * extent / parts;
}

/// Block-mean pooling: output cell (i,j) averages input rows
/// [floor(i*H/outH), floor((i+1)*H/outH)) and the analogous columns.
inline Matrix downsample_avg(const Matrix& plane, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw InvalidInput("downsample_avg: zero output size");
  if (plane.rows() < out_h || plane.cols() < out_w) {
    throw InvalidInput("downsample_avg: output larger than input");
  }
  Matrix out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t y0 = block_start(i, plane.rows(), out_h);
    const std::size_t y1 = block_start(i + 1, plane.rows(), out_h);
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t x0 = block_start(j, plane.cols(), out_w);
      const std::size_t x1 = block_start(j + 1, plane.cols(), out_w);
      double s = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) s += plane(y, x);
      out(i, j) = s / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

}  // namespace spirit
