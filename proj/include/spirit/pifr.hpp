#pragma once

// Rank-sparsity feature refinement: split flattened features into a ridge
// projection onto pooled background prototypes plus a residual, shrink the
// residual token-wise, and re-inject the resulting saliency as a soft gate.

#include <cmath>
#include <utility>

#include "spirit/numeric.hpp"
#include "spirit/tensor.hpp"

namespace spirit {

struct PIFRParams {
  std::size_t rank = 4;
  double delta = 1e-4;
  double rho = -2.0;
  double eps = 1e-6;
  double alpha = 0.0;
  Matrix phi;  // C x C, applied column-wise to the prototypes
  Matrix gate_kernel = Matrix(3, 3);
  double gate_bias = 0.0;

  static PIFRParams defaults(std::size_t channels) {
    PIFRParams p;
    p.phi = Matrix::identity(channels);
    return p;
  }

  void validate(std::size_t channels) const {
    if (rank < 1) throw InvalidInput("pifr: rank must be >= 1");
    if (!(delta > 0.0)) throw InvalidInput("pifr: delta must be > 0");
    if (!(eps > 0.0)) throw InvalidInput("pifr: eps must be > 0");
    if (phi.rows() != channels || phi.cols() != channels) {
      throw InvalidInput("pifr: projector must be " + std::to_string(channels) + "x" +
                         std::to_string(channels));
    }
    if (gate_kernel.rows() != 3 || gate_kernel.cols() != 3) {
      throw InvalidInput("pifr: gate kernel must be 3x3");
    }
    if (!std::isfinite(rho) || !std::isfinite(alpha) || !std::isfinite(gate_bias) ||
        !phi.all_finite() || !gate_kernel.all_finite()) {
      throw InvalidInput("pifr: non-finite parameter");
    }
  }
};

struct DecompositionResult {
  Matrix background;  // C x N
  Matrix residual;    // C x N, background + residual == flattened input
  Matrix sparse;      // C x N
  Matrix saliency;    // H x W
  Matrix gate;        // H x W, in (0,1)
};

struct RefineResult {
  Tensor3 refined;
  DecompositionResult decomposition;
};

/// Splits `r` bins into rh x rw with rh <= H and rw <= W, preferring the most
/// square layout. Returns {0,0} when no such factorization exists.
inline std::pair<std::size_t, std::size_t> bin_layout(std::size_t r, GridSize grid) {
  std::size_t best_h = 0, best_w = 0;
  for (std::size_t rh = 1; rh <= r; ++rh) {
    if (r % rh != 0) continue;
    const std::size_t rw = r / rh;
    if (rh > grid.height || rw > grid.width) continue;
    const auto spread = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
    if (best_h == 0 || spread(rh, rw) < spread(best_h, best_w)) {
      best_h = rh;
      best_w = rw;
    }
  }
  return {best_h, best_w};
}

/// Column j of the result is the mean feature over spatial bin j (row-major bins).
inline Matrix pool_prototypes(const Matrix& flat, GridSize grid, std::size_t r) {
  if (flat.cols() != grid.cells()) throw ShapeError("pool_prototypes: N != H*W");
  const auto [rh, rw] = bin_layout(r, grid);
  if (rh == 0) {
    throw InvalidInput("pool_prototypes: rank " + std::to_string(r) + " has no bin layout on a " +
                       std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  Matrix protos(flat.rows(), r);
  for (std::size_t bi = 0; bi < rh; ++bi) {
    const std::size_t y0 = block_start(bi, grid.height, rh);
    const std::size_t y1 = block_start(bi + 1, grid.height, rh);
    for (std::size_t bj = 0; bj < rw; ++bj) {
      const std::size_t x0 = block_start(bj, grid.width, rw);
      const std::size_t x1 = block_start(bj + 1, grid.width, rw);
      const std::size_t col = bi * rw + bj;
      const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (std::size_t c = 0; c < flat.rows(); ++c) {
        double s = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) s += flat(c, y * grid.width + x);
        protos(c, col) = s * inv;
      }
    }
  }
  return protos;
}

/// Ridge projection U (U^T U + delta I)^{-1} U^T X.
inline Matrix estimate_background(const Matrix& flat, const Matrix& basis, double delta) {
  if (basis.rows() != flat.rows()) throw ShapeError("estimate_background: basis rows != channels");
  if (!(delta > 0.0)) throw InvalidInput("estimate_background: delta must be > 0");
  if (!basis.all_finite()) throw InvalidInput("estimate_background: non-finite basis");
  const Matrix ut = basis.transposed();
  Matrix gram = ut * basis;
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += delta;
  const Matrix coeffs = solve_spd(gram, ut * flat);
  return basis * coeffs;
}

inline double column_norm(const Matrix& m, std::size_t col) {
  double s = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, col) * m(r, col);
  return std::sqrt(s);
}

/// Token-wise group soft-thresholding at level softplus(rho).
inline Matrix shrink_residual(const Matrix& residual, double rho, double eps) {
  if (!residual.all_finite() || !std::isfinite(rho) || !std::isfinite(eps)) {
    throw InvalidInput("shrink_residual: non-finite input");
  }
  const double threshold = softplus(rho);
  Matrix out(residual.rows(), residual.cols());
  for (std::size_t i = 0; i < residual.cols(); ++i) {
    const double scale = std::max(1.0 - threshold / (column_norm(residual, i) + eps), 0.0);
    if (scale == 0.0) continue;
    for (std::size_t c = 0; c < residual.rows(); ++c) out(c, i) = scale * residual(c, i);
  }
  return out;
}

inline Matrix saliency_map(const Matrix& sparse, GridSize grid) {
  if (sparse.cols() != grid.cells()) throw ShapeError("saliency_map: N != H*W");
  Matrix s(grid.height, grid.width);
  for (std::size_t i = 0; i < sparse.cols(); ++i) s.data()[i] = column_norm(sparse, i);
  return s;
}

/// m = sigmoid(conv3x3(S)), S the per-token l2 norm of `sparse`.
inline Matrix build_gate(const Matrix& sparse, GridSize grid, const Matrix& kernel, double bias) {
  Matrix m = conv3x3(saliency_map(sparse, grid), kernel, bias);
  for (auto& v : m.data()) v = sigmoid(v);
  return m;
}

inline RefineResult refine(const Tensor3& input, const PIFRParams& params) {
  if (!input.all_finite()) throw InvalidInput("refine: non-finite feature");
  params.validate(input.channels());
  const GridSize grid{input.height(), input.width()};

  RefineResult out;
  auto& dec = out.decomposition;
  const Matrix flat = input.flatten();
  const Matrix basis = params.phi * pool_prototypes(flat, grid, params.rank);
  dec.background = estimate_background(flat, basis, params.delta);
  dec.residual = flat - dec.background;
  dec.sparse = shrink_residual(dec.residual, params.rho, params.eps);
  dec.saliency = saliency_map(dec.sparse, grid);
  dec.gate = conv3x3(dec.saliency, params.gate_kernel, params.gate_bias);
  for (auto& v : dec.gate.data()) v = sigmoid(v);

  out.refined = input;
  if (params.alpha != 0.0) {
    const std::size_t n = grid.cells();
    auto d = out.refined.data();
    for (std::size_t c = 0; c < input.channels(); ++c)
      for (std::size_t p = 0; p < n; ++p) d[c * n + p] += params.alpha * d[c * n + p] * dec.gate.data()[p];
  }
  return out;
}

struct RefineSumGradient {
  double d_rho = 0.0;
  double d_alpha = 0.0;
};

/// Analytic derivatives of sum(refine(input).refined) with respect to rho and
/// alpha. Valid away from the shrinkage kink.
inline RefineSumGradient refine_sum_gradient(const Tensor3& input, const PIFRParams& params) {
  const RefineResult res = refine(input, params);
  const auto& dec = res.decomposition;
  const GridSize grid{input.height(), input.width()};
  const std::size_t n = grid.cells();

  Matrix channel_sum(grid.height, grid.width);
  for (std::size_t c = 0; c < input.channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) channel_sum.data()[p] += input.data()[c * n + p];

  RefineSumGradient g;
  for (std::size_t p = 0; p < n; ++p) g.d_alpha += channel_sum.data()[p] * dec.gate.data()[p];

  // dS_p/drho = -sigmoid(rho) * |R_p| / (|R_p| + eps) on active tokens.
  const double dthreshold = sigmoid(params.rho);
  Matrix dsal(grid.height, grid.width);
  for (std::size_t p = 0; p < n; ++p) {
    const double norm = column_norm(dec.residual, p);
    if (1.0 - softplus(params.rho) / (norm + params.eps) > 0.0) {
      dsal.data()[p] = -dthreshold * norm / (norm + params.eps);
    }
  }
  const Matrix dconv = conv3x3(dsal, params.gate_kernel, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double m = dec.gate.data()[p];
    g.d_rho += params.alpha * channel_sum.data()[p] * m * (1.0 - m) * dconv.data()[p];
  }
  return g;
}

}  // namespace spirit
