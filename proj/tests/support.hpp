#pragma once

// Independent reference computations used by the unit and acceptance tests:
// iterative ridge solver, SVD-based rank, exhaustive
// matching, random instance builders, finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/SVD>

#include "spirit/eval.hpp"
#include "spirit/feasibility.hpp"
#include "spirit/memory.hpp"
#include "spirit/pifr.hpp"
#include "spirit/synthgen.hpp"
#include "spirit/tensor.hpp"

namespace spirit::testing {

inline Matrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = scale * rng.normal();
  return m;
}

inline Tensor3 random_tensor(SplitMix64& rng, std::size_t c, std::size_t h, std::size_t w, double scale = 1.0) {
  Tensor3 t(c, h, w);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

inline double relative_frobenius(const Matrix& a, const Matrix& ref) {
  const double denom = frobenius_norm(ref);
  return frobenius_norm(a - ref) / (denom > 0.0 ? denom : 1.0);
}

/// argmin_W |X - U W|_F^2 + delta |W|_F^2 by plain gradient descent from W = 0,
/// step 1/L with L the Lipschitz constant of the gradient. Returns U W.
inline Matrix ridge_gradient_descent(const Matrix& x, const Matrix& u, double delta, std::size_t max_steps = 200000,
                                     double tol = 1e-14) {
  const Matrix ut = u.transposed();
  const Matrix gram = ut * u;
  const Matrix utx = ut * x;
  // Largest eigenvalue of the Gram matrix by power iteration.
  std::vector<double> v(gram.rows(), 1.0);
  double lmax = 0.0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> w(gram.rows(), 0.0);
    for (std::size_t i = 0; i < gram.rows(); ++i)
      for (std::size_t j = 0; j < gram.cols(); ++j) w[i] += gram(i, j) * v[j];
    double n = 0.0;
    for (double e : w) n += e * e;
    n = std::sqrt(n);
    if (n == 0.0) break;
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / n;
    lmax = n;
  }
  const double step = 1.0 / (lmax + delta);
  Matrix wcoef(u.cols(), x.cols());
  for (std::size_t s = 0; s < max_steps; ++s) {
    // grad/2 = (U^T U + delta I) W - U^T X
    Matrix g = gram * wcoef - utx;
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += delta * wcoef(i, j);
    if (frobenius_norm(g) <= tol * (1.0 + frobenius_norm(utx))) break;
    wcoef = wcoef - step * g;
  }
  return u * wcoef;
}

/// Singular values, descending (Eigen's two-sided Jacobi SVD).
inline std::vector<double> singular_values(const Matrix& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(i, j);
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  return {s.data(), s.data() + s.size()};
}

/// Count of singular values above rel_tol * sigma_max.
inline std::size_t numerical_rank(const Matrix& a, double rel_tol = 1e-8) {
  const auto s = singular_values(a);
  if (s.empty() || s.front() == 0.0) return 0;
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double v) { return v > rel_tol * s.front(); }));
}

/// Maximum-cardinality matching between detections and ground truth where an
/// edge exists iff IoU >= threshold, by exhaustive search.
inline std::size_t brute_force_matching(const std::vector<Box>& dets, const std::vector<Box>& gts, double threshold) {
  std::vector<bool> used(gts.size(), false);
  const std::function<std::size_t(std::size_t)> go = [&](std::size_t d) -> std::size_t {
    if (d == dets.size()) return 0;
    std::size_t best = go(d + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iw = std::min(dets[d].x2, gts[g].x2) - std::max(dets[d].x1, gts[g].x1);
      const double ih = std::min(dets[d].y2, gts[g].y2) - std::max(dets[d].y1, gts[g].y1);
      if (iw <= 0.0 || ih <= 0.0) continue;
      const double inter = iw * ih;
      if (inter / (dets[d].area() + gts[g].area() - inter) < threshold) continue;
      used[g] = true;
      best = std::max(best, 1 + go(d + 1));
      used[g] = false;
    }
    return best;
  };
  return go(0);
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / scale;
}

/// Random memory-writing sources: features and the field of a few random
/// detections on the same grid.
inline std::vector<MemorySource> random_sources(SplitMix64& rng, std::size_t count, std::size_t c, GridSize grid) {
  std::vector<MemorySource> out;
  for (std::size_t f = 0; f < count; ++f) {
    MemorySource s;
    s.features = random_tensor(rng, c, grid.height, grid.width);
    std::vector<Detection> dets;
    const std::size_t n = 1 + rng.next() % 2;
    for (std::size_t k = 0; k < n; ++k) {
      const double cx = rng.uniform(2.0, 14.0), cy = rng.uniform(2.0, 14.0);
      dets.push_back({{cx - 1.5, cy - 1.5, cx + 1.5, cy + 1.5}, rng.uniform(0.5, 1.0)});
    }
    s.field = build_field(dets, {16, 16}, grid, 1.5);
    out.push_back(std::move(s));
  }
  return out;
}

struct MatchingInstance {
  std::vector<Detection> dets;
  std::vector<Box> gts;
};

/// A few ground-truth boxes on a 100x100 canvas, each seen by zero to two
/// jittered detections, plus a stray detection or two.
inline MatchingInstance random_matching_instance(SplitMix64& rng) {
  MatchingInstance inst;
  const std::size_t n_gt = 1 + rng.next() % 5;
  for (std::size_t g = 0; g < n_gt; ++g) {
    const double w = rng.uniform(6.0, 20.0), h = rng.uniform(6.0, 20.0);
    const double x = rng.uniform(0.0, 100.0 - w), y = rng.uniform(0.0, 100.0 - h);
    inst.gts.push_back({x, y, x + w, y + h});
  }
  for (const Box& g : inst.gts) {
    const std::size_t copies = rng.next() % 3;
    for (std::size_t k = 0; k < copies; ++k) {
      const double jw = 0.25 * (g.x2 - g.x1), jh = 0.25 * (g.y2 - g.y1);
      Box b{g.x1 + rng.uniform(-jw, jw), g.y1 + rng.uniform(-jh, jh), g.x2 + rng.uniform(-jw, jw),
            g.y2 + rng.uniform(-jh, jh)};
      if (b.x2 <= b.x1 || b.y2 <= b.y1) continue;
      inst.dets.push_back({b, rng.uniform()});
    }
  }
  const std::size_t strays = rng.next() % 3;
  for (std::size_t k = 0; k < strays; ++k) {
    const double x = rng.uniform(0.0, 90.0), y = rng.uniform(0.0, 90.0);
    inst.dets.push_back({{x, y, x + rng.uniform(4.0, 10.0), y + rng.uniform(4.0, 10.0)}, rng.uniform()});
  }
  return inst;
}

/// Three detections (TP, FP, TP by score) against two boxes: AP = 1/2 + 1/2 * 2/3.
inline std::vector<ImageResult> five_sixths_example() {
  const Box a{0, 0, 10, 10}, b{50, 50, 60, 60};
  return {ImageResult{{{a, 0.9}, {{20, 20, 30, 30}, 0.8}, {b, 0.7}}, {a, b}}};
}

}  // namespace spirit::testing
