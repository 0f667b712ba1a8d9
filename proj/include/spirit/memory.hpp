#pragma once

// Prior-guided memory attention over a FIFO bank of gated frame features.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "spirit/feasibility.hpp"
#include "spirit/numeric.hpp"
#include "spirit/tensor.hpp"

namespace spirit {

inline constexpr std::size_t kDefaultMemoryLength = 5;

struct PGMAParams {
  double beta = 0.0;
  double gamma = 0.01;
  double theta_lambda = -2.0;
  double lambda_max = 4.0;
  double eps_pi = 1e-6;
  Matrix wq, wk, wv;  // C x C
  Matrix gate_kernel = delta_kernel();
  double gate_bias = 0.0;
  std::size_t capacity = kDefaultMemoryLength;
  /// Weight of the grid-position similarity term added to the logits,
  /// sum over axes of cos(pi * delta / extent) - 1. Zero leaves the logits as
  /// appearance similarity plus the log-prior bias.
  double position_weight = 0.0;
  /// When set, replaces lambda_max * sigmoid(theta_lambda) (ablation: prior bias off).
  std::optional<double> lambda_override;

  static Matrix delta_kernel() {
    Matrix k(3, 3);
    k(1, 1) = 1.0;
    return k;
  }

  static PGMAParams defaults(std::size_t channels) {
    PGMAParams p;
    p.wq = Matrix::identity(channels);
    p.wk = Matrix::identity(channels);
    p.wv = Matrix::identity(channels);
    return p;
  }

  double lambda() const { return lambda_override ? *lambda_override : lambda_max * sigmoid(theta_lambda); }

  void validate(std::size_t channels) const {
    if (!(lambda_max > 0.0)) throw InvalidInput("pgma: lambda_max must be > 0");
    if (!(eps_pi > 0.0)) throw InvalidInput("pgma: eps_pi must be > 0");
    if (capacity < 1) throw InvalidInput("pgma: memory length K must be >= 1");
    for (const Matrix* m : {&wq, &wk, &wv}) {
      if (m->rows() != channels || m->cols() != channels) {
        throw InvalidInput("pgma: projections must be " + std::to_string(channels) + "x" +
                           std::to_string(channels));
      }
      if (!m->all_finite()) throw InvalidInput("pgma: non-finite projection");
    }
    if (gate_kernel.rows() != 3 || gate_kernel.cols() != 3) throw InvalidInput("pgma: gate kernel must be 3x3");
    if (!std::isfinite(beta) || !std::isfinite(gamma) || !std::isfinite(theta_lambda) ||
        !std::isfinite(gate_bias) || !gate_kernel.all_finite() || !std::isfinite(position_weight)) {
      throw InvalidInput("pgma: non-finite parameter");
    }
  }
};

struct GridPosition {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridPosition&) const = default;
};

struct MemoryEntry {
  Tensor3 features;                  // gated encoding Z
  std::vector<GridPosition> positions;  // one per token, row-major
  std::vector<double> priors;        // feasibility weight per token
  std::size_t frame_index = 0;
};

/// Fixed-capacity FIFO of memory entries, oldest first.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = kDefaultMemoryLength) : capacity_(capacity) {
    if (capacity_ < 1) throw InvalidInput("memory bank capacity must be >= 1");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<MemoryEntry>& entries() const noexcept { return entries_; }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.features.tokens();
    return n;
  }

  void push(MemoryEntry entry) {
    if (!entries_.empty() && entry.frame_index <= entries_.back().frame_index) {
      throw OrderingError("frame index " + std::to_string(entry.frame_index) +
                          " not after last stored index " + std::to_string(entries_.back().frame_index));
    }
    entries_.push_back(std::move(entry));
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  void clear() noexcept { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<MemoryEntry> entries_;
};

/// Z = X + beta * (X .* g), g broadcast over channels.
inline Tensor3 gated_encoding(const Tensor3& features, const Matrix& gate, double beta) {
  Tensor3 z = features;
  if (beta == 0.0) return z;
  const std::size_t n = features.tokens();
  auto d = z.data();
  for (std::size_t c = 0; c < features.channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) d[c * n + p] += beta * d[c * n + p] * gate.data()[p];
  return z;
}

inline MemoryEntry encode_memory(const Tensor3& features, const FeasibilityField& field,
                                 const PGMAParams& params, std::size_t frame_index) {
  params.validate(features.channels());
  const GridSize grid{features.height(), features.width()};
  const Matrix gate = make_gate_map(field, grid, params.gate_kernel, params.gate_bias);
  // Priors are read on the deep grid; a finer field is pooled the same way as the gate input.
  const bool same_res = field.values.rows() == grid.height && field.values.cols() == grid.width;
  const Matrix prior_grid = same_res ? field.values : downsample_avg(field.values, grid.height, grid.width);

  MemoryEntry entry;
  entry.features = gated_encoding(features, gate, params.beta);
  entry.frame_index = frame_index;
  entry.positions.reserve(grid.cells());
  entry.priors.reserve(grid.cells());
  const FeasibilityField sampled{prior_grid, field.kappa, field.sources};
  for (std::size_t r = 0; r < grid.height; ++r)
    for (std::size_t c = 0; c < grid.width; ++c) {
      entry.positions.push_back({r, c});
      entry.priors.push_back(sample_prior(sampled, r, c));
    }
  return entry;
}

/// Encodes `features` with the feasibility gate and appends it to the bank.
inline void write_memory(MemoryBank& bank, const Tensor3& features, const FeasibilityField& field,
                         const PGMAParams& params, std::size_t frame_index) {
  if (!bank.empty() && frame_index <= bank.entries().back().frame_index) {
    throw OrderingError("frame index " + std::to_string(frame_index) + " not after last stored index " +
                        std::to_string(bank.entries().back().frame_index));
  }
  bank.push(encode_memory(features, field, params, frame_index));
}

inline MemoryBank reset(const MemoryBank& bank) { return MemoryBank(bank.capacity()); }

struct AttentionRead {
  Tensor3 output;
  Matrix weights;  // N_query x N_memory, empty when the bank is empty
};

namespace detail {

inline Matrix project_tokens(const Matrix& proj, const Matrix& flat) { return proj * flat; }

inline double position_similarity(GridPosition a, GridPosition b, GridSize grid) {
  const double pi = std::numbers::pi;
  const double dy = static_cast<double>(a.row) - static_cast<double>(b.row);
  const double dx = static_cast<double>(a.col) - static_cast<double>(b.col);
  return std::cos(pi * dy / static_cast<double>(grid.height)) + std::cos(pi * dx / static_cast<double>(grid.width)) - 2.0;
}

inline void check_shapes(const MemoryBank& bank, const Tensor3& query) {
  for (const auto& e : bank.entries()) {
    if (e.features.channels() != query.channels()) {
      throw ShapeError("memory entry has " + std::to_string(e.features.channels()) +
                       " channels, query has " + std::to_string(query.channels()));
    }
    if (e.features.height() != query.height() || e.features.width() != query.width()) {
      throw ShapeError("memory entry grid differs from query grid");
    }
  }
}

}  // namespace detail

/// Cross-attention from current tokens into every token of every bank entry:
/// s'_{j,i} = q_j.k_i / sqrt(d) + lambda log(pi_i + eps_pi), w = softmax_i,
/// output_j = q_j + gamma sum_i w_{j,i} v_i.
inline AttentionRead attend(const MemoryBank& bank, const Tensor3& query, const PGMAParams& params) {
  params.validate(query.channels());
  detail::check_shapes(bank, query);
  const std::size_t c = query.channels();
  const Matrix q = detail::project_tokens(params.wq, query.flatten());
  AttentionRead out;
  if (bank.empty()) {
    out.output = Tensor3::from_flat(q, query.height(), query.width());
    return out;
  }

  const std::size_t m = bank.token_count();
  Matrix keys(c, m), values(c, m);
  std::vector<double> bias(m);
  std::vector<GridPosition> where(m);
  const double lambda = params.lambda();
  std::size_t off = 0;
  for (const auto& e : bank.entries()) {
    const Matrix z = e.features.flatten();
    const Matrix k = params.wk * z;
    const Matrix v = params.wv * z;
    for (std::size_t i = 0; i < z.cols(); ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        keys(ch, off + i) = k(ch, i);
        values(ch, off + i) = v(ch, i);
      }
      bias[off + i] = lambda * std::log(e.priors[i] + params.eps_pi);
      where[off + i] = e.positions[i];
    }
    off += z.cols();
  }

  const std::size_t n = q.cols();
  const GridSize grid{query.height(), query.width()};
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c));
  // The position term separates over axes; tabulate it by signed offset.
  const double pi = std::numbers::pi;
  std::vector<double> row_term(2 * grid.height), col_term(2 * grid.width);
  for (std::size_t d = 0; d < row_term.size(); ++d)
    row_term[d] = params.position_weight *
                  (std::cos(pi * (static_cast<double>(d) - static_cast<double>(grid.height)) / static_cast<double>(grid.height)) - 1.0);
  for (std::size_t d = 0; d < col_term.size(); ++d)
    col_term[d] = params.position_weight *
                  (std::cos(pi * (static_cast<double>(d) - static_cast<double>(grid.width)) / static_cast<double>(grid.width)) - 1.0);
  std::vector<double> kt(m * c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) kt[i * c + ch] = keys(ch, i) * inv_sqrt_d;
  std::vector<double> qj(c);
  Matrix logits(n, m);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t rj = j / grid.width, cj = j % grid.width;
    for (std::size_t ch = 0; ch < c; ++ch) qj[ch] = q(ch, j);
    for (std::size_t i = 0; i < m; ++i) {
      const double* k = &kt[i * c];
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += qj[ch] * k[ch];
      double s = dot + bias[i];
      if (params.position_weight != 0.0) {
        s += row_term[rj + grid.height - where[i].row] + col_term[cj + grid.width - where[i].col];
      }
      logits(j, i) = s;
    }
  }
  out.weights = softmax_rows(logits);

  std::vector<double> vt(m * c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) vt[i * c + ch] = values(ch, i);
  Matrix fused = q;
  std::vector<double> acc(c);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double w = out.weights(j, i);
      const double* v = &vt[i * c];
      for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += w * v[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) fused(ch, j) += params.gamma * acc[ch];
  }
  out.output = Tensor3::from_flat(fused, query.height(), query.width());
  return out;
}

inline Tensor3 read_attend(const MemoryBank& bank, const Tensor3& query, const PGMAParams& params) {
  return attend(bank, query, params).output;
}

/// A past frame before gated encoding: its refined features and the field used at write time.
struct MemorySource {
  Tensor3 features;
  FeasibilityField field;
};

struct ReadoutGradient {
  double d_beta = 0.0;
  double d_gamma = 0.0;
  double d_theta_lambda = 0.0;
};

inline MemoryBank build_bank(const std::vector<MemorySource>& sources, const PGMAParams& params) {
  MemoryBank bank(params.capacity);
  for (std::size_t f = 0; f < sources.size(); ++f) write_memory(bank, sources[f].features, sources[f].field, params, f + 1);
  return bank;
}

/// Analytic derivatives of sum(read_attend(...)) for a bank written from `sources`.
inline ReadoutGradient readout_gradient(const std::vector<MemorySource>& sources, const Tensor3& query,
                                        const PGMAParams& params) {
  const std::size_t c = query.channels();
  const std::size_t keep = std::min(sources.size(), params.capacity);
  const std::vector<MemorySource> live(sources.end() - static_cast<std::ptrdiff_t>(keep), sources.end());
  const MemoryBank bank = build_bank(live, params);
  const AttentionRead read = attend(bank, query, params);
  ReadoutGradient g;
  if (bank.empty()) return g;

  const Matrix q = params.wq * query.flatten();
  const std::size_t n = q.cols();
  const std::size_t m = bank.token_count();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c));

  // Per memory token: u_i = 1^T v_i, dz_i/dbeta, log-prior b_i.
  std::vector<double> u(m), du(m), b(m);
  Matrix dkeys(c, m);
  std::size_t off = 0;
  for (std::size_t f = 0; f < live.size(); ++f) {
    const auto& e = bank.entries()[f];
    const GridSize grid{live[f].features.height(), live[f].features.width()};
    const Matrix gate = make_gate_map(live[f].field, grid, params.gate_kernel, params.gate_bias);
    const Matrix x = live[f].features.flatten();
    Matrix dz = x;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < x.cols(); ++i) dz(ch, i) *= gate.data()[i];
    const Matrix v = params.wv * e.features.flatten();
    const Matrix dv = params.wv * dz;
    const Matrix dk = params.wk * dz;
    for (std::size_t i = 0; i < x.cols(); ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        u[off + i] += v(ch, i);
        du[off + i] += dv(ch, i);
        dkeys(ch, off + i) = dk(ch, i);
      }
      b[off + i] = std::log(e.priors[i] + params.eps_pi);
    }
    off += x.cols();
  }

  double d_lambda = 0.0;
  std::vector<double> ds(m);
  for (std::size_t j = 0; j < n; ++j) {
    double wu = 0.0, wb = 0.0, wds = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += q(ch, j) * dkeys(ch, i);
      ds[i] = dot * inv_sqrt_d;
      const double w = read.weights(j, i);
      wu += w * u[i];
      wb += w * b[i];
      wds += w * ds[i];
    }
    g.d_gamma += wu;
    for (std::size_t i = 0; i < m; ++i) {
      const double w = read.weights(j, i);
      d_lambda += params.gamma * w * (b[i] - wb) * u[i];
      g.d_beta += params.gamma * (w * (ds[i] - wds) * u[i] + w * du[i]);
    }
  }
  if (!params.lambda_override) {
    const double s = sigmoid(params.theta_lambda);
    g.d_theta_lambda = d_lambda * params.lambda_max * s * (1.0 - s);
  }
  return g;
}

}  // namespace spirit
