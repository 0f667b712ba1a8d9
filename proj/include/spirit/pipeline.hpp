#pragma once

// Toy single/multi-frame detector: a fixed-filter hierarchical backbone,
// feature refinement on the last two stages, memory attention on the deepest
// stage and a peak-picking decoder with greedy NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "spirit/eval.hpp"
#include "spirit/feasibility.hpp"
#include "spirit/memory.hpp"
#include "spirit/pifr.hpp"

namespace spirit {

inline constexpr std::size_t kFeatureChannels = 8;
inline constexpr std::size_t kStemStride = 4;
inline constexpr std::size_t kStageCount = 3;

/// Channel layout shared by every stage.
enum Channel : std::size_t {
  kMean = 0,       // block mean intensity
  kGradX = 1,      // mean |d/dx|
  kGradY = 2,      // mean |d/dy|
  kLaplacian = 3,  // max |laplacian|
  kContrast = 4,   // block max - block mean
  kTopHat = 5,     // max of intensity above a ring background
  kDeviation = 6,  // block standard deviation
  kPeak = 7,       // block max intensity
};

/// Channels aggregated by max pooling between stages; the rest are averaged.
inline constexpr std::array<bool, kFeatureChannels> kMaxPooled{false, false, false, true, true, true, false, true};
/// Per-channel gains bringing a typical small target to O(1).
inline constexpr std::array<double, kFeatureChannels> kChannelGain{1.0, 10.0, 10.0, 4.0, 3.0, 3.0, 10.0, 1.0};
/// Ring radius (pixels) of the local background used by the top-hat channel.
inline constexpr std::ptrdiff_t kStemRing = 8;
/// Ring radius used for box cues, measured on the source image.
inline constexpr std::ptrdiff_t kCueRing = 7;

struct Pyramid {
  std::vector<Tensor3> stages;
  std::vector<std::size_t> strides;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

namespace detail {

inline double clamped(const Matrix& m, std::ptrdiff_t y, std::ptrdiff_t x) {
  y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(m.rows()) - 1);
  x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(m.cols()) - 1);
  return m(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

/// Separable [1 2 1]/4 blur with replicated borders.
inline Matrix smooth(const Matrix& img) {
  Matrix tmp(img.rows(), img.cols()), out(img.rows(), img.cols());
  for (std::size_t y = 0; y < img.rows(); ++y)
    for (std::size_t x = 0; x < img.cols(); ++x) {
      const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
      tmp(y, x) = 0.25 * clamped(img, yy, xx - 1) + 0.5 * img(y, x) + 0.25 * clamped(img, yy, xx + 1);
    }
  for (std::size_t y = 0; y < img.rows(); ++y)
    for (std::size_t x = 0; x < img.cols(); ++x) {
      const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
      out(y, x) = 0.25 * clamped(tmp, yy - 1, xx) + 0.5 * tmp(y, x) + 0.25 * clamped(tmp, yy + 1, xx);
    }
  return out;
}

/// Intensity minus the mean over the square ring at Chebyshev distance r
/// (replicated borders).
inline Matrix ring_residual(const Matrix& img, std::ptrdiff_t r) {
  Matrix out(img.rows(), img.cols());
  for (std::size_t y = 0; y < img.rows(); ++y)
    for (std::size_t x = 0; x < img.cols(); ++x) {
      const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) {
        s += clamped(img, yy - r, xx + d) + clamped(img, yy + r, xx + d);
        if (d != -r && d != r) s += clamped(img, yy + d, xx - r) + clamped(img, yy + d, xx + r);
      }
      out(y, x) = img(y, x) - s / static_cast<double>(8 * r);
    }
  return out;
}

}  // namespace detail

/// Stride-4 block statistics of the image (first backbone stage).
inline Tensor3 stem_features(const Matrix& image) {
  if (image.rows() == 0 || image.cols() == 0) throw InvalidInput("extract_pyramid: empty image");
  if (!image.all_finite()) throw InvalidInput("extract_pyramid: non-finite pixel");
  const std::size_t h = image.rows(), w = image.cols();
  const Matrix sm = detail::smooth(image);
  const Matrix tophat = detail::ring_residual(sm, kStemRing);
  const std::size_t gh = ceil_div(h, kStemStride), gw = ceil_div(w, kStemStride);
  Tensor3 f(kFeatureChannels, gh, gw);
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      const std::size_t y0 = i * kStemStride, y1 = std::min(h, y0 + kStemStride);
      const std::size_t x0 = j * kStemStride, x1 = std::min(w, x0 + kStemStride);
      double sum = 0.0, sq = 0.0, gx = 0.0, gy = 0.0, lap = 0.0, th = 0.0;
      double sm_sum = 0.0, sm_max = -1e300;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
          const double v = image(y, x);
          sum += v;
          sq += v * v;
          gx += 0.5 * std::abs(detail::clamped(sm, yy, xx + 1) - detail::clamped(sm, yy, xx - 1));
          gy += 0.5 * std::abs(detail::clamped(sm, yy + 1, xx) - detail::clamped(sm, yy - 1, xx));
          const double l = detail::clamped(sm, yy, xx + 1) + detail::clamped(sm, yy, xx - 1) +
                           detail::clamped(sm, yy + 1, xx) + detail::clamped(sm, yy - 1, xx) - 4.0 * sm(y, x);
          lap = std::max(lap, std::abs(l));
          th = std::max(th, tophat(y, x));
          sm_sum += sm(y, x);
          sm_max = std::max(sm_max, sm(y, x));
        }
      const double n = static_cast<double>((y1 - y0) * (x1 - x0));
      const double mean = sum / n;
      f.at(kMean, i, j) = kChannelGain[kMean] * mean;
      f.at(kGradX, i, j) = kChannelGain[kGradX] * gx / n;
      f.at(kGradY, i, j) = kChannelGain[kGradY] * gy / n;
      f.at(kLaplacian, i, j) = kChannelGain[kLaplacian] * lap;
      f.at(kContrast, i, j) = kChannelGain[kContrast] * (sm_max - sm_sum / n);
      f.at(kTopHat, i, j) = kChannelGain[kTopHat] * th;
      f.at(kDeviation, i, j) = kChannelGain[kDeviation] * std::sqrt(std::max(0.0, sq / n - mean * mean));
      f.at(kPeak, i, j) = kChannelGain[kPeak] * sm_max;
    }
  return f;
}

/// 2x2 pooling to the next stage: max for peak-like channels, mean otherwise.
inline Tensor3 aggregate_stage(const Tensor3& fine) {
  const std::size_t gh = ceil_div(fine.height(), 2), gw = ceil_div(fine.width(), 2);
  Tensor3 out(fine.channels(), gh, gw);
  for (std::size_t c = 0; c < fine.channels(); ++c)
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j) {
        double acc = kMaxPooled[c % kFeatureChannels] ? -1e300 : 0.0;
        std::size_t n = 0;
        for (std::size_t y = 2 * i; y < std::min(fine.height(), 2 * i + 2); ++y)
          for (std::size_t x = 2 * j; x < std::min(fine.width(), 2 * j + 2); ++x) {
            const double v = fine.at(c, y, x);
            acc = kMaxPooled[c % kFeatureChannels] ? std::max(acc, v) : acc + v;
            ++n;
          }
        out.at(c, i, j) = kMaxPooled[c % kFeatureChannels] ? acc : acc / static_cast<double>(n);
      }
  return out;
}

/// Unrefined pyramid at strides 4, 8, 16.
inline Pyramid extract_pyramid(const Matrix& image) {
  Pyramid p;
  p.stages.push_back(stem_features(image));
  p.strides.push_back(kStemStride);
  for (std::size_t s = 1; s < kStageCount; ++s) {
    p.stages.push_back(aggregate_stage(p.stages.back()));
    p.strides.push_back(p.strides.back() * 2);
  }
  return p;
}

/// Per deep cell: a box fitted to the strongest blob near the cell.
struct BoxCueMap {
  GridSize grid;
  std::vector<Box> boxes;  // row-major, one per cell
  const Box& at(std::size_t row, std::size_t col) const { return boxes[row * grid.width + col]; }
};

/// Fraction of a deep cell by which the cue search window extends past it.
inline constexpr double kCueMargin = 0.25;

/// Locates the maximum of the smoothed ring residual of the source image
/// within the (slightly widened) cell, then fits a Gaussian to the 3-point log
/// profiles at +/-2 px through it for a sub-pixel centre and sigma. The box is
/// centre +/- 3 sigma, returned in working coordinates.
inline BoxCueMap extract_box_cues(const Matrix& source, GridSize grid, GridSize work_size) {
  const Matrix resid = detail::smooth(detail::ring_residual(source, kCueRing));
  BoxCueMap cues;
  cues.grid = grid;
  cues.boxes.reserve(grid.cells());
  const auto h = static_cast<std::ptrdiff_t>(source.rows()), w = static_cast<std::ptrdiff_t>(source.cols());
  const double cell_y = static_cast<double>(source.rows()) / static_cast<double>(grid.height);
  const double cell_x = static_cast<double>(source.cols()) / static_cast<double>(grid.width);
  const double sy = static_cast<double>(work_size.height) / static_cast<double>(source.rows());
  const double sx = static_cast<double>(work_size.width) / static_cast<double>(source.cols());
  const auto lo = [](double v, std::ptrdiff_t limit) {
    return std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(std::floor(v)), 0, limit);
  };
  // the [1 2 1]/4 blur adds 0.5 px^2 of variance per axis
  constexpr double kBlurVariance = 0.5;
  const auto fit = [](double lm, double l0, double lp, double& offset, double& variance) {
    if (lm <= 0.0 || l0 <= 0.0 || lp <= 0.0) return false;
    const double a = std::log(lm), b = std::log(l0), c = std::log(lp);
    const double curv = a - 2.0 * b + c;
    if (!(curv < 0.0)) return false;
    offset = std::clamp((a - c) / curv, -2.0, 2.0);
    variance = -4.0 / curv - kBlurVariance;
    return true;
  };
  for (std::size_t i = 0; i < grid.height; ++i)
    for (std::size_t j = 0; j < grid.width; ++j) {
      const std::ptrdiff_t y0 = lo((static_cast<double>(i) - kCueMargin) * cell_y, h - 1);
      const std::ptrdiff_t y1 = lo((static_cast<double>(i) + 1.0 + kCueMargin) * cell_y, h);
      const std::ptrdiff_t x0 = lo((static_cast<double>(j) - kCueMargin) * cell_x, w - 1);
      const std::ptrdiff_t x1 = lo((static_cast<double>(j) + 1.0 + kCueMargin) * cell_x, w);
      std::ptrdiff_t py = y0, px = x0;
      double best = -1e300;
      for (std::ptrdiff_t y = y0; y < std::max(y1, y0 + 1); ++y)
        for (std::ptrdiff_t x = x0; x < std::max(x1, x0 + 1); ++x) {
          const double v = resid(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
          if (v > best) {
            best = v;
            py = y;
            px = x;
          }
        }
      double ox = 0.0, oy = 0.0, vx = 0.0, vy = 0.0;
      const bool okx = fit(detail::clamped(resid, py, px - 2), best, detail::clamped(resid, py, px + 2), ox, vx);
      const bool oky = fit(detail::clamped(resid, py - 2, px), best, detail::clamped(resid, py + 2, px), oy, vy);
      const double variance = okx && oky ? 0.5 * (vx + vy) : okx ? vx : oky ? vy : 2.25;
      const double sigma = std::clamp(std::sqrt(std::max(variance, 0.0)), 0.5, 4.0);
      const double cx = static_cast<double>(px) + 0.5 + (okx ? ox : 0.0);
      const double cy = static_cast<double>(py) + 0.5 + (oky ? oy : 0.0);
      const double fw = static_cast<double>(w), fh = static_cast<double>(h);
      cues.boxes.push_back(Box{std::max(0.0, cx - 3.0 * sigma) * sx, std::max(0.0, cy - 3.0 * sigma) * sy,
                               std::min(fw, cx + 3.0 * sigma) * sx, std::min(fh, cy + 3.0 * sigma) * sy});
    }
  return cues;
}

inline Matrix resize_bilinear(const Matrix& img, GridSize size) {
  if (img.rows() == size.height && img.cols() == size.width) return img;
  Matrix out(size.height, size.width);
  const double sy = static_cast<double>(img.rows()) / static_cast<double>(size.height);
  const double sx = static_cast<double>(img.cols()) / static_cast<double>(size.width);
  for (std::size_t y = 0; y < size.height; ++y)
    for (std::size_t x = 0; x < size.width; ++x) {
      const double fy = std::max(0.0, (static_cast<double>(y) + 0.5) * sy - 0.5);
      const double fx = std::max(0.0, (static_cast<double>(x) + 0.5) * sx - 0.5);
      const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
      const double ty = fy - static_cast<double>(y0), tx = fx - static_cast<double>(x0);
      out(y, x) = (1 - ty) * ((1 - tx) * detail::clamped(img, y0, x0) + tx * detail::clamped(img, y0, x0 + 1)) +
                  ty * ((1 - tx) * detail::clamped(img, y0 + 1, x0) + tx * detail::clamped(img, y0 + 1, x0 + 1));
    }
  return out;
}

struct DecoderParams {
  std::vector<double> weights;  // 1x1 score projection
  double bias = 0.0;

  static DecoderParams defaults(std::size_t channels) {
    DecoderParams d;
    d.weights.assign(channels, 1.0 / static_cast<double>(channels));
    return d;
  }
};

struct PipelineConfig {
  GridSize image_size{512, 512};
  double score_threshold = 0.5;
  double nms_iou = 0.5;
  std::size_t max_detections = 100;
  bool pifr_enabled = true;
  std::array<PIFRParams, 2> pifr;  // stages 2 and 3
  PGMAParams pgma;
  double kappa = kDefaultKappa;
  DecoderParams decoder;

  static PipelineConfig defaults(GridSize image_size = {512, 512}) {
    PipelineConfig c;
    c.image_size = image_size;
    c.pifr = {PIFRParams::defaults(kFeatureChannels), PIFRParams::defaults(kFeatureChannels)};
    c.pgma = PGMAParams::defaults(kFeatureChannels);
    c.decoder = DecoderParams::defaults(kFeatureChannels);
    return c;
  }

  void validate() const {
    if (image_size.cells() == 0) throw InvalidInput("config: image size must be positive");
    if (!(score_threshold > 0.0 && score_threshold < 1.0)) throw InvalidInput("config: score_threshold outside (0,1)");
    if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw InvalidInput("config: nms_iou outside (0,1)");
    if (!(kappa > 0.0)) throw InvalidInput("config: kappa must be > 0");
    if (decoder.weights.size() != kFeatureChannels) throw InvalidInput("config: decoder weights need 8 entries");
    for (const auto& p : pifr) p.validate(kFeatureChannels);
    pgma.validate(kFeatureChannels);
  }
};

inline Matrix score_map(const Tensor3& feature, const DecoderParams& dec) {
  if (dec.weights.size() != feature.channels()) throw ShapeError("decoder weights do not match channels");
  Matrix s(feature.height(), feature.width(), dec.bias);
  const std::size_t n = feature.tokens();
  for (std::size_t c = 0; c < feature.channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) s.data()[p] += dec.weights[c] * feature.data()[c * n + p];
  for (auto& v : s.data()) v = sigmoid(v);
  return s;
}

inline std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold, std::size_t keep) {
  dets = sort_by_score(std::move(dets));
  std::vector<Detection> out;
  for (const auto& d : dets) {
    if (out.size() >= keep) break;
    bool suppressed = false;
    for (const auto& k : out)
      if (iou(d.box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) out.push_back(d);
  }
  return out;
}

inline constexpr std::size_t kFloodCap = 11;

/// Strict 8-neighbourhood maxima of the score map above threshold, boxed by
/// the cue map when given, else by flood-filling the >= 0.5*peak region
/// (within an 11x11 window), followed by greedy NMS.
inline std::vector<Detection> decode_detections(const Tensor3& feature, const PipelineConfig& config,
                                                const BoxCueMap* cues = nullptr) {
  const Matrix s = score_map(feature, config.decoder);
  const std::size_t gh = s.rows(), gw = s.cols();
  const double stride_y = static_cast<double>(config.image_size.height) / static_cast<double>(gh);
  const double stride_x = static_cast<double>(config.image_size.width) / static_cast<double>(gw);
  std::vector<Detection> cands;
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      const double v = s(i, j);
      if (!(v > config.score_threshold)) continue;
      bool peak = true;
      for (std::ptrdiff_t dy = -1; dy <= 1 && peak; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i) + dy, x = static_cast<std::ptrdiff_t>(j) + dx;
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(gh) || x >= static_cast<std::ptrdiff_t>(gw)) continue;
          if (s(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) >= v) {
            peak = false;
            break;
          }
        }
      if (!peak) continue;

      Box box;
      if (cues != nullptr && cues->grid == GridSize{gh, gw}) {
        box = cues->at(i, j);
      } else {
        const std::size_t half = kFloodCap / 2;
        const std::size_t wy0 = i > half ? i - half : 0, wy1 = std::min(gh, i + half + 1);
        const std::size_t wx0 = j > half ? j - half : 0, wx1 = std::min(gw, j + half + 1);
        std::vector<bool> seen(gh * gw, false);
        std::vector<std::pair<std::size_t, std::size_t>> stack{{i, j}};
        seen[i * gw + j] = true;
        std::size_t ry0 = i, ry1 = i, rx0 = j, rx1 = j;
        while (!stack.empty()) {
          const auto [y, x] = stack.back();
          stack.pop_back();
          ry0 = std::min(ry0, y);
          ry1 = std::max(ry1, y);
          rx0 = std::min(rx0, x);
          rx1 = std::max(rx1, x);
          const std::array<std::pair<std::ptrdiff_t, std::ptrdiff_t>, 4> nb{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
          for (const auto& [dy, dx] : nb) {
            const std::ptrdiff_t ny = static_cast<std::ptrdiff_t>(y) + dy, nx = static_cast<std::ptrdiff_t>(x) + dx;
            if (ny < static_cast<std::ptrdiff_t>(wy0) || nx < static_cast<std::ptrdiff_t>(wx0) ||
                ny >= static_cast<std::ptrdiff_t>(wy1) || nx >= static_cast<std::ptrdiff_t>(wx1))
              continue;
            const auto uy = static_cast<std::size_t>(ny), ux = static_cast<std::size_t>(nx);
            if (seen[uy * gw + ux] || s(uy, ux) < 0.5 * v) continue;
            seen[uy * gw + ux] = true;
            stack.emplace_back(uy, ux);
          }
        }
        box = Box{static_cast<double>(rx0) * stride_x, static_cast<double>(ry0) * stride_y,
                  std::min(static_cast<double>(config.image_size.width), static_cast<double>(rx1 + 1) * stride_x),
                  std::min(static_cast<double>(config.image_size.height), static_cast<double>(ry1 + 1) * stride_y)};
      }
      if (box.valid()) cands.push_back({box, v});
    }
  return non_max_suppression(std::move(cands), config.nms_iou, config.max_detections);
}

/// Parameter-independent per-frame work: stem features and box cues at the
/// working resolution.
struct FrameFeatures {
  Tensor3 stem;
  BoxCueMap cues;
  GridSize source_size;
};

inline GridSize deep_grid(GridSize image_size) {
  std::size_t h = ceil_div(image_size.height, kStemStride), w = ceil_div(image_size.width, kStemStride);
  for (std::size_t s = 1; s < kStageCount; ++s) {
    h = ceil_div(h, 2);
    w = ceil_div(w, 2);
  }
  return {h, w};
}

inline FrameFeatures prepare_frame(const Matrix& image, const PipelineConfig& config) {
  if (image.rows() == 0 || image.cols() == 0) throw InvalidInput("detect: empty image");
  const Matrix work = resize_bilinear(image, config.image_size);
  FrameFeatures f;
  f.source_size = {image.rows(), image.cols()};
  f.stem = stem_features(work);
  f.cues = extract_box_cues(image, deep_grid(config.image_size), config.image_size);
  return f;
}

/// Stage 1 -> aggregate -> refine (stage 2) -> aggregate -> refine (stage 3).
inline Tensor3 deep_features(const FrameFeatures& frame, const PipelineConfig& config) {
  Tensor3 x = frame.stem;
  for (std::size_t s = 1; s < kStageCount; ++s) {
    x = aggregate_stage(x);
    if (config.pifr_enabled) x = refine(x, config.pifr[s - 1]).refined;
  }
  return x;
}

inline std::vector<Detection> to_source_coordinates(std::vector<Detection> dets, const PipelineConfig& config,
                                                    GridSize source) {
  if (source == config.image_size) return dets;
  const double fx = static_cast<double>(source.width) / static_cast<double>(config.image_size.width);
  const double fy = static_cast<double>(source.height) / static_cast<double>(config.image_size.height);
  for (auto& d : dets) d.box = {d.box.x1 * fx, d.box.y1 * fy, d.box.x2 * fx, d.box.y2 * fy};
  return dets;
}

struct FrameOutput {
  std::vector<Detection> detections;  // source-image coordinates
  Matrix scores;                      // deep-grid score map the decoder saw
};

/// One frame through the detector. With a bank, the deepest features attend
/// into memory before decoding and are written back afterwards, gated by the
/// field of this frame's own detections.
inline FrameOutput run_frame_detailed(const FrameFeatures& frame, const PipelineConfig& config, MemoryBank* bank) {
  const Tensor3 deep = deep_features(frame, config);
  const Tensor3 fused = bank == nullptr ? deep : read_attend(*bank, deep, config.pgma);
  FrameOutput out;
  out.scores = score_map(fused, config.decoder);
  std::vector<Detection> dets = decode_detections(fused, config, &frame.cues);
  if (bank != nullptr) {
    const GridSize grid{deep.height(), deep.width()};
    const FeasibilityField field = build_field(dets, config.image_size, grid, config.kappa);
    const std::size_t next = bank->empty() ? 1 : bank->entries().back().frame_index + 1;
    write_memory(*bank, deep, field, config.pgma, next);
  }
  out.detections = to_source_coordinates(std::move(dets), config, frame.source_size);
  return out;
}

inline std::vector<Detection> run_frame(const FrameFeatures& frame, const PipelineConfig& config, MemoryBank* bank) {
  return run_frame_detailed(frame, config, bank).detections;
}

struct FrameResult {
  std::vector<Detection> detections;
  MemoryBank state;
};

/// Without `state` the single-frame path runs and an empty bank is returned.
inline FrameResult detect_frame(const Matrix& image, const PipelineConfig& config,
                                std::optional<MemoryBank> state = std::nullopt) {
  config.validate();
  const FrameFeatures f = prepare_frame(image, config);
  if (!state) return {run_frame(f, config, nullptr), MemoryBank(config.pgma.capacity)};
  FrameResult r{{}, std::move(*state)};
  r.detections = run_frame(f, config, &r.state);
  return r;
}

inline std::vector<std::vector<Detection>> track_sequence(const std::vector<Matrix>& images, const PipelineConfig& config) {
  if (images.empty()) throw InvalidInput("track: sequence has no frames");
  config.validate();
  MemoryBank bank(config.pgma.capacity);
  std::vector<std::vector<Detection>> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(run_frame(prepare_frame(img, config), config, &bank));
  return out;
}

}  // namespace spirit
