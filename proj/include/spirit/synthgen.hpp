#pragma once

// Seeded synthetic infrared scenes: low-rank background, Gaussian targets and
// distractors, additive Gaussian noise.
//
// Random numbers come from SplitMix64 (Steele, Lea, Flood 2014):
//   state += 0x9E3779B97F4A7C15
//   z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31)
// Uniforms are (z >> 11) * 2^-53; normals use Box-Muller on two uniforms
// (u1 mapped to (0,1]), returning the cosine branch then the sine branch.
// Independent streams are keyed by derive_seed(seed, stream), which runs the
// SplitMix64 finalizer over seed ^ (stream * 0xD1B54A32D192ED03 + 1).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "spirit/feasibility.hpp"
#include "spirit/tensor.hpp"

namespace spirit {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64_mix(seed ^ (stream * 0xD1B54A32D192ED03ULL + 1ULL));
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct Blob {
  double cx = 0.0;  // pixel coordinates, pixel (x, y) centred at (x + 0.5, y + 0.5)
  double cy = 0.0;
  double sigma = 1.5;
  double amplitude = 0.3;
};

struct SceneSpec {
  GridSize size{64, 64};
  std::size_t background_rank = 2;
  double background_amplitude = 0.3;
  std::vector<Blob> targets;
  std::vector<Blob> distractors;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct Velocity {
  double vx = 0.0;
  double vy = 0.0;
};

struct SequenceSpec {
  SceneSpec scene;
  std::size_t frames = 1;
  std::vector<Velocity> target_velocities;
  std::vector<Velocity> distractor_velocities;
};

struct LabeledBox {
  int id = 0;
  Box box;
  bool operator==(const LabeledBox&) const = default;
};

struct GroundTruth {
  std::vector<LabeledBox> targets;
  std::vector<LabeledBox> distractors;
  bool operator==(const GroundTruth&) const = default;
};

struct Frame {
  Matrix image;
  GroundTruth truth;
};

namespace synth_stream {
inline constexpr std::uint64_t kBackground = 0x42;
inline constexpr std::uint64_t kNoiseBase = 0x1000;
}  // namespace synth_stream

inline void validate(const SceneSpec& spec) {
  if (spec.size.cells() == 0) throw InvalidInput("scene: empty size");
  if (spec.background_rank < 1) throw InvalidInput("scene: background_rank must be >= 1");
  for (const auto* list : {&spec.targets, &spec.distractors})
    for (const auto& b : *list)
      if (!(b.sigma > 0.0)) throw InvalidInput("scene: blob sigma must be > 0");
  if (!(spec.noise_sigma >= 0.0)) throw InvalidInput("scene: noise_sigma must be >= 0");
}

/// Sum of `background_rank` outer products of raised low-frequency cosines,
/// scaled so values lie in [0, background_amplitude].
inline Matrix gen_background(const SceneSpec& spec) {
  validate(spec);
  const std::size_t h = spec.size.height, w = spec.size.width;
  Matrix bg(h, w);
  if (spec.background_amplitude == 0.0) return bg;
  SplitMix64 rng(derive_seed(spec.seed, synth_stream::kBackground));
  const double scale = spec.background_amplitude / static_cast<double>(spec.background_rank);
  std::vector<double> u(h), v(w);
  for (std::size_t k = 0; k < spec.background_rank; ++k) {
    const double fy = rng.uniform(0.3, 1.5), py = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double fx = rng.uniform(0.3, 1.5), px = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < h; ++y)
      u[y] = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * fy * static_cast<double>(y) / static_cast<double>(h) + py);
    for (std::size_t x = 0; x < w; ++x)
      v[x] = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * fx * static_cast<double>(x) / static_cast<double>(w) + px);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) bg(y, x) += scale * u[y] * v[x];
  }
  return bg;
}

inline void add_blob(Matrix& img, const Blob& b) {
  const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
  const double reach = 6.0 * b.sigma;
  const auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::floor(v))); };
  const std::size_t y0 = lo(b.cy - reach), x0 = lo(b.cx - reach);
  const std::size_t y1 = std::min(img.rows(), static_cast<std::size_t>(std::max(0.0, std::ceil(b.cy + reach))));
  const std::size_t x1 = std::min(img.cols(), static_cast<std::size_t>(std::max(0.0, std::ceil(b.cx + reach))));
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - b.cx;
      const double dy = static_cast<double>(y) + 0.5 - b.cy;
      img(y, x) += b.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
    }
}

/// centre +/- 3 sigma, clipped to the image.
inline Box three_sigma_box(const Blob& b, GridSize size) {
  return Box{std::max(0.0, b.cx - 3.0 * b.sigma), std::max(0.0, b.cy - 3.0 * b.sigma),
             std::min(static_cast<double>(size.width), b.cx + 3.0 * b.sigma),
             std::min(static_cast<double>(size.height), b.cy + 3.0 * b.sigma)};
}

/// Composes background, blobs and noise (noise drawn from the frame's own
/// stream) and clamps to [0, 1]. Ground truth lists targets only; distractor
/// boxes are reported separately.
inline Frame gen_frame(const SceneSpec& spec, std::uint64_t frame_index = 0) {
  Frame f;
  f.image = gen_background(spec);
  for (const auto& b : spec.targets) add_blob(f.image, b);
  for (const auto& b : spec.distractors) add_blob(f.image, b);
  if (spec.noise_sigma > 0.0) {
    SplitMix64 rng(derive_seed(spec.seed, synth_stream::kNoiseBase + frame_index));
    for (auto& v : f.image.data()) v += spec.noise_sigma * rng.normal();
  }
  for (auto& v : f.image.data()) v = std::clamp(v, 0.0, 1.0);
  for (std::size_t i = 0; i < spec.targets.size(); ++i)
    f.truth.targets.push_back({static_cast<int>(i), three_sigma_box(spec.targets[i], spec.size)});
  for (std::size_t i = 0; i < spec.distractors.size(); ++i)
    f.truth.distractors.push_back({static_cast<int>(i), three_sigma_box(spec.distractors[i], spec.size)});
  return f;
}

/// Position after `t` steps of velocity `v` from `p0`, mirrored at lo and hi.
inline double reflect_motion(double p0, double v, double t, double lo, double hi) {
  if (hi <= lo) return 0.5 * (lo + hi);
  const double period = 2.0 * (hi - lo);
  double p = std::fmod(p0 - lo + v * t, period);
  if (p < 0.0) p += period;
  return p <= hi - lo ? lo + p : hi - (p - (hi - lo));
}

inline void advect(std::vector<Blob>& blobs, const std::vector<Velocity>& vel, double t, GridSize size) {
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const Velocity v = i < vel.size() ? vel[i] : Velocity{};
    const double m = 3.0 * blobs[i].sigma;
    blobs[i].cx = reflect_motion(blobs[i].cx, v.vx, t, m, static_cast<double>(size.width) - m);
    blobs[i].cy = reflect_motion(blobs[i].cy, v.vy, t, m, static_cast<double>(size.height) - m);
  }
}

inline std::vector<Frame> gen_sequence(const SequenceSpec& seq) {
  if (seq.frames < 1) throw InvalidInput("sequence: frames must be >= 1");
  validate(seq.scene);
  std::vector<Frame> out;
  out.reserve(seq.frames);
  for (std::size_t t = 0; t < seq.frames; ++t) {
    SceneSpec s = seq.scene;
    advect(s.targets, seq.target_velocities, static_cast<double>(t), s.size);
    advect(s.distractors, seq.distractor_velocities, static_cast<double>(t), s.size);
    out.push_back(gen_frame(s, t));
  }
  return out;
}

/// Rounds each pixel to the nearest 8-bit level, the precision stored on disk.
inline Matrix quantize8(Matrix img) {
  for (auto& v : img.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img;
}

}  // namespace spirit
