#pragma once

// Plane-sweep cost volumes and per-pixel geometry confidence: a multi-view
// cosine-similarity volume, a one-hot guidance volume from monocular depth,
// an additive aggregation, and the max of the softmax over depth candidates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/parallel.hpp"

namespace splatalign {

struct DepthCandidates {
  std::vector<double> values;  // uniform in inverse depth, near..far

  int size() const { return static_cast<int>(values.size()); }
};

inline DepthCandidates make_candidates(double near, double far, int K) {
  if (!(near > 0.0) || !std::isfinite(far) || !(near < far)) fail(ErrorCode::kBounds, "depth candidates need 0 < near < far < inf");
  if (K < 2) fail(ErrorCode::kBounds, "need at least 2 depth candidates");
  DepthCandidates c;
  c.values.resize(K);
  for (int k = 0; k < K; ++k) {
    const double s = static_cast<double>(k) / (K - 1);
    c.values[k] = 1.0 / (1.0 / near + s * (1.0 / far - 1.0 / near));
  }
  c.values.front() = near;
  c.values.back() = far;
  return c;
}

enum class VolumeKind { kMultiview, kGuidance, kAggregated };

struct CostVolume {
  int height = 0;
  int width = 0;
  int K = 0;
  VolumeKind kind = VolumeKind::kMultiview;
  std::vector<double> scores;         // (v * width + u) * K + k
  std::vector<std::uint8_t> flagged;  // per pixel: no valid source projection
  bool degenerate = false;            // no pixel had any valid projection

  CostVolume() = default;
  CostVolume(int h, int w, int k, VolumeKind kd)
      : height(h), width(w), K(k), kind(kd), scores(static_cast<std::size_t>(h) * w * k, 0.0),
        flagged(static_cast<std::size_t>(h) * w, 0) {}

  double* fiber(int u, int v) { return &scores[(static_cast<std::size_t>(v) * width + u) * K]; }
  const double* fiber(int u, int v) const { return &scores[(static_cast<std::size_t>(v) * width + u) * K]; }
};

/// A view as seen by the plane sweep: features plus full-resolution camera.
struct SweepView {
  const FeatureMap* features = nullptr;
  Pose pose;
  CameraIntrinsics intrinsics;
};

namespace detail {

inline int feature_stride(const FeatureMap& f, const CameraIntrinsics& k) {
  if (f.width <= 0 || k.width % f.width != 0 || k.height % f.height != 0 || k.width / f.width != k.height / f.height)
    fail(ErrorCode::kDimensionMismatch, "feature grid must be an integer down-scale of the image");
  return k.width / f.width;
}

// Bilinear feature lookup at feature-grid coordinates, renormalized.
// Returns false outside the grid or when the interpolated vector vanishes.
inline bool sample_feature(const FeatureMap& f, double x, double y, std::vector<double>& out) {
  // Round-trip projections of border cells can land a few ulps outside.
  constexpr double kSlack = 1e-9;
  if (!(x >= -kSlack && y >= -kSlack && x <= f.width - 1 + kSlack && y <= f.height - 1 + kSlack)) return false;
  x = std::clamp(x, 0.0, static_cast<double>(f.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(f.height - 1));
  const int u0 = std::min(static_cast<int>(std::floor(x)), f.width - 1);
  const int v0 = std::min(static_cast<int>(std::floor(y)), f.height - 1);
  const int u1 = std::min(u0 + 1, f.width - 1);
  const int v1 = std::min(v0 + 1, f.height - 1);
  const double a = x - u0, b = y - v0;
  const double* f00 = f.cell(u0, v0);
  const double* f10 = f.cell(u1, v0);
  const double* f01 = f.cell(u0, v1);
  const double* f11 = f.cell(u1, v1);
  double n = 0.0;
  for (int k = 0; k < f.dim; ++k) {
    out[k] = (1 - a) * (1 - b) * f00[k] + a * (1 - b) * f10[k] + (1 - a) * b * f01[k] + a * b * f11[k];
    n += out[k] * out[k];
  }
  n = std::sqrt(n);
  if (n < 1e-12) return false;
  for (int k = 0; k < f.dim; ++k) out[k] /= n;
  return true;
}

}  // namespace detail

/// Multi-view plane-sweep volume on the reference feature grid. Each cell is
/// the mean cosine similarity over source views with a valid projection;
/// cells with none score 0 and their pixel is flagged.
inline CostVolume build_multiview_volume(const SweepView& ref, const std::vector<SweepView>& sources,
                                         const DepthCandidates& candidates, unsigned threads = 1) {
  if (sources.empty()) fail(ErrorCode::kInvalidInput, "plane sweep needs at least one source view");
  const FeatureMap& fr = *ref.features;
  const int stride = detail::feature_stride(fr, ref.intrinsics);
  std::vector<int> src_stride;
  for (const auto& s : sources) {
    if (s.features->dim != fr.dim) fail(ErrorCode::kDimensionMismatch, "feature dimensions differ between views");
    src_stride.push_back(detail::feature_stride(*s.features, s.intrinsics));
  }
  const int K = candidates.size();
  CostVolume vol(fr.height, fr.width, K, VolumeKind::kMultiview);
  std::vector<Pose> ref_to_src;
  for (const auto& s : sources) ref_to_src.push_back(relative_pose(ref.pose, s.pose));

  std::vector<std::uint8_t> any_valid(static_cast<std::size_t>(fr.height), 0);
  parallel_for(
      static_cast<std::size_t>(fr.height),
      [&](std::size_t row) {
        const int v = static_cast<int>(row);
        std::vector<double> sampled(fr.dim);
        for (int u = 0; u < fr.width; ++u) {
          const double* f0 = fr.cell(u, v);
          const Vec2 pix((u + 0.5) * stride - 0.5, (v + 0.5) * stride - 0.5);
          const Vec3 ray = pixel_ray(pix, ref.intrinsics);
          double* fib = vol.fiber(u, v);
          bool pixel_valid = false;
          for (int k = 0; k < K; ++k) {
            const Vec3 x_ref = ray * candidates.values[k];
            double sum = 0.0;
            int count = 0;
            for (std::size_t s = 0; s < sources.size(); ++s) {
              const Vec3 x_src = ref_to_src[s].transform(x_ref);
              if (!(x_src.z() > 1e-9)) continue;
              const auto& ks = sources[s].intrinsics;
              const Vec2 q(ks.fx * x_src.x() / x_src.z() + ks.cx, ks.fy * x_src.y() / x_src.z() + ks.cy);
              const double gx = (q.x() + 0.5) / src_stride[s] - 0.5;
              const double gy = (q.y() + 0.5) / src_stride[s] - 0.5;
              if (!detail::sample_feature(*sources[s].features, gx, gy, sampled)) continue;
              double dot = 0.0;
              for (int d = 0; d < fr.dim; ++d) dot += f0[d] * sampled[d];
              sum += std::clamp(dot, -1.0, 1.0);
              ++count;
            }
            fib[k] = count > 0 ? sum / count : 0.0;
            pixel_valid = pixel_valid || count > 0;
          }
          vol.flagged[static_cast<std::size_t>(v) * fr.width + u] = pixel_valid ? 0 : 1;
          if (pixel_valid) any_valid[row] = 1;
        }
      },
      threads);
  vol.degenerate = std::none_of(any_valid.begin(), any_valid.end(), [](std::uint8_t x) { return x != 0; });
  return vol;
}

/// Index of the candidate nearest in inverse depth; ties go to the smaller index.
inline int nearest_candidate(const DepthCandidates& c, double depth) {
  const double inv = 1.0 / depth;
  const double tie_eps = 1e-12 / c.values.front();
  int best = 0;
  double best_diff = std::numeric_limits<double>::infinity();
  for (int k = 0; k < c.size(); ++k) {
    const double diff = std::abs(1.0 / c.values[k] - inv);
    if (diff < best_diff - tie_eps) {
      best_diff = diff;
      best = k;
    }
  }
  return best;
}

/// One-hot volume at the candidate nearest the monocular depth. Invalid
/// pixels get the uniform fiber 1/K.
inline CostVolume build_guidance_volume(const DepthMap& mono_depth, const DepthCandidates& candidates) {
  const int K = candidates.size();
  CostVolume vol(mono_depth.height, mono_depth.width, K, VolumeKind::kGuidance);
  for (int v = 0; v < mono_depth.height; ++v)
    for (int u = 0; u < mono_depth.width; ++u) {
      double* fib = vol.fiber(u, v);
      if (!mono_depth.is_valid(u, v)) {
        std::fill(fib, fib + K, 1.0 / K);
        vol.flagged[static_cast<std::size_t>(v) * mono_depth.width + u] = 1;
        continue;
      }
      fib[nearest_candidate(candidates, mono_depth.at(u, v))] = 1.0;
    }
  return vol;
}

/// Resamples a full-resolution depth map at the cell centers of a grid
/// downscaled by `stride`.
inline DepthMap depth_at_stride(const DepthMap& depth, int stride) {
  DepthMap out(depth.width / stride, depth.height / stride);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      const auto d = depth.sample(Vec2((u + 0.5) * stride - 0.5, (v + 0.5) * stride - 0.5));
      out.set(u, v, d ? *d : 0.0);
    }
  return out;
}

/// Bilinear upsampling of every candidate slice to a grid `stride` times
/// finer, with the same cell-center convention as the sweep. Flags take the
/// nearest coarse cell.
inline CostVolume upsample_volume(const CostVolume& vol, int stride) {
  if (stride < 1) fail(ErrorCode::kInvalidInput, "upsampling stride must be >= 1");
  if (stride == 1) return vol;
  CostVolume out(vol.height * stride, vol.width * stride, vol.K, vol.kind);
  out.degenerate = vol.degenerate;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double gx = std::clamp((x + 0.5) / stride - 0.5, 0.0, static_cast<double>(vol.width - 1));
      const double gy = std::clamp((y + 0.5) / stride - 0.5, 0.0, static_cast<double>(vol.height - 1));
      const int u0 = static_cast<int>(std::floor(gx)), v0 = static_cast<int>(std::floor(gy));
      const int u1 = std::min(u0 + 1, vol.width - 1), v1 = std::min(v0 + 1, vol.height - 1);
      const double a = gx - u0, b = gy - v0;
      const double *f00 = vol.fiber(u0, v0), *f10 = vol.fiber(u1, v0), *f01 = vol.fiber(u0, v1), *f11 = vol.fiber(u1, v1);
      double* f = out.fiber(x, y);
      for (int k = 0; k < vol.K; ++k)
        f[k] = (1 - a) * (1 - b) * f00[k] + a * (1 - b) * f10[k] + (1 - a) * b * f01[k] + a * b * f11[k];
      out.flagged[static_cast<std::size_t>(y) * out.width + x] =
          vol.flagged[static_cast<std::size_t>(std::min(y / stride, vol.height - 1)) * vol.width + std::min(x / stride, vol.width - 1)];
    }
  return out;
}

using Aggregator = std::function<CostVolume(const CostVolume& multi, const CostVolume& guide)>;

/// agg = multi + beta * guide.
inline CostVolume aggregate_volumes(const CostVolume& multi, const CostVolume& guide, double beta = 1.0) {
  if (multi.height != guide.height || multi.width != guide.width || multi.K != guide.K)
    fail(ErrorCode::kDimensionMismatch, "cost volumes differ in shape");
  if (!(beta >= 0.0)) fail(ErrorCode::kInvalidInput, "aggregation weight must be non-negative");
  CostVolume agg = multi;
  agg.kind = VolumeKind::kAggregated;
  for (std::size_t i = 0; i < agg.scores.size(); ++i) agg.scores[i] = multi.scores[i] + beta * guide.scores[i];
  return agg;
}

inline Aggregator additive_aggregator(double beta) {
  return [beta](const CostVolume& m, const CostVolume& g) { return aggregate_volumes(m, g, beta); };
}

struct ConfidenceMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major

  double at(int u, int v) const { return values[static_cast<std::size_t>(v) * width + u]; }

  /// Bilinear lookup at full-resolution pixel coordinates for a map computed
  /// on a grid downscaled by `stride` (clamped at borders).
  double sample_image(const Vec2& pixel, int stride) const {
    const double x = std::clamp((pixel.x() + 0.5) / stride - 0.5, 0.0, static_cast<double>(width - 1));
    const double y = std::clamp((pixel.y() + 0.5) / stride - 0.5, 0.0, static_cast<double>(height - 1));
    const int u0 = static_cast<int>(std::floor(x)), v0 = static_cast<int>(std::floor(y));
    const int u1 = std::min(u0 + 1, width - 1), v1 = std::min(v0 + 1, height - 1);
    const double a = x - u0, b = y - v0;
    return (1 - a) * (1 - b) * at(u0, v0) + a * (1 - b) * at(u1, v0) + (1 - a) * b * at(u0, v1) + a * b * at(u1, v1);
  }
};

/// Max of softmax(fiber / tau) per pixel, kept strictly below 1.
inline ConfidenceMap geometry_confidence(const CostVolume& agg, double tau = 0.1) {
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidInput, "softmax temperature must be positive");
  ConfidenceMap conf{agg.height, agg.width, std::vector<double>(static_cast<std::size_t>(agg.height) * agg.width)};
  const double below_one = std::nextafter(1.0, 0.0);
  for (int v = 0; v < agg.height; ++v)
    for (int u = 0; u < agg.width; ++u) {
      const double* fib = agg.fiber(u, v);
      const double top = *std::max_element(fib, fib + agg.K);
      double z = 0.0;
      for (int k = 0; k < agg.K; ++k) z += std::exp((fib[k] - top) / tau);
      conf.values[static_cast<std::size_t>(v) * agg.width + u] = std::min(1.0 / z, below_one);
    }
  return conf;
}

/// Built-in descriptors at 1/4 resolution: a mean-subtracted 5x5 patch of the
/// box-downsampled luminance plus its two central-difference gradients,
/// L2-normalized. Borders clamp to the edge. Flat cells map to e_0.
inline FeatureMap builtin_features(const Image& image) {
  constexpr int kStride = 4;
  constexpr int kRadius = 2;
  const int w = image.width / kStride, h = image.height / kStride;
  std::vector<double> gray(static_cast<std::size_t>(w) * h, 0.0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double s = 0.0;
      for (int dv = 0; dv < kStride; ++dv)
        for (int du = 0; du < kStride; ++du) s += image.luminance(u * kStride + du, v * kStride + dv);
      gray[static_cast<std::size_t>(v) * w + u] = s / (kStride * kStride);
    }
  auto g = [&](int u, int v) {
    return gray[static_cast<std::size_t>(std::clamp(v, 0, h - 1)) * w + std::clamp(u, 0, w - 1)];
  };
  constexpr int kPatch = (2 * kRadius + 1) * (2 * kRadius + 1);
  FeatureMap f(h, w, kPatch + 2);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      double* cell = f.cell(u, v);
      double mean = 0.0;
      int k = 0;
      for (int dv = -kRadius; dv <= kRadius; ++dv)
        for (int du = -kRadius; du <= kRadius; ++du) mean += (cell[k++] = g(u + du, v + dv));
      mean /= kPatch;
      for (k = 0; k < kPatch; ++k) cell[k] -= mean;
      cell[kPatch] = 0.5 * (g(u + 1, v) - g(u - 1, v));
      cell[kPatch + 1] = 0.5 * (g(u, v + 1) - g(u, v - 1));
    }
  f.normalize();
  return f;
}

}  // namespace splatalign
