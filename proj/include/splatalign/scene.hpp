#pragma once

// Pixel-aligned Gaussians: one primitive per valid-depth pixel, centered on
// the back-projected pixel, sized to its footprint, with opacity driven by
// the geometry confidence.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "splatalign/confvol.hpp"
#include "splatalign/gaussian.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"

namespace splatalign {

struct GaussianParams {
  double max_opacity = 0.95;
  double opacity_epsilon = 1e-4;  // opacity stays <= 1 - epsilon
  double pixel_radius = 0.5;      // in-plane std, in pixels at the Gaussian's depth
  double depth_scale = 1.0;       // along-ray std relative to in-plane std
};

/// `conf` may be computed on a grid downscaled by `conf_stride`; it is
/// bilinearly upsampled to pixel positions.
inline std::vector<Gaussian> build_view_gaussians(const Image& image, const DepthMap& depth, const Pose& pose,
                                                  const CameraIntrinsics& intr, const ConfidenceMap& conf,
                                                  int conf_stride, std::uint32_t view_id,
                                                  const GaussianParams& params = {}) {
  if (image.width != depth.width || image.height != depth.height || intr.width != depth.width ||
      intr.height != depth.height)
    fail(ErrorCode::kDimensionMismatch, "image, depth and intrinsics sizes differ");
  if (conf.width * conf_stride != depth.width || conf.height * conf_stride != depth.height)
    fail(ErrorCode::kDimensionMismatch, "confidence map does not match depth size");
  const Mat3 Rt = pose.rotation.transpose();
  const double cap = 1.0 - params.opacity_epsilon;
  std::vector<Gaussian> out;
  out.reserve(depth.valid_count());
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      if (!depth.is_valid(u, v)) continue;
      const double d = depth.at(u, v);
      const Vec2 px(u, v);
      Gaussian g;
      g.center = Rt * (backproject(px, d, intr) - pose.translation);
      const double s = conf_stride == 1 ? conf.at(u, v) : conf.sample_image(px, conf_stride);
      g.opacity = std::clamp(params.max_opacity * s, 0.0, cap);
      const double sxy = params.pixel_radius * d / intr.fx;
      const double sz = params.depth_scale * sxy;
      const Vec3 var(sxy * sxy, sxy * sxy, sz * sz);
      g.covariance = Rt * var.asDiagonal() * pose.rotation;
      g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
      g.color = image.rgb(u, v).cwiseMax(0.0).cwiseMin(1.0);
      g.view = view_id;
      g.pixel_u = static_cast<std::uint32_t>(u);
      g.pixel_v = static_cast<std::uint32_t>(v);
      out.push_back(g);
    }
  return out;
}

/// Confidence map with every pixel set to `value` (useful when no cost volume
/// is available).
inline ConfidenceMap constant_confidence(int width, int height, double value) {
  return {height, width, std::vector<double>(static_cast<std::size_t>(width) * height, value)};
}

}  // namespace splatalign
