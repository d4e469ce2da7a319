#pragma once

// CPU tile-based forward splatting. Gaussians are projected with the local
// perspective Jacobian (EWA), sorted front-to-back once per frame, binned
// into screen tiles, and alpha-composited per pixel.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "splatalign/gaussian.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/parallel.hpp"

namespace splatalign {

struct RenderConfig {
  int tile_size = 16;
  double alpha_threshold = 0.9999;  // stop compositing once accumulated alpha reaches this
  double gaussian_cutoff = 3.0;     // Mahalanobis radius of a splat's support
  Vec3 background = Vec3::Zero();
  double near_clip = 0.01;
  double cov2d_floor = 0.3;  // added to the projected covariance diagonal (px^2)
  double max_alpha = 0.999;
  unsigned threads = 1;

  void validate() const {
    if (tile_size < 1 || !(gaussian_cutoff > 0.0) || !(alpha_threshold > 0.0 && alpha_threshold <= 1.0))
      fail(ErrorCode::kValidation, "invalid render configuration");
  }
};

struct ProjectedGaussian {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  bool valid = false;
};

inline ProjectedGaussian project_gaussian(const Gaussian& g, const Pose& pose, const CameraIntrinsics& intr,
                                          double cutoff = 3.0, double near_clip = 0.01, double cov2d_floor = 0.3) {
  ProjectedGaussian out;
  const Vec3 t = pose.transform(g.center);
  out.depth = t.z();
  if (!(t.z() > near_clip)) return out;
  const double iz = 1.0 / t.z();
  Eigen::Matrix<double, 2, 3> J;
  J << intr.fx * iz, 0.0, -intr.fx * t.x() * iz * iz, 0.0, intr.fy * iz, -intr.fy * t.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> T = J * pose.rotation;
  out.cov2d = T * g.covariance * T.transpose();
  out.cov2d(0, 0) += cov2d_floor;
  out.cov2d(1, 1) += cov2d_floor;
  out.mean2d = Vec2(intr.fx * t.x() * iz + intr.cx, intr.fy * t.y() * iz + intr.cy);
  // Off-screen test on the axis-aligned extent of the cutoff ellipse.
  const double rx = cutoff * std::sqrt(out.cov2d(0, 0));
  const double ry = cutoff * std::sqrt(out.cov2d(1, 1));
  out.valid = out.mean2d.x() + rx >= -0.5 && out.mean2d.x() - rx <= intr.width - 0.5 &&
              out.mean2d.y() + ry >= -0.5 && out.mean2d.y() - ry <= intr.height - 0.5 && out.mean2d.allFinite();
  return out;
}

struct RenderOutput {
  Image color;
  std::vector<double> depth;  // alpha-weighted expected depth
  std::vector<double> alpha;  // accumulated opacity
  std::size_t skipped_singular = 0;
  std::size_t visible = 0;

  double alpha_at(int u, int v) const { return alpha[static_cast<std::size_t>(v) * color.width + u]; }
  double depth_at(int u, int v) const { return depth[static_cast<std::size_t>(v) * color.width + u]; }
};

namespace detail {

struct Splat {
  Vec2 mean;
  double conic_xx, conic_xy, conic_yy;
  double depth;
  double opacity;
  Vec3 color;
  int x0, x1, y0, y1;  // inclusive pixel bounds of the cutoff ellipse
};

}  // namespace detail

inline RenderOutput render(const GaussianScene& scene, const Pose& pose, const CameraIntrinsics& intr,
                           const RenderConfig& cfg = {}) {
  cfg.validate();
  const int W = intr.width, H = intr.height;
  RenderOutput out;
  out.color = Image(W, H);
  out.depth.assign(static_cast<std::size_t>(W) * H, 0.0);
  out.alpha.assign(static_cast<std::size_t>(W) * H, 0.0);

  const std::size_t n = scene.gaussians.size();
  std::vector<detail::Splat> splats(n);
  std::vector<std::uint8_t> keep(n, 0);
  std::vector<std::uint8_t> singular(n, 0);
  parallel_for(
      n,
      [&](std::size_t k) {
        const Gaussian& g = scene.gaussians[k];
        const auto p = project_gaussian(g, pose, intr, cfg.gaussian_cutoff, cfg.near_clip, cfg.cov2d_floor);
        if (!p.valid) return;
        const double det = p.cov2d.determinant();
        if (!(det >= 1e-12)) {
          singular[k] = 1;
          return;
        }
        detail::Splat& s = splats[k];
        s.mean = p.mean2d;
        s.conic_xx = p.cov2d(1, 1) / det;
        s.conic_xy = -p.cov2d(0, 1) / det;
        s.conic_yy = p.cov2d(0, 0) / det;
        s.depth = p.depth;
        s.opacity = g.opacity;
        s.color = g.color;
        // Tight axis-aligned bounds of {x : x^T cov^-1 x <= cutoff^2}.
        const double rx = cfg.gaussian_cutoff * std::sqrt(p.cov2d(0, 0));
        const double ry = cfg.gaussian_cutoff * std::sqrt(p.cov2d(1, 1));
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x() - rx)));
        s.x1 = std::min(W - 1, static_cast<int>(std::floor(s.mean.x() + rx)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y() - ry)));
        s.y1 = std::min(H - 1, static_cast<int>(std::floor(s.mean.y() + ry)));
        keep[k] = s.x0 <= s.x1 && s.y0 <= s.y1;
      },
      cfg.threads);

  std::vector<std::uint32_t> order;
  order.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.skipped_singular += singular[k];
    if (keep[k]) order.push_back(static_cast<std::uint32_t>(k));
  }
  out.visible = order.size();
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return splats[a].depth < splats[b].depth || (splats[a].depth == splats[b].depth && a < b);
  });

  const int ts = cfg.tile_size;
  const int tiles_x = (W + ts - 1) / ts, tiles_y = (H + ts - 1) / ts;
  std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (auto k : order) {
    const auto& s = splats[k];
    for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
      for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(k);
  }

  const double cut2 = cfg.gaussian_cutoff * cfg.gaussian_cutoff;
  parallel_for(
      bins.size(),
      [&](std::size_t tile) {
        const int tx = static_cast<int>(tile % tiles_x), ty = static_cast<int>(tile / tiles_x);
        const auto& list = bins[tile];
        for (int v = ty * ts; v < std::min(H, (ty + 1) * ts); ++v)
          for (int u = tx * ts; u < std::min(W, (tx + 1) * ts); ++u) {
            double T = 1.0, D = 0.0;
            Vec3 C = Vec3::Zero();
            for (auto k : list) {
              const auto& s = splats[k];
              if (u < s.x0 || u > s.x1 || v < s.y0 || v > s.y1) continue;
              const double dx = u - s.mean.x(), dy = v - s.mean.y();
              const double m = s.conic_xx * dx * dx + 2.0 * s.conic_xy * dx * dy + s.conic_yy * dy * dy;
              if (m > cut2) continue;
              const double a = std::min(cfg.max_alpha, s.opacity * std::exp(-0.5 * m));
              if (!(a > 0.0)) continue;
              C += s.color * (a * T);
              D += s.depth * a * T;
              T *= 1.0 - a;
              if (1.0 - T >= cfg.alpha_threshold) break;
            }
            const double alpha = 1.0 - T;
            out.color.set_rgb(u, v, C + T * cfg.background);
            const std::size_t idx = static_cast<std::size_t>(v) * W + u;
            out.alpha[idx] = alpha;
            out.depth[idx] = D / std::max(alpha, 1e-12);
          }
      },
      cfg.threads);
  return out;
}

}  // namespace splatalign
