#pragma once

#include <cstdint>
#include <vector>

#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"

namespace splatalign {

/// A 3D Gaussian primitive with order-0 spherical-harmonic (RGB) color.
struct Gaussian {
  Vec3 center = Vec3::Zero();
  double opacity = 0.0;  // [0, 1)
  Mat3 covariance = Mat3::Identity();
  Vec3 color = Vec3::Zero();  // [0, 1]^3
  std::uint32_t view = 0;
  std::uint32_t pixel_u = 0;
  std::uint32_t pixel_v = 0;
};

inline bool is_spd(const Mat3& S) {
  if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, S.cwiseAbs().maxCoeff())) return false;
  Eigen::LLT<Mat3> llt(S);
  return llt.info() == Eigen::Success;
}

inline bool is_valid_gaussian(const Gaussian& g) {
  return g.center.allFinite() && g.opacity >= 0.0 && g.opacity < 1.0 && is_spd(g.covariance) &&
         (g.color.array() >= 0.0).all() && (g.color.array() <= 1.0).all();
}

struct BoundingBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const { return (p.array() >= min.array()).all() && (p.array() <= max.array()).all(); }
};

struct GaussianScene {
  std::vector<Gaussian> gaussians;
  std::vector<std::size_t> view_counts;
  BoundingBox bounds;

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
};

inline BoundingBox bounding_box(const std::vector<Gaussian>& gs) {
  BoundingBox b;
  if (gs.empty()) return b;
  b.min = b.max = gs.front().center;
  for (const auto& g : gs) {
    b.min = b.min.cwiseMin(g.center);
    b.max = b.max.cwiseMax(g.center);
  }
  return b;
}

/// Concatenates per-view Gaussian lists in order.
inline GaussianScene merge_scene(const std::vector<std::vector<Gaussian>>& per_view) {
  if (per_view.empty()) fail(ErrorCode::kEmptyScene, "merge_scene needs at least one view");
  GaussianScene scene;
  std::size_t total = 0;
  for (const auto& v : per_view) total += v.size();
  if (total == 0) fail(ErrorCode::kEmptyScene, "no Gaussians in any view");
  scene.gaussians.reserve(total);
  for (const auto& v : per_view) {
    scene.view_counts.push_back(v.size());
    scene.gaussians.insert(scene.gaussians.end(), v.begin(), v.end());
  }
  scene.bounds = bounding_box(scene.gaussians);
  return scene;
}

}  // namespace splatalign
