#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "splatalign/splatalign.hpp"

namespace splatalign::testing {

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle_rad) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle_rad);
  return axis_angle(Vec3(n(rng), n(rng), n(rng)).normalized(), u(rng));
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

// ---------------------------------------------------------------------------
// Random refinement problems for gradient checks.

struct RandomRefine {
  std::vector<DepthMap> depths;  // owned; views point into this
  RefineProblem problem;
  RefineState state;
};

inline RandomRefine random_refine_problem(std::uint64_t seed, int views = 3, int matches_per_pair = 40) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const CameraIntrinsics K{60.0, 62.0, 31.5, 23.5, 64, 48};
  RandomRefine r;
  r.depths.reserve(views);
  for (int v = 0; v < views; ++v) {
    DepthMap d(K.width, K.height);
    const double a = 3.0 + u01(rng), b = 0.3 * u01(rng), c = 0.05 + 0.1 * u01(rng);
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) d.set(x, y, a + b * std::sin(c * x) + 0.2 * std::cos(0.07 * y + v));
    r.depths.push_back(std::move(d));
  }
  std::vector<RefineView> rv;
  for (int v = 0; v < views; ++v) {
    Pose p = v == 0 ? Pose::identity() : make_pose(random_rotation(rng, 0.15), 0.3 * random_unit(rng));
    rv.push_back({K, &r.depths[v], p});
  }
  std::vector<CorrespondenceSet> sets;
  std::normal_distribution<double> noise(0.0, 1.5);
  for (int i = 0; i < views; ++i)
    for (int j = i + 1; j < views; ++j) {
      CorrespondenceSet s;
      s.i = i;
      s.j = j;
      for (int m = 0; m < matches_per_pair; ++m) {
        const Vec2 p(2.0 + u01(rng) * (K.width - 5), 2.0 + u01(rng) * (K.height - 5));
        const double d = *r.depths[i].sample(p);
        const Pose rel = relative_pose(rv[i].base_pose, rv[j].base_pose);
        const auto pr = project(rel.transform(backproject(p, d, K)), K);
        Vec2 q = pr.pixel + Vec2(noise(rng), noise(rng));
        q = q.cwiseMax(Vec2(1.0, 1.0)).cwiseMin(Vec2(K.width - 2.0, K.height - 2.0));
        s.matches.push_back({p, q, 1.0});
      }
      sets.push_back(std::move(s));
    }
  r.problem = make_refine_problem(rv, sets, 8);
  r.state = RefineState::zeros(r.problem);
  std::normal_distribution<double> small(0.0, 1.0);
  for (int v = 0; v < views; ++v) {
    for (int k = 0; k < 6; ++k) r.state.pose[v].rotation[k] = 0.01 * small(rng);
    for (int k = 0; k < 3; ++k) r.state.pose[v].translation[k] = 0.01 * small(rng);
    for (double& x : r.state.depth[v].values) x = 0.05 * small(rng);
  }
  return r;
}

/// Central finite differences of `f` over every flat parameter.
template <class F>
Eigen::VectorXd finite_difference(const RefineState& s, F&& f, double h = 1e-5) {
  const Eigen::VectorXd x0 = s.flatten();
  Eigen::VectorXd g(x0.size());
  RefineState t = s;
  for (Eigen::Index k = 0; k < x0.size(); ++k) {
    Eigen::VectorXd x = x0;
    x[k] = x0[k] + h;
    t.assign(x);
    const double fp = f(t);
    x[k] = x0[k] - h;
    t.assign(x);
    const double fm = f(t);
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

// ---------------------------------------------------------------------------
// Two cameras looking at a tilted plane: depth maps are exact, so lifted
// correspondences have exact 3D geometry.

struct PlanePair {
  CameraIntrinsics K{80.0, 80.0, 39.5, 29.5, 80, 60};
  Pose pose_i = Pose::identity();
  Pose pose_j;
  DepthMap depth_i, depth_j;
  CorrespondenceSet matches;
  std::vector<std::uint8_t> outlier;
};

inline DepthMap plane_depth(const CameraIntrinsics& K, const Vec3& n, double offset) {
  // Plane n . X = offset in the camera frame.
  DepthMap d(K.width, K.height);
  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u) {
      const Vec3 ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      d.set(u, v, offset / n.dot(ray));
    }
  return d;
}

inline PlanePair plane_pair(std::uint64_t seed, int matches, double outlier_fraction) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  PlanePair pp;
  pp.pose_j = make_pose(random_rotation(rng, 10.0 * kDegToRad), 0.4 * random_unit(rng));
  // World plane, written in each camera frame.
  const Vec3 nw = (Vec3(0.0, 0.0, 1.0) + 0.3 * random_unit(rng)).normalized();
  const double ow = 4.0 + u01(rng);
  pp.depth_i = plane_depth(pp.K, nw, ow);
  const Vec3 nj = pp.pose_j.rotation * nw;
  pp.depth_j = plane_depth(pp.K, nj, ow + nj.dot(pp.pose_j.translation));
  pp.matches.i = 0;
  pp.matches.j = 1;
  const int n_out = static_cast<int>(std::floor(outlier_fraction * matches));
  std::vector<int> slots(matches);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  pp.outlier.assign(matches, 0);
  for (int k = 0; k < n_out; ++k) pp.outlier[slots[k]] = 1;
  std::vector<std::uint8_t> used(static_cast<std::size_t>(pp.K.width) * pp.K.height, 0);
  for (int m = 0; m < matches; ++m) {
    for (;;) {
      const int u = 2 + static_cast<int>(u01(rng) * (pp.K.width - 4));
      const int v = 2 + static_cast<int>(u01(rng) * (pp.K.height - 4));
      if (used[static_cast<std::size_t>(v) * pp.K.width + u]) continue;
      const Vec2 p(u, v);
      Vec2 q;
      if (pp.outlier[m]) {
        q = Vec2(1.0 + u01(rng) * (pp.K.width - 3), 1.0 + u01(rng) * (pp.K.height - 3));
      } else {
        const auto pr = project(pp.pose_j.transform(backproject(p, pp.depth_i.at(u, v), pp.K)), pp.K);
        q = pr.pixel;
        if (!(q.x() >= 1.0 && q.y() >= 1.0 && q.x() <= pp.K.width - 2 && q.y() <= pp.K.height - 2)) continue;
      }
      used[static_cast<std::size_t>(v) * pp.K.width + u] = 1;
      pp.matches.matches.push_back({p, q, 1.0});
      break;
    }
  }
  return pp;
}

// ---------------------------------------------------------------------------
// Brute-force compositor: every pixel visits every Gaussian, no tiling, its
// own EWA projection.

inline Image brute_force_render(const GaussianScene& scene, const Pose& pose, const CameraIntrinsics& K,
                                const RenderConfig& cfg = {}) {
  struct P {
    Vec2 mean;
    Mat2 inv;
    double depth;
    std::size_t index;
  };
  std::vector<P> ps;
  for (std::size_t k = 0; k < scene.gaussians.size(); ++k) {
    const auto& g = scene.gaussians[k];
    const Vec3 t = pose.rotation * g.center + pose.translation;
    if (t.z() <= cfg.near_clip) continue;
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx / t.z(), 0.0, -K.fx * t.x() / (t.z() * t.z()), 0.0, K.fy / t.z(), -K.fy * t.y() / (t.z() * t.z());
    Mat2 c = J * pose.rotation * g.covariance * pose.rotation.transpose() * J.transpose();
    c += cfg.cov2d_floor * Mat2::Identity();
    ps.push_back({Vec2(K.fx * t.x() / t.z() + K.cx, K.fy * t.y() / t.z() + K.cy), c.inverse(), t.z(), k});
  }
  std::sort(ps.begin(), ps.end(), [](const P& a, const P& b) { return a.depth < b.depth || (a.depth == b.depth && a.index < b.index); });
  Image img(K.width, K.height);
  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u) {
      double T = 1.0;
      Vec3 C = Vec3::Zero();
      for (const auto& p : ps) {
        const Vec2 d = Vec2(u, v) - p.mean;
        const double m = d.dot(p.inv * d);
        if (m > cfg.gaussian_cutoff * cfg.gaussian_cutoff) continue;
        const double a = std::min(cfg.max_alpha, scene.gaussians[p.index].opacity * std::exp(-0.5 * m));
        if (!(a > 0.0)) continue;
        C += scene.gaussians[p.index].color * a * T;
        T *= 1.0 - a;
        if (1.0 - T >= cfg.alpha_threshold) break;
      }
      img.set_rgb(u, v, C + T * cfg.background);
    }
  return img;
}

inline GaussianScene random_scene(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Gaussian> gs;
  for (int k = 0; k < count; ++k) {
    Gaussian g;
    g.center = Vec3(-1.5 + 3.0 * u01(rng), -1.5 + 3.0 * u01(rng), 2.0 + 4.0 * u01(rng));
    const Mat3 R = random_rotation(rng, std::numbers::pi);
    const Vec3 s(0.02 + 0.2 * u01(rng), 0.02 + 0.2 * u01(rng), 0.02 + 0.2 * u01(rng));
    g.covariance = R * s.cwiseAbs2().asDiagonal() * R.transpose();
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
    g.opacity = 0.05 + 0.9 * u01(rng);
    g.color = Vec3(u01(rng), u01(rng), u01(rng));
    gs.push_back(g);
  }
  return merge_scene({gs});
}

// ---------------------------------------------------------------------------
// Perturbation used by the fine-alignment experiments: view 0 is untouched,
// every other view gets a `rot_deg` rotation about a random axis, a
// translation offset of `trans_frac` times its distance to view 0, and its
// depth scaled by `depth_scale`.

struct Perturbed {
  std::vector<Pose> poses;
  std::vector<DepthMap> depths;
};

inline Perturbed perturb(const std::vector<Pose>& poses, const std::vector<DepthMap>& depths, std::uint64_t seed,
                         double rot_deg = 2.0, double trans_frac = 0.05, double depth_scale = 1.05) {
  std::mt19937_64 rng(seed);
  Perturbed out{poses, depths};
  for (std::size_t v = 1; v < poses.size(); ++v) {
    const Mat3 dR = axis_angle(random_unit(rng), rot_deg * kDegToRad);
    const double base = (poses[v].center() - poses[0].center()).norm();
    out.poses[v].rotation = dR * poses[v].rotation;
    out.poses[v].translation = poses[v].translation + trans_frac * base * random_unit(rng);
    for (std::size_t i = 0; i < out.depths[v].depth.size(); ++i)
      if (out.depths[v].valid[i]) out.depths[v].depth[i] *= depth_scale;
  }
  return out;
}

/// Mean pairwise relative-rotation error in degrees (gauge free).
inline double mean_relative_rotation_error(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < est.size(); ++i)
    for (std::size_t j = i + 1; j < est.size(); ++j) {
      s += rotation_geodesic_deg(relative_pose(est[i], est[j]).rotation, relative_pose(gt[i], gt[j]).rotation);
      ++n;
    }
  return n ? s / n : 0.0;
}

}  // namespace splatalign::testing
