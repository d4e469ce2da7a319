#pragma once

// Procedural ground-truth scenes: a closed room with boxes and free-standing
// panels, cameras on an arc or a line, images rendered through the splatting
// rasterizer from a dense surface-Gaussian scene, exact ray-cast depths, and
// exact correspondences with optional noise and outliers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatalign/error.hpp"
#include "splatalign/gaussian.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/io.hpp"
#include "splatalign/raster.hpp"

namespace splatalign {

enum class Trajectory { kArc, kLine };

struct NoiseSpec {
  double depth_sigma = 0.0;       // multiplicative depth noise (std of the factor)
  double match_sigma = 0.0;       // pixel noise on q
  double outlier_fraction = 0.0;  // rho in [0, 1)
};

struct SynthSpec {
  int views = 3;
  Trajectory trajectory = Trajectory::kArc;
  double baseline_deg = 10.0;
  int width = 128;
  int height = 128;
  double fov_deg = 60.0;
  double radius = 3.5;  // camera distance from the look-at point
  int boxes = 3;
  int planes = 2;
  int matches_per_pair = 200;
  bool adjacent_pairs_only = false;
  std::vector<int> targets;  // held-out views: no depth noise and no matches
  NoiseSpec noise;

  void validate() const {
    if (views < 2) fail(ErrorCode::kValidation, "synth spec needs at least 2 views");
    if (!(baseline_deg > 0.0 && baseline_deg <= 60.0)) fail(ErrorCode::kValidation, "baseline must be in (0, 60] degrees");
    if (!(noise.outlier_fraction >= 0.0 && noise.outlier_fraction < 1.0))
      fail(ErrorCode::kValidation, "outlier fraction must be in [0, 1)");
    if (noise.depth_sigma < 0.0 || noise.match_sigma < 0.0) fail(ErrorCode::kValidation, "noise levels must be >= 0");
    if (width < 16 || height < 16) fail(ErrorCode::kValidation, "images must be at least 16x16");
    if (!(fov_deg > 10.0 && fov_deg < 120.0)) fail(ErrorCode::kValidation, "field of view must be in (10, 120) degrees");
    if (!(radius > 0.5 && radius < 5.0)) fail(ErrorCode::kValidation, "camera radius must be in (0.5, 5)");
    if (boxes < 0 || planes < 0 || matches_per_pair < 0) fail(ErrorCode::kValidation, "counts must be >= 0");
    if (trajectory == Trajectory::kLine && 0.5 * (views - 1) * baseline_deg >= 75.0)
      fail(ErrorCode::kValidation, "line trajectory spans too wide an angle");
    int contexts = views;
    for (int t : targets) {
      if (t < 0 || t >= views) fail(ErrorCode::kIndexOutOfRange, "target view index out of range");
      --contexts;
    }
    if (contexts < 2) fail(ErrorCode::kValidation, "need at least 2 context views");
    if (std::find(targets.begin(), targets.end(), 0) != targets.end())
      fail(ErrorCode::kValidation, "view 0 is the reference and cannot be a target");
  }
};

inline nlohmann::json synth_spec_to_json(const SynthSpec& s) {
  return {{"views", s.views},
          {"trajectory", s.trajectory == Trajectory::kArc ? "arc" : "line"},
          {"baseline_deg", s.baseline_deg},
          {"width", s.width},
          {"height", s.height},
          {"fov_deg", s.fov_deg},
          {"radius", s.radius},
          {"boxes", s.boxes},
          {"planes", s.planes},
          {"matches_per_pair", s.matches_per_pair},
          {"adjacent_pairs_only", s.adjacent_pairs_only},
          {"targets", s.targets},
          {"noise",
           {{"depth_sigma", s.noise.depth_sigma},
            {"match_sigma", s.noise.match_sigma},
            {"outlier_fraction", s.noise.outlier_fraction}}}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  if (!j.is_object()) fail(ErrorCode::kParse, "synth spec: expected an object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "views") s.views = v.get<int>();
      else if (k == "trajectory") {
        const auto t = v.get<std::string>();
        if (t != "arc" && t != "line") fail(ErrorCode::kParse, "synth spec.trajectory: expected 'arc' or 'line'");
        s.trajectory = t == "arc" ? Trajectory::kArc : Trajectory::kLine;
      } else if (k == "baseline_deg") s.baseline_deg = v.get<double>();
      else if (k == "width") s.width = v.get<int>();
      else if (k == "height") s.height = v.get<int>();
      else if (k == "fov_deg") s.fov_deg = v.get<double>();
      else if (k == "radius") s.radius = v.get<double>();
      else if (k == "boxes") s.boxes = v.get<int>();
      else if (k == "planes") s.planes = v.get<int>();
      else if (k == "matches_per_pair") s.matches_per_pair = v.get<int>();
      else if (k == "adjacent_pairs_only") s.adjacent_pairs_only = v.get<bool>();
      else if (k == "targets") s.targets = v.get<std::vector<int>>();
      else if (k == "noise") {
        for (auto n = v.begin(); n != v.end(); ++n) {
          if (n.key() == "depth_sigma") s.noise.depth_sigma = n.value().get<double>();
          else if (n.key() == "match_sigma") s.noise.match_sigma = n.value().get<double>();
          else if (n.key() == "outlier_fraction") s.noise.outlier_fraction = n.value().get<double>();
          else fail(ErrorCode::kParse, "synth spec.noise: unknown key '" + n.key() + "'");
        }
      } else fail(ErrorCode::kParse, "synth spec: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("synth spec: ") + e.what());
  }
  return s;
}

/// Textured rectangle: origin + s*axis_s + t*axis_t for s in [0, len_s],
/// t in [0, len_t]. The normal is axis_s x axis_t.
struct Facet {
  Vec3 origin;
  Vec3 axis_s, axis_t;  // unit
  double len_s = 1.0, len_t = 1.0;
  Vec3 base_color = Vec3::Constant(0.5);
  std::vector<Vec3> wave;  // (direction angle, wavelength m, phase)
  std::vector<Vec3> wave_amp;

  Vec3 normal() const { return axis_s.cross(axis_t).normalized(); }

  Vec3 color(double s, double t) const {
    Vec3 c = base_color;
    for (std::size_t k = 0; k < wave.size(); ++k) {
      const double phi = wave[k].x(), lambda = wave[k].y(), phase = wave[k].z();
      const double arg = 2.0 * std::numbers::pi * (s * std::cos(phi) + t * std::sin(phi)) / lambda + phase;
      c += wave_amp[k] * std::sin(arg);
    }
    return c.cwiseMax(0.0).cwiseMin(1.0);
  }
};

struct SynthView {
  Image image;
  DepthMap depth;     // provided ("monocular") depth, possibly noisy
  DepthMap gt_depth;  // exact ray-cast depth
  std::vector<int> facet;  // facet id per pixel
  Pose pose;
  CameraIntrinsics intrinsics;
  bool is_target = false;
};

struct SynthBundle {
  SynthSpec spec;
  std::uint64_t seed = 0;
  std::vector<Facet> facets;
  std::vector<SynthView> views;
  std::vector<CorrespondenceSet> matches;
  std::vector<std::vector<std::uint8_t>> outlier_rows;  // per set, 1 = injected outlier
  GaussianScene scene;
  double near = 0.5;
  double far = 20.0;

  std::vector<Pose> poses() const {
    std::vector<Pose> out;
    for (const auto& v : views) out.push_back(v.pose);
    return out;
  }
};

namespace detail {

inline Pose look_at(const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  const Vec3 down(0.0, 1.0, 0.0);
  const Vec3 x = down.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.row(0) = x;
  R.row(1) = y;
  R.row(2) = z;
  return {R, -R * center};
}

inline Facet make_facet(const Vec3& origin, const Vec3& s, const Vec3& t) {
  Facet f;
  f.origin = origin;
  f.len_s = s.norm();
  f.len_t = t.norm();
  f.axis_s = s / f.len_s;
  f.axis_t = t / f.len_t;
  return f;
}

// Six inward- or outward-facing faces of an oriented box.
inline void add_box(std::vector<Facet>& out, const Vec3& c, const Vec3& half, double yaw, bool inward) {
  const Mat3 R = axis_angle(Vec3::UnitY(), yaw);
  const Vec3 ex = R.col(0) * half.x(), ey = R.col(1) * half.y(), ez = R.col(2) * half.z();
  // (face center offset, two in-plane edge vectors) with outward normal s x t
  const std::array<std::array<Vec3, 3>, 6> faces = {{{ex, ey, ez},
                                                      {-ex, ez, ey},
                                                      {ey, ez, ex},
                                                      {-ey, ex, ez},
                                                      {ez, ex, ey},
                                                      {-ez, ey, ex}}};
  for (const auto& f : faces) {
    Vec3 s = 2.0 * f[1], t = 2.0 * f[2];
    if (inward) std::swap(s, t);
    out.push_back(make_facet(c + f[0] - 0.5 * s - 0.5 * t, s, t));
  }
}

inline double point_facet_distance(const Vec3& p, const Facet& f) {
  const Vec3 d = p - f.origin;
  const double s = std::clamp(d.dot(f.axis_s), 0.0, f.len_s);
  const double t = std::clamp(d.dot(f.axis_t), 0.0, f.len_t);
  return (f.origin + s * f.axis_s + t * f.axis_t - p).norm();
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int facet = -1;
};

// Closest intersection along origin + t * dir (t > 0).
inline Hit ray_cast(const std::vector<Facet>& facets, const Vec3& origin, const Vec3& dir) {
  Hit best;
  for (int k = 0; k < static_cast<int>(facets.size()); ++k) {
    const Facet& f = facets[k];
    const Vec3 n = f.axis_s.cross(f.axis_t);
    const double denom = n.dot(dir);
    if (std::abs(denom) < 1e-14) continue;
    const double t = n.dot(f.origin - origin) / denom;
    if (!(t > 1e-9) || t >= best.t) continue;
    const Vec3 d = origin + t * dir - f.origin;
    const double s = d.dot(f.axis_s), u = d.dot(f.axis_t);
    if (s < -1e-12 || s > f.len_s + 1e-12 || u < -1e-12 || u > f.len_t + 1e-12) continue;
    best.t = t;
    best.facet = k;
  }
  return best;
}

}  // namespace detail

/// Generates a full ground-truth bundle. Deterministic per (spec, seed).
inline SynthBundle generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  SynthBundle b;
  b.spec = spec;
  b.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };

  // Cameras.
  CameraIntrinsics K;
  K.width = spec.width;
  K.height = spec.height;
  K.fx = K.fy = 0.5 * spec.width / std::tan(0.5 * spec.fov_deg * kDegToRad);
  K.cx = 0.5 * spec.width - 0.5;
  K.cy = 0.5 * spec.height - 0.5;
  const Vec3 look(0.0, 0.3, 0.0);
  std::vector<Pose> poses;
  std::vector<Vec3> centers;
  for (int v = 0; v < spec.views; ++v) {
    const double theta = (v - 0.5 * (spec.views - 1)) * spec.baseline_deg * kDegToRad;
    Vec3 c;
    Pose p;
    if (spec.trajectory == Trajectory::kArc) {
      c = Vec3(spec.radius * std::sin(theta), 0.0, -spec.radius * std::cos(theta));
      p = detail::look_at(c, look);
    } else {
      c = Vec3(spec.radius * std::tan(theta), 0.0, -spec.radius);
      p = detail::look_at(c, c + Vec3(0.0, 0.3, spec.radius));
    }
    centers.push_back(c);
    poses.push_back(p);
  }
  double max_sep = 0.0;
  for (const auto& a : centers)
    for (const auto& c : centers) max_sep = std::max(max_sep, (a - c).norm());
  if (max_sep < 1e-6) fail(ErrorCode::kDegenerate, "all cameras coincide");

  // Scene: room, boxes resting on the floor, free-standing panels.
  const double floor_y = 1.5;
  detail::add_box(b.facets, Vec3(0.0, -0.75, 0.0), Vec3(6.0, 2.25, 6.0), 0.0, true);
  for (int k = 0; k < spec.boxes; ++k) {
    const double r = uni(0.0, 1.4), a = uni(0.0, 2.0 * std::numbers::pi);
    const Vec3 half(uni(0.2, 0.5), uni(0.2, 0.6), uni(0.2, 0.5));
    detail::add_box(b.facets, Vec3(r * std::cos(a), floor_y - half.y(), r * std::sin(a)), half, uni(0.0, std::numbers::pi), false);
  }
  for (int k = 0; k < spec.planes; ++k) {
    const double r = uni(0.5, 2.0), a = uni(0.0, 2.0 * std::numbers::pi), yaw = uni(0.0, std::numbers::pi);
    const double w = uni(0.6, 1.4), h = uni(0.6, 1.6);
    const Vec3 s = axis_angle(Vec3::UnitY(), yaw) * Vec3(w, 0.0, 0.0);
    const Vec3 c(r * std::cos(a), floor_y - h - uni(0.0, 0.6), r * std::sin(a) + 1.0);
    b.facets.push_back(detail::make_facet(c - 0.5 * s, s, Vec3(0.0, h, 0.0)));
  }
  // Keep every camera clear of solid geometry.
  for (const auto& c : centers)
    for (const auto& f : b.facets)
      if (detail::point_facet_distance(c, f) < 0.3) fail(ErrorCode::kDegenerate, "camera too close to scene geometry");

  // Exact depth per pixel.
  for (int v = 0; v < spec.views; ++v) {
    SynthView sv;
    sv.pose = poses[v];
    sv.intrinsics = K;
    sv.is_target = std::find(spec.targets.begin(), spec.targets.end(), v) != spec.targets.end();
    sv.gt_depth = DepthMap(K.width, K.height);
    sv.facet.assign(static_cast<std::size_t>(K.width) * K.height, -1);
    const Mat3 Rt = sv.pose.rotation.transpose();
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        const Vec3 dir = Rt * pixel_ray(Vec2(x, y), K);
        const auto hit = detail::ray_cast(b.facets, centers[v], dir);
        if (hit.facet < 0) continue;
        sv.gt_depth.set(x, y, hit.t);
        sv.facet[static_cast<std::size_t>(y) * K.width + x] = hit.facet;
      }
    b.views.push_back(std::move(sv));
  }

  // Textures: a few sinusoids whose wavelength is 12 to 48 pixels at the
  // median surface footprint of the facet, taken over every camera pixel that
  // sees it. Grazing rays count, so slanted floors do not alias.
  std::vector<std::vector<double>> footprints(b.facets.size());
  for (const auto& sv : b.views) {
    const Mat3 Rt = sv.pose.rotation.transpose();
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        const int id = sv.facet[static_cast<std::size_t>(y) * K.width + x];
        if (id < 0) continue;
        const Vec3 dir = (Rt * pixel_ray(Vec2(x, y), K)).normalized();
        const double cosi = std::max(std::abs(dir.dot(b.facets[id].normal())), 0.25);
        footprints[id].push_back(sv.gt_depth.at(x, y) / (K.fx * cosi));
      }
  }
  for (std::size_t k = 0; k < b.facets.size(); ++k) {
    double fp = 0.3 / K.fx;
    auto& v = footprints[k];
    if (!v.empty()) {
      const auto q = v.begin() + static_cast<std::ptrdiff_t>(0.5 * static_cast<double>(v.size() - 1));
      std::nth_element(v.begin(), q, v.end());
      fp = std::max(fp, *q);
    }
    Facet& f = b.facets[k];
    f.base_color = Vec3(uni(0.3, 0.7), uni(0.3, 0.7), uni(0.3, 0.7));
    constexpr int nw = 6;
    constexpr double lo = 12.0, hi = 48.0;
    for (int w = 0; w < nw; ++w) {
      const double px = uni(lo, hi);
      f.wave.push_back(Vec3(uni(0.0, std::numbers::pi), px * fp, uni(0.0, 2.0 * std::numbers::pi)));
      f.wave_amp.push_back(Vec3(uni(0.03, 0.08), uni(0.03, 0.08), uni(0.03, 0.08)));
    }
  }

  // Surface Gaussians: flat discs on a grid whose spacing follows the finest
  // pixel footprint over all cameras; only discs seen by some camera are kept.
  std::vector<Gaussian> gs;
  for (std::size_t k = 0; k < b.facets.size(); ++k) {
    const Facet& f = b.facets[k];
    const Vec3 n = f.normal();
    constexpr double kPatch = 0.5;
    const int ps = std::max(1, static_cast<int>(std::ceil(f.len_s / kPatch)));
    const int pt = std::max(1, static_cast<int>(std::ceil(f.len_t / kPatch)));
    for (int a = 0; a < ps; ++a)
      for (int c = 0; c < pt; ++c) {
        const double s0 = f.len_s * a / ps, s1 = f.len_s * (a + 1) / ps;
        const double t0 = f.len_t * c / pt, t1 = f.len_t * (c + 1) / pt;
        Facet patch = f;
        patch.origin = f.origin + s0 * f.axis_s + t0 * f.axis_t;
        patch.len_s = s1 - s0;
        patch.len_t = t1 - t0;
        double d = std::numeric_limits<double>::infinity();
        for (const auto& cc : centers) d = std::min(d, detail::point_facet_distance(cc, patch));
        const double spacing = 0.6 * std::max(d, 0.3) / K.fx;
        const int ns = std::max(1, static_cast<int>(std::ceil(patch.len_s / spacing)));
        const int nt = std::max(1, static_cast<int>(std::ceil(patch.len_t / spacing)));
        const double hs = patch.len_s / ns, ht = patch.len_t / nt;
        const double sig = 0.6 * std::max(hs, ht);
        const Mat3 cov = sig * sig * (f.axis_s * f.axis_s.transpose() + f.axis_t * f.axis_t.transpose()) +
                         1e-6 * sig * sig * n * n.transpose();
        for (int i = 0; i < ns; ++i)
          for (int j = 0; j < nt; ++j) {
            const double s = s0 + (i + 0.5) * hs, t = t0 + (j + 0.5) * ht;
            const Vec3 X = f.origin + s * f.axis_s + t * f.axis_t;
            bool seen = false;
            for (int v = 0; v < spec.views && !seen; ++v) {
              const Vec3 Z = poses[v].transform(X);
              if (!(Z.z() > 0.05)) continue;
              const double u = K.fx * Z.x() / Z.z() + K.cx, w = K.fy * Z.y() / Z.z() + K.cy;
              if (u < -2.0 || w < -2.0 || u > K.width + 1.0 || w > K.height + 1.0) continue;
              const int ui = std::clamp(static_cast<int>(std::lround(u)), 0, K.width - 1);
              const int wi = std::clamp(static_cast<int>(std::lround(w)), 0, K.height - 1);
              const auto& gd = b.views[v].gt_depth;
              seen = !gd.is_valid(ui, wi) || Z.z() <= gd.at(ui, wi) * 1.02 + 4.0 * sig;
            }
            if (!seen) continue;
            Gaussian g;
            g.center = X;
            g.opacity = 0.99;
            g.covariance = cov;
            g.color = f.color(s, t);
            g.view = 0;
            gs.push_back(g);
          }
      }
  }
  b.scene = merge_scene({gs});

  // Images through the rasterizer.
  RenderConfig rc;
  for (auto& sv : b.views) sv.image = render(b.scene, sv.pose, K, rc).color;

  // Provided depth: multiplicative noise on context views.
  double dlo = std::numeric_limits<double>::infinity(), dhi = 0.0;
  for (auto& sv : b.views) {
    sv.depth = sv.gt_depth;
    if (!sv.is_target && spec.noise.depth_sigma > 0.0)
      for (std::size_t i = 0; i < sv.depth.depth.size(); ++i)
        if (sv.depth.valid[i]) sv.depth.depth[i] *= std::max(0.05, 1.0 + spec.noise.depth_sigma * N(rng));
    for (std::size_t i = 0; i < sv.depth.depth.size(); ++i)
      if (sv.depth.valid[i]) {
        dlo = std::min(dlo, sv.depth.depth[i]);
        dhi = std::max(dhi, sv.depth.depth[i]);
      }
  }
  b.near = std::max(0.1, 0.8 * dlo);
  b.far = 1.25 * dhi;

  // Correspondences between context views.
  std::vector<int> ctx;
  for (int v = 0; v < spec.views; ++v)
    if (!b.views[v].is_target) ctx.push_back(v);
  for (std::size_t a = 0; a < ctx.size(); ++a)
    for (std::size_t c = a + 1; c < ctx.size(); ++c) {
      if (spec.adjacent_pairs_only && c != a + 1) continue;
      const int i = ctx[a], j = ctx[c];
      const auto& vi = b.views[i];
      const auto& vj = b.views[j];
      CorrespondenceSet set;
      set.i = i;
      set.j = j;
      const int M = spec.matches_per_pair;
      const int outliers = static_cast<int>(std::floor(spec.noise.outlier_fraction * M));
      const int inliers = M - outliers;
      const Pose rel = relative_pose(vi.pose, vj.pose);
      std::vector<std::uint8_t> used(static_cast<std::size_t>(K.width) * K.height, 0);
      int attempts = 0;
      while (static_cast<int>(set.matches.size()) < inliers && attempts < 200 * std::max(M, 1)) {
        ++attempts;
        const int x = static_cast<int>(U(rng) * K.width), y = static_cast<int>(U(rng) * K.height);
        if (x >= K.width || y >= K.height || !vi.gt_depth.is_valid(x, y)) continue;
        if (used[static_cast<std::size_t>(y) * K.width + x]) continue;
        const int fid = vi.facet[static_cast<std::size_t>(y) * K.width + x];
        const Vec3 Z = rel.transform(backproject(Vec2(x, y), vi.gt_depth.at(x, y), K));
        if (!(Z.z() > 1e-3)) continue;
        const Vec2 q(K.fx * Z.x() / Z.z() + K.cx, K.fy * Z.y() / Z.z() + K.cy);
        if (!(q.x() >= 1.0 && q.y() >= 1.0 && q.x() <= K.width - 2.0 && q.y() <= K.height - 2.0)) continue;
        // Visible in j and all four depth-lookup neighbors on the same facet.
        const int u0 = static_cast<int>(std::floor(q.x())), v0 = static_cast<int>(std::floor(q.y()));
        bool ok = true;
        for (int dv = 0; dv <= 1 && ok; ++dv)
          for (int du = 0; du <= 1 && ok; ++du)
            ok = vj.facet[static_cast<std::size_t>(v0 + dv) * K.width + u0 + du] == fid;
        if (!ok) continue;
        const auto dq = vj.gt_depth.sample(q);
        if (!dq || std::abs(*dq - Z.z()) > 1e-6 * Z.z()) continue;
        Match m;
        m.p = Vec2(x, y);
        m.q = q;
        if (spec.noise.match_sigma > 0.0) {
          m.q += spec.noise.match_sigma * Vec2(N(rng), N(rng));
          m.q = m.q.cwiseMax(Vec2(0.0, 0.0)).cwiseMin(Vec2(K.width - 1.0, K.height - 1.0));
        }
        m.confidence = 1.0;
        used[static_cast<std::size_t>(y) * K.width + x] = 1;
        set.matches.push_back(m);
      }
      std::vector<std::uint8_t> flags(set.matches.size(), 0);
      for (int k = 0; k < outliers; ++k) {
        Match m;
        int x, y;
        do {
          x = std::min(K.width - 1, static_cast<int>(U(rng) * K.width));
          y = std::min(K.height - 1, static_cast<int>(U(rng) * K.height));
        } while (!vi.gt_depth.is_valid(x, y) || used[static_cast<std::size_t>(y) * K.width + x]);
        used[static_cast<std::size_t>(y) * K.width + x] = 1;
        m.p = Vec2(x, y);
        m.q = Vec2(uni(0.0, K.width - 1.0), uni(0.0, K.height - 1.0));
        m.confidence = 1.0;
        // Insert at a random position so outliers are interleaved.
        const std::size_t pos = std::min(set.matches.size(), static_cast<std::size_t>(U(rng) * (set.matches.size() + 1)));
        set.matches.insert(set.matches.begin() + static_cast<std::ptrdiff_t>(pos), m);
        flags.insert(flags.begin() + static_cast<std::ptrdiff_t>(pos), 1);
      }
      b.matches.push_back(std::move(set));
      b.outlier_rows.push_back(std::move(flags));
    }
  return b;
}

/// Writes images (PNG), depths (PFM), poses, matches and a manifest.
inline SceneManifest write_bundle(const SynthBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SceneManifest m;
  m.base_dir = dir;
  m.near = b.near;
  m.far = b.far;
  for (std::size_t v = 0; v < b.views.size(); ++v) {
    const auto& sv = b.views[v];
    const std::string id = "view_" + std::to_string(v);
    save_image_png(sv.image, dir / (id + ".png"));
    save_image_pfm(sv.image, dir / (id + "_image.pfm"));
    save_depth(sv.depth, dir / (id + "_depth.pfm"));
    save_depth(sv.gt_depth, dir / (id + "_gt_depth.pfm"));
    save_poses({sv.pose}, dir / (id + "_pose.txt"));
    ViewEntry e;
    e.image = id + "_image.pfm";
    e.depth = id + "_depth.pfm";
    e.intrinsics = sv.intrinsics;
    e.gt_pose = id + "_pose.txt";
    e.is_target = sv.is_target;
    m.views.push_back(e);
  }
  for (const auto& set : b.matches) {
    const std::string name = "matches_" + std::to_string(set.i) + "_" + std::to_string(set.j) + ".txt";
    save_correspondences(set, dir / name);
    m.pairs.push_back({set.i, set.j, name});
  }
  save_poses(b.poses(), dir / "gt_poses.txt");
  save_manifest(m, dir / "manifest.json");
  nlohmann::json info = {{"seed", b.seed}, {"spec", synth_spec_to_json(b.spec)}, {"gaussians", b.scene.size()}};
  auto os = detail::open_out(dir / "synth_info.json", false);
  os << info.dump(2) << "\n";
  return m;
}

}  // namespace splatalign
