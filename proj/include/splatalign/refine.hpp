#pragma once

// Fine alignment as test-time optimization. The variables are per-view pose
// offsets (a 6D rotation delta added to the encoded rotation, and a
// translation delta) and per-view depth offset fields on a coarse grid. The
// geometric objective is
//
//   w_2d3d * L_2D-3D + lambda_3d3d * L_3D-3D
//
// where L_2D-3D is the mean Huber reprojection error of matches lifted from
// view i and projected into view j, and L_3D-3D the mean distance between the
// two lifted Gaussian centers of each match. Both come with analytic
// gradients.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "splatalign/coarse.hpp"
#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/io.hpp"
#include "splatalign/photometric.hpp"
#include "splatalign/raster.hpp"
#include "splatalign/scene.hpp"
#include "splatalign/sync.hpp"

namespace splatalign {

/// Depth offsets on a grid with nodes every `factor` pixels; values between
/// nodes are bilinear.
struct DepthOffsetField {
  int factor = 8;
  int grid_width = 0;
  int grid_height = 0;
  std::vector<double> values;

  static DepthOffsetField zeros(int width, int height, int factor) {
    if (factor < 1) fail(ErrorCode::kValidation, "depth grid factor must be >= 1");
    DepthOffsetField f;
    f.factor = factor;
    f.grid_width = (width - 1 + factor - 1) / factor + 1;
    f.grid_height = (height - 1 + factor - 1) / factor + 1;
    f.values.assign(static_cast<std::size_t>(f.grid_width) * f.grid_height, 0.0);
    return f;
  }

  struct Stencil {
    std::array<int, 4> index{};
    std::array<double, 4> weight{};
  };

  Stencil stencil(const Vec2& p) const {
    const double x = std::clamp(p.x() / factor, 0.0, static_cast<double>(grid_width - 1));
    const double y = std::clamp(p.y() / factor, 0.0, static_cast<double>(grid_height - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), grid_width - 1);
    const int y0 = std::min(static_cast<int>(std::floor(y)), grid_height - 1);
    const int x1 = std::min(x0 + 1, grid_width - 1), y1 = std::min(y0 + 1, grid_height - 1);
    const double a = x - x0, b = y - y0;
    Stencil s;
    s.index = {y0 * grid_width + x0, y0 * grid_width + x1, y1 * grid_width + x0, y1 * grid_width + x1};
    s.weight = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
    return s;
  }

  double at(const Vec2& p) const {
    const auto s = stencil(p);
    double d = 0.0;
    for (int k = 0; k < 4; ++k) d += s.weight[k] * values[s.index[k]];
    return d;
  }
};

struct PoseOffset {
  Vec6 rotation = Vec6::Zero();
  Vec3 translation = Vec3::Zero();
};

struct ObjectiveWeights {
  double lambda_3d3d = 0.05;
  double huber_delta = 1.0;  // pixels
  double lambda_ssim = 0.2;
  bool photometric = false;
  double weight_2d3d = 1.0;  // 0 removes the 2D-3D term (ablation)
};

struct ObjectiveComponents {
  double l2d3d = 0.0;
  double l3d3d = 0.0;
  double l2 = 0.0;
  double ssim_loss = 0.0;
};

inline double total_objective(const ObjectiveComponents& c, const ObjectiveWeights& w) {
  double img = w.photometric ? c.l2 + w.lambda_ssim * c.ssim_loss : 0.0;
  return img + w.weight_2d3d * c.l2d3d + w.lambda_3d3d * c.l3d3d;
}

inline double huber(double r, double delta) {
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

// ---------------------------------------------------------------------------

struct RefineView {
  CameraIntrinsics intrinsics;
  const DepthMap* depth = nullptr;  // base depth
  Pose base_pose;
};

/// Matches with their base-depth lookups precomputed.
struct PreparedMatch {
  int vi = 0, vj = 0;
  Vec2 p, q;
  std::optional<double> base_i, base_j;
  DepthOffsetField::Stencil stencil_i, stencil_j;
};

struct RefineProblem {
  std::vector<RefineView> views;
  std::vector<PreparedMatch> matches;
  int grid_factor = 8;

  int view_count() const { return static_cast<int>(views.size()); }
};

inline RefineProblem make_refine_problem(std::vector<RefineView> views, const std::vector<CorrespondenceSet>& sets,
                                         int grid_factor) {
  RefineProblem prob;
  prob.views = std::move(views);
  prob.grid_factor = grid_factor;
  const int n = prob.view_count();
  for (const auto& set : sets) {
    if (set.i < 0 || set.j < 0 || set.i >= n || set.j >= n) fail(ErrorCode::kIndexOutOfRange, "match set references unknown view");
    const auto ref_i = DepthOffsetField::zeros(prob.views[set.i].intrinsics.width, prob.views[set.i].intrinsics.height, grid_factor);
    const auto ref_j = DepthOffsetField::zeros(prob.views[set.j].intrinsics.width, prob.views[set.j].intrinsics.height, grid_factor);
    for (const auto& m : set.matches) {
      PreparedMatch pm;
      pm.vi = set.i;
      pm.vj = set.j;
      pm.p = m.p;
      pm.q = m.q;
      pm.base_i = prob.views[set.i].depth->sample(m.p);
      pm.base_j = prob.views[set.j].depth->sample(m.q);
      pm.stencil_i = ref_i.stencil(m.p);
      pm.stencil_j = ref_j.stencil(m.q);
      prob.matches.push_back(pm);
    }
  }
  return prob;
}

/// Optimization state plus its flat parameter layout: for each view 9 pose
/// values (6D delta, translation delta), then every view's depth grid.
struct RefineState {
  std::vector<PoseOffset> pose;
  std::vector<DepthOffsetField> depth;

  static RefineState zeros(const RefineProblem& prob) {
    RefineState s;
    s.pose.resize(prob.views.size());
    for (const auto& v : prob.views)
      s.depth.push_back(DepthOffsetField::zeros(v.intrinsics.width, v.intrinsics.height, prob.grid_factor));
    return s;
  }

  std::size_t pose_offset(int view) const { return static_cast<std::size_t>(9) * view; }
  std::size_t depth_offset(int view) const {
    std::size_t o = 9 * pose.size();
    for (int v = 0; v < view; ++v) o += depth[v].values.size();
    return o;
  }
  std::size_t size() const { return depth_offset(static_cast<int>(depth.size())); }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd x(size());
    for (std::size_t v = 0; v < pose.size(); ++v) {
      x.segment<6>(9 * v) = pose[v].rotation;
      x.segment<3>(9 * v + 6) = pose[v].translation;
    }
    std::size_t o = 9 * pose.size();
    for (const auto& d : depth)
      for (double val : d.values) x[o++] = val;
    return x;
  }

  void assign(const Eigen::VectorXd& x) {
    for (std::size_t v = 0; v < pose.size(); ++v) {
      pose[v].rotation = x.segment<6>(9 * v);
      pose[v].translation = x.segment<3>(9 * v + 6);
    }
    std::size_t o = 9 * pose.size();
    for (auto& d : depth)
      for (double& val : d.values) val = x[o++];
  }
};

/// Current pose of a view. A view with all-zero offsets keeps its base pose
/// bit-exactly.
inline Pose current_pose(const RefineProblem& prob, const RefineState& s, int v) {
  const Pose& base = prob.views[v].base_pose;
  const auto& off = s.pose[v];
  if (off.rotation.isZero(0.0) && off.translation.isZero(0.0)) return base;
  Rotation6D r = rot6d_encode(base.rotation);
  r.values += off.rotation;
  return {rot6d_decode(r), base.translation + off.translation};
}

inline std::vector<Pose> current_poses(const RefineProblem& prob, const RefineState& s) {
  std::vector<Pose> out;
  for (int v = 0; v < prob.view_count(); ++v) out.push_back(current_pose(prob, s, v));
  return out;
}

/// Refined depth map D + upsample(offsets) at full resolution; pixels whose
/// refined depth is not positive become invalid.
inline DepthMap refined_depth(const DepthMap& base, const DepthOffsetField& off) {
  DepthMap out(base.width, base.height);
  for (int v = 0; v < base.height; ++v)
    for (int u = 0; u < base.width; ++u)
      if (base.is_valid(u, v)) out.set(u, v, base.at(u, v) + off.at(Vec2(u, v)));
  return out;
}

struct LossResult {
  double value = 0.0;
  Eigen::VectorXd gradient;
  std::size_t counted = 0;
  std::size_t skipped_behind = 0;
  std::size_t skipped_invalid = 0;
};

namespace detail {

struct ViewGrad {
  Mat3 dR = Mat3::Zero();
  Vec3 dt = Vec3::Zero();
};

inline double stencil_value(const DepthOffsetField& f, const DepthOffsetField::Stencil& s) {
  double d = 0.0;
  for (int k = 0; k < 4; ++k) d += s.weight[k] * f.values[s.index[k]];
  return d;
}

// Scatters per-view dL/dR, dL/dt and depth-node gradients into the flat
// gradient, chaining rotations through the 6D decode Jacobian.
inline void finish_gradient(const RefineProblem& prob, const RefineState& s, const std::vector<ViewGrad>& vg,
                            Eigen::VectorXd& grad) {
  for (int v = 0; v < prob.view_count(); ++v) {
    Rotation6D r = rot6d_encode(prob.views[v].base_pose.rotation);
    r.values += s.pose[v].rotation;
    const auto J = rot6d_decode_jacobian(r);
    const Eigen::Map<const Eigen::Matrix<double, 9, 1>> dR(vg[v].dR.data());  // column-major
    grad.segment<6>(s.pose_offset(v)) = J.transpose() * dR;
    grad.segment<3>(s.pose_offset(v) + 6) = vg[v].dt;
  }
}

}  // namespace detail

/// Mean Huber reprojection loss: lift p with the refined depth of view i,
/// move it into view j through the current absolute poses, project, compare
/// with q. Points landing behind camera j are skipped for this evaluation.
inline LossResult loss_2d3d(const RefineProblem& prob, const RefineState& s, double huber_delta) {
  LossResult out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()));
  const auto poses = current_poses(prob, s);
  std::vector<detail::ViewGrad> vg(prob.views.size());
  std::vector<std::size_t> depth_base(prob.views.size());
  for (int v = 0; v < prob.view_count(); ++v) depth_base[v] = s.depth_offset(v);

  for (const auto& m : prob.matches) {
    if (!m.base_i) {
      ++out.skipped_invalid;
      continue;
    }
    const double d = *m.base_i + detail::stencil_value(s.depth[m.vi], m.stencil_i);
    if (!(d > 0.0)) {
      ++out.skipped_invalid;
      continue;
    }
    const auto& Ki = prob.views[m.vi].intrinsics;
    const auto& Kj = prob.views[m.vj].intrinsics;
    const Pose& Pi = poses[m.vi];
    const Pose& Pj = poses[m.vj];
    const Vec3 ray = pixel_ray(m.p, Ki);
    const Vec3 X = d * ray;
    const Vec3 Xc = X - Pi.translation;
    const Vec3 Y = Pi.rotation.transpose() * Xc;
    const Vec3 Z = Pj.rotation * Y + Pj.translation;
    if (!(Z.z() > 1e-9)) {
      ++out.skipped_behind;
      continue;
    }
    const double iz = 1.0 / Z.z();
    const Vec2 proj(Kj.fx * Z.x() * iz + Kj.cx, Kj.fy * Z.y() * iz + Kj.cy);
    const Vec2 r = proj - m.q;
    const double rn = r.norm();
    out.value += huber(rn, huber_delta);
    ++out.counted;
    const Vec2 g_r = rn <= huber_delta ? r : Vec2(huber_delta * r / rn);
    Vec3 g_Z(Kj.fx * iz * g_r.x(), Kj.fy * iz * g_r.y(),
             -(Kj.fx * Z.x() * g_r.x() + Kj.fy * Z.y() * g_r.y()) * iz * iz);
    vg[m.vj].dt += g_Z;
    vg[m.vj].dR += g_Z * Y.transpose();
    const Vec3 g_Y = Pj.rotation.transpose() * g_Z;
    vg[m.vi].dt -= Pi.rotation * g_Y;
    vg[m.vi].dR += Xc * g_Y.transpose();
    const double g_d = (Pi.rotation * g_Y).dot(ray);
    for (int k = 0; k < 4; ++k)
      out.gradient[depth_base[m.vi] + m.stencil_i.index[k]] += g_d * m.stencil_i.weight[k];
  }
  detail::finish_gradient(prob, s, vg, out.gradient);
  if (out.counted > 0) {
    out.value /= static_cast<double>(out.counted);
    out.gradient /= static_cast<double>(out.counted);
  }
  return out;
}

/// Smoothing of the Euclidean distance at zero: sqrt(|d|^2 + eps^2) - eps,
/// exactly zero for coincident centers.
inline constexpr double kDistanceEpsilon = 1e-6;

/// Mean distance between the world-frame Gaussian centers of both endpoints
/// of every match. Symmetric in the roles of i and j.
inline LossResult loss_3d3d(const RefineProblem& prob, const RefineState& s) {
  LossResult out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()));
  const auto poses = current_poses(prob, s);
  std::vector<detail::ViewGrad> vg(prob.views.size());
  constexpr double eps2 = kDistanceEpsilon * kDistanceEpsilon;

  for (const auto& m : prob.matches) {
    if (!m.base_i || !m.base_j) {
      ++out.skipped_invalid;
      continue;
    }
    const double di = *m.base_i + detail::stencil_value(s.depth[m.vi], m.stencil_i);
    const double dj = *m.base_j + detail::stencil_value(s.depth[m.vj], m.stencil_j);
    if (!(di > 0.0) || !(dj > 0.0)) {
      ++out.skipped_invalid;
      continue;
    }
    const Vec3 ray_i = pixel_ray(m.p, prob.views[m.vi].intrinsics);
    const Vec3 ray_j = pixel_ray(m.q, prob.views[m.vj].intrinsics);
    const Pose& Pi = poses[m.vi];
    const Pose& Pj = poses[m.vj];
    const Vec3 Xi = di * ray_i - Pi.translation;
    const Vec3 Xj = dj * ray_j - Pj.translation;
    const Vec3 diff = Pi.rotation.transpose() * Xi - Pj.rotation.transpose() * Xj;
    const double len = std::sqrt(diff.squaredNorm() + eps2);
    out.value += len - kDistanceEpsilon;
    ++out.counted;
    const Vec3 g = diff / len;  // d/d(mu_i); d/d(mu_j) = -g
    // mu = R^T (X - t): dL/dR = (X - t) g^T, dL/dt = -R g, dL/dX = R g
    vg[m.vi].dR += Xi * g.transpose();
    vg[m.vi].dt -= Pi.rotation * g;
    vg[m.vj].dR -= Xj * g.transpose();
    vg[m.vj].dt += Pj.rotation * g;
    const double g_di = (Pi.rotation * g).dot(ray_i);
    const double g_dj = -(Pj.rotation * g).dot(ray_j);
    const std::size_t oi = s.depth_offset(m.vi), oj = s.depth_offset(m.vj);
    for (int k = 0; k < 4; ++k) {
      out.gradient[oi + m.stencil_i.index[k]] += g_di * m.stencil_i.weight[k];
      out.gradient[oj + m.stencil_j.index[k]] += g_dj * m.stencil_j.weight[k];
    }
  }
  detail::finish_gradient(prob, s, vg, out.gradient);
  if (out.counted > 0) {
    out.value /= static_cast<double>(out.counted);
    out.gradient /= static_cast<double>(out.counted);
  }
  return out;
}

struct GeometricObjective {
  double value = 0.0;
  ObjectiveComponents components;
  Eigen::VectorXd gradient;
};

inline GeometricObjective geometric_objective(const RefineProblem& prob, const RefineState& s, const ObjectiveWeights& w) {
  GeometricObjective out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()));
  if (w.weight_2d3d != 0.0) {
    const auto a = loss_2d3d(prob, s, w.huber_delta);
    out.components.l2d3d = a.value;
    out.gradient += w.weight_2d3d * a.gradient;
  } else {
    out.components.l2d3d = loss_2d3d(prob, s, w.huber_delta).value;
  }
  if (w.lambda_3d3d != 0.0) {
    const auto b = loss_3d3d(prob, s);
    out.components.l3d3d = b.value;
    out.gradient += w.lambda_3d3d * b.gradient;
  } else {
    out.components.l3d3d = loss_3d3d(prob, s).value;
  }
  ObjectiveWeights geometric = w;
  geometric.photometric = false;
  out.value = total_objective(out.components, geometric);
  return out;
}

// ---------------------------------------------------------------------------
// Fine alignment

struct FineAlignParams {
  int rounds = 2;
  int steps = 300;
  double lr_pose = 1e-3;
  double lr_depth = 1e-2;
  int depth_grid_factor = 8;
  ObjectiveWeights weights;
  bool refine_reference_depth = false;  // view 0 depth fixes the metric scale by default
  bool photometric_polish = false;
  int polish_steps = 50;
  int polish_downscale = 4;
  double divergence_factor = 10.0;
  double divergence_floor = 1.0;  // objectives below this never count as diverged
  int monotone_window = 50;
  // Stop a round once the objective is this small. Adam normalizes step sizes,
  // so at an exact optimum it would otherwise amplify round-off gradients.
  double converged_objective = 1e-14;
  RansacParams ransac;
  SyncParams sync;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct RoundReport {
  std::vector<double> objective;  // before every step, plus the final value
  ObjectiveComponents initial, final;
  std::size_t non_monotone_windows = 0;
  bool resynced = false;
  bool resync_failed = false;
  std::string resync_note;
};

struct FineAlignReport {
  std::vector<RoundReport> rounds;
  std::vector<double> polish_objective;
  std::size_t depth_clamps = 0;
  bool non_monotone = false;

  void write(std::ostream& os) const;
};

inline void FineAlignReport::write(std::ostream& os) const {
  os << std::setprecision(17);
  os << "rounds " << rounds.size() << "\n";
  os << "depth_clamps " << depth_clamps << "\n";
  os << "non_monotone " << (non_monotone ? 1 : 0) << "\n";
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    const auto& rr = rounds[r];
    os << "round " << r << "\n";
    os << "  initial l2d3d " << rr.initial.l2d3d << " l3d3d " << rr.initial.l3d3d << "\n";
    os << "  final l2d3d " << rr.final.l2d3d << " l3d3d " << rr.final.l3d3d << "\n";
    os << "  non_monotone_windows " << rr.non_monotone_windows << "\n";
    os << "  resynced " << (rr.resynced ? 1 : 0) << " resync_failed " << (rr.resync_failed ? 1 : 0);
    if (!rr.resync_note.empty()) os << " note \"" << rr.resync_note << "\"";
    os << "\n  objective";
    for (double v : rr.objective) os << " " << v;
    os << "\n";
  }
  os << "polish_objective";
  for (double v : polish_objective) os << " " << v;
  os << "\n";
}

struct FineAlignResult {
  std::vector<Pose> poses;
  std::vector<DepthMap> depths;
  RefineState state;
  FineAlignReport report;
};

namespace detail {

// Parameters the optimizer may move: pose offsets of views 1.., depth grids
// of views 1.. (and of view 0 when requested).
inline std::vector<std::uint8_t> trainable_mask(const RefineState& s, bool refine_reference_depth) {
  std::vector<std::uint8_t> mask(s.size(), 1);
  for (std::size_t k = 0; k < 9; ++k) mask[k] = 0;
  if (!refine_reference_depth)
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(s.depth_offset(0)), s.depth[0].values.size(), 0);
  return mask;
}

inline double min_valid_depth(const DepthMap& d) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.depth.size(); ++i)
    if (d.valid[i]) m = std::min(m, d.depth[i]);
  return std::isfinite(m) ? m : 1.0;
}

}  // namespace detail

/// Runs `steps` Adam iterations with cosine-decayed learning rates on the
/// geometric objective. Depth offsets are clamped at -0.5 * (smallest base
/// depth of the view), which keeps every refined depth positive.
inline RoundReport optimize_round(const RefineProblem& prob, RefineState& state, const FineAlignParams& params,
                                  std::size_t& clamp_count) {
  RoundReport rep;
  const auto mask = detail::trainable_mask(state, params.refine_reference_depth);
  Eigen::VectorXd x = state.flatten();
  const Eigen::Index n = x.size();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n), m2 = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd lr(n), lower(n);
  const std::size_t depth_start = state.depth_offset(0);
  for (Eigen::Index k = 0; k < n; ++k) {
    lr[k] = static_cast<std::size_t>(k) < depth_start ? params.lr_pose : params.lr_depth;
    lower[k] = -std::numeric_limits<double>::infinity();
  }
  for (int v = 0; v < prob.view_count(); ++v) {
    const double floor_v = -0.5 * detail::min_valid_depth(*prob.views[v].depth);
    for (std::size_t k = state.depth_offset(v); k < state.depth_offset(v) + state.depth[v].values.size(); ++k)
      lower[static_cast<Eigen::Index>(k)] = floor_v;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  auto obj = geometric_objective(prob, state, params.weights);
  rep.initial = obj.components;
  const double initial = obj.value;
  const double limit = params.divergence_factor * std::max(initial, params.divergence_floor);
  for (int step = 0; step < params.steps; ++step) {
    if (obj.value <= params.converged_objective) break;
    rep.objective.push_back(obj.value);
    if (obj.value > limit)
      fail(ErrorCode::kDivergence, "objective " + std::to_string(obj.value) + " exceeds " +
                                       std::to_string(params.divergence_factor) + "x initial " + std::to_string(initial) +
                                       " at step " + std::to_string(step));
    const double decay = 0.5 * (1.0 + std::cos(std::numbers::pi * step / params.steps));
    const double t = step + 1;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!mask[k]) continue;
      const double g = obj.gradient[k];
      m1[k] = beta1 * m1[k] + (1 - beta1) * g;
      m2[k] = beta2 * m2[k] + (1 - beta2) * g * g;
      const double mhat = m1[k] / (1 - std::pow(beta1, t));
      const double vhat = m2[k] / (1 - std::pow(beta2, t));
      x[k] -= lr[k] * decay * mhat / (std::sqrt(vhat) + adam_eps);
      if (x[k] < lower[k]) {
        x[k] = lower[k];
        ++clamp_count;
      }
    }
    state.assign(x);
    obj = geometric_objective(prob, state, params.weights);
  }
  rep.objective.push_back(obj.value);
  if (obj.value > limit)
    fail(ErrorCode::kDivergence, "objective diverged to " + std::to_string(obj.value));
  rep.final = obj.components;
  const std::size_t win = static_cast<std::size_t>(std::max(1, params.monotone_window));
  for (std::size_t k = win; k < rep.objective.size(); ++k)
    if (rep.objective[k] > rep.objective[k - win] * (1.0 + 1e-12) + 1e-15) ++rep.non_monotone_windows;
  return rep;
}

namespace detail {

// Photometric objective at reduced resolution: every view's Gaussians are
// rebuilt from its refined depth at the current pose and the merged scene is
// rendered into each view.
struct PolishContext {
  std::vector<Image> small_images;
  std::vector<DepthMap> small_depths;
  std::vector<CameraIntrinsics> small_intr;
};

inline PolishContext make_polish_context(const RefineProblem& prob, const RefineState& s, const std::vector<Image>& images,
                                         int factor) {
  PolishContext ctx;
  for (int v = 0; v < prob.view_count(); ++v) {
    ctx.small_images.push_back(downsample(images[v], factor));
    const DepthMap full = refined_depth(*prob.views[v].depth, s.depth[v]);
    const CameraIntrinsics k = prob.views[v].intrinsics.downscaled(factor);
    DepthMap small(k.width, k.height);
    for (int b = 0; b < k.height; ++b)
      for (int a = 0; a < k.width; ++a) {
        const auto d = full.sample(Vec2((a + 0.5) * factor - 0.5, (b + 0.5) * factor - 0.5));
        small.set(a, b, d ? *d : 0.0);
      }
    ctx.small_depths.push_back(std::move(small));
    ctx.small_intr.push_back(k);
  }
  return ctx;
}

inline double photometric_value(const RefineProblem& prob, const RefineState& s, const PolishContext& ctx,
                                const ObjectiveWeights& w) {
  const auto poses = current_poses(prob, s);
  std::vector<std::vector<Gaussian>> per_view;
  for (int v = 0; v < prob.view_count(); ++v) {
    const auto& k = ctx.small_intr[v];
    per_view.push_back(build_view_gaussians(ctx.small_images[v], ctx.small_depths[v], poses[v], k,
                                            constant_confidence(k.width, k.height, 1.0), 1, static_cast<std::uint32_t>(v)));
  }
  const auto scene = merge_scene(per_view);
  double img = 0.0;
  for (int v = 0; v < prob.view_count(); ++v) {
    const auto out = render(scene, poses[v], ctx.small_intr[v]);
    img += loss_photometric(out.color, ctx.small_images[v]);
    if (out.color.width >= 11 && out.color.height >= 11) img += w.lambda_ssim * loss_ssim(out.color, ctx.small_images[v]);
  }
  return img / prob.view_count();
}

}  // namespace detail

/// Pose-only polish on the full objective with the photometric term on.
/// Gradients by central differences; steps are accepted only when the
/// objective decreases, so the recorded trace is non-increasing.
inline std::vector<double> photometric_polish(const RefineProblem& prob, RefineState& state, const std::vector<Image>& images,
                                              const FineAlignParams& params) {
  const auto ctx = detail::make_polish_context(prob, state, images, params.polish_downscale);
  auto f = [&](const RefineState& s) {
    return detail::photometric_value(prob, s, ctx, params.weights) + geometric_objective(prob, s, params.weights).value;
  };
  std::vector<double> trace;
  double current = f(state);
  trace.push_back(current);
  double step = params.lr_pose;
  constexpr double h = 1e-5;
  for (int it = 0; it < params.polish_steps && step > 1e-9; ++it) {
    Eigen::VectorXd x = state.flatten();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    for (std::size_t k = 9; k < state.depth_offset(0); ++k) {
      RefineState a = state, b = state;
      Eigen::VectorXd xa = x, xb = x;
      xa[k] += h;
      xb[k] -= h;
      a.assign(xa);
      b.assign(xb);
      g[k] = (f(a) - f(b)) / (2 * h);
    }
    const double gn = g.norm();
    if (!(gn > 0.0)) break;
    RefineState trial = state;
    trial.assign(x - step * g / gn);
    const double value = f(trial);
    if (value < current) {
      state = std::move(trial);
      current = value;
      step *= 1.5;
    } else {
      step *= 0.5;
    }
    trace.push_back(current);
  }
  return trace;
}

/// Test-time fine alignment. Each round minimizes the geometric objective;
/// between rounds the pairwise poses are re-estimated from the refined depths
/// and re-synchronized, pose offsets restart from zero on the new absolutes
/// and depth offsets carry over. The result is expressed in the gauge of the
/// input (view 0 keeps its input pose exactly).
inline FineAlignResult fine_align(const std::vector<RefineView>& views, const std::vector<CorrespondenceSet>& matches,
                                  const FineAlignParams& params, const std::vector<Image>* images = nullptr) {
  if (views.empty()) fail(ErrorCode::kInvalidInput, "fine_align needs at least one view");
  if (params.rounds < 1 || params.steps < 0) fail(ErrorCode::kValidation, "fine_align needs rounds >= 1 and steps >= 0");
  RefineProblem prob = make_refine_problem(views, matches, params.depth_grid_factor);
  RefineState state = RefineState::zeros(prob);
  FineAlignResult result;
  const Pose gauge = views.front().base_pose;

  for (int round = 0; round < params.rounds; ++round) {
    auto rep = optimize_round(prob, state, params, result.report.depth_clamps);
    if (round + 1 < params.rounds && prob.view_count() > 1) {
      std::vector<DepthMap> refined;
      for (int v = 0; v < prob.view_count(); ++v) refined.push_back(refined_depth(*prob.views[v].depth, state.depth[v]));
      std::vector<PairInput> inputs;
      for (const auto& set : matches)
        inputs.push_back({&set, &refined[set.i], &refined[set.j], &prob.views[set.i].intrinsics, &prob.views[set.j].intrinsics});
      try {
        RansacParams rp = params.ransac;
        rp.rng_seed = params.seed + 7919ull * (round + 1);
        const auto pairs = estimate_all_pairs(prob.view_count(), inputs, rp, params.threads);
        SyncParams sp = params.sync;
        sp.rng_seed = params.seed + round + 1;
        const auto synced = synchronize(pose_graph_from_pairs(prob.view_count(), pairs), sp);
        for (int v = 0; v < prob.view_count(); ++v) {
          prob.views[v].base_pose = v == 0 ? gauge : pose_compose(synced.poses[v], gauge);
          state.pose[v] = PoseOffset{};
        }
        rep.resynced = true;
      } catch (const Error& e) {
        // Keep the optimized poses: fold the offsets into the base poses.
        const auto poses = current_poses(prob, state);
        for (int v = 0; v < prob.view_count(); ++v) {
          prob.views[v].base_pose = poses[v];
          state.pose[v] = PoseOffset{};
        }
        rep.resync_failed = true;
        rep.resync_note = e.what();
      }
    }
    result.report.non_monotone = result.report.non_monotone || rep.non_monotone_windows > 0;
    result.report.rounds.push_back(std::move(rep));
  }
  if (params.photometric_polish) {
    if (!images || images->size() != views.size()) fail(ErrorCode::kInvalidInput, "photometric polish needs one image per view");
    result.report.polish_objective = photometric_polish(prob, state, *images, params);
  }
  result.poses = current_poses(prob, state);
  result.poses[0] = gauge;
  for (int v = 0; v < prob.view_count(); ++v) result.depths.push_back(refined_depth(*prob.views[v].depth, state.depth[v]));
  result.state = std::move(state);
  return result;
}

}  // namespace splatalign
