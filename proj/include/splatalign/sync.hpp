#pragma once

// Transformation synchronization: spectral rotation averaging by power
// iteration, then weighted linear least squares for camera centers. The
// gauge is fixed to view 0 (identity pose).

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "splatalign/coarse.hpp"
#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"

namespace splatalign {

struct PoseGraphEdge {
  int i = 0;
  int j = 0;
  Pose pose_ij;  // camera-i -> camera-j
  double weight = 1.0;
};

struct PoseGraph {
  int view_count = 0;
  std::vector<PoseGraphEdge> edges;

  void validate() const {
    if (view_count < 1) fail(ErrorCode::kValidation, "pose graph needs at least one view");
    std::vector<std::pair<int, int>> e;
    for (const auto& edge : edges) {
      if (edge.i < 0 || edge.j < 0 || edge.i >= view_count || edge.j >= view_count || edge.i == edge.j)
        fail(ErrorCode::kIndexOutOfRange, "pose graph edge references invalid views");
      if (!(edge.weight > 0.0) || !std::isfinite(edge.weight))
        fail(ErrorCode::kValidation, "pose graph edge weights must be finite and positive");
      e.emplace_back(edge.i, edge.j);
    }
    if (!is_connected(view_count, e)) fail(ErrorCode::kUnsolvableScene, "pose graph is disconnected");
  }
};

/// Builds the graph from successful pairwise estimates. Edge weight is the
/// inlier support normalized by the pair's match count.
inline PoseGraph pose_graph_from_pairs(int view_count, const std::vector<PairwisePoseEstimate>& pairs) {
  PoseGraph g;
  g.view_count = view_count;
  for (const auto& p : pairs) {
    if (p.failed || p.match_count == 0 || !(p.support_weight > 0.0)) continue;
    g.edges.push_back({p.i, p.j, p.pose_ij, p.support_weight / static_cast<double>(p.match_count)});
  }
  return g;
}

struct SyncParams {
  int max_power_iters = 1000;
  double convergence_tol = 1e-10;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (max_power_iters < 1 || !(convergence_tol > 0.0)) fail(ErrorCode::kValidation, "invalid sync parameters");
  }
};

struct RotationSyncResult {
  std::vector<Mat3> rotations;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Orthonormal basis of span(X) with a sign convention (positive diagonal of
// the triangular factor) so iterates are comparable across steps.
inline Eigen::MatrixXd orthonormalize_columns(const Eigen::MatrixXd& X) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(X.rows(), X.cols());
  const Eigen::MatrixXd R = qr.matrixQR().topRows(X.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    if (R(c, c) < 0.0) Q.col(c) = -Q.col(c);
  return Q;
}

}  // namespace detail

/// Spectral rotation synchronization. Block (i, j) of the 3N x 3N matrix is
/// w_ij * R_ij^T (block (j, i) its transpose); the matrix is shifted by the
/// largest weighted degree so its spectrum is non-negative, which keeps the
/// power iteration convergent on bipartite graphs (e.g. two views).
inline RotationSyncResult sync_rotations(const PoseGraph& graph, const SyncParams& params) {
  graph.validate();
  params.validate();
  const int n = graph.view_count;
  RotationSyncResult out;
  if (n == 1) {
    out.rotations = {Mat3::Identity()};
    out.converged = true;
    return out;
  }
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  std::vector<double> degree(n, 0.0);
  for (const auto& e : graph.edges) {
    M.block<3, 3>(3 * e.i, 3 * e.j) += e.weight * e.pose_ij.rotation.transpose();
    M.block<3, 3>(3 * e.j, 3 * e.i) += e.weight * e.pose_ij.rotation;
    degree[e.i] += e.weight;
    degree[e.j] += e.weight;
  }
  const double shift = *std::max_element(degree.begin(), degree.end());
  M += shift * Eigen::MatrixXd::Identity(3 * n, 3 * n);

  std::mt19937_64 rng(params.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd X(3 * n, 3);
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < 3; ++c) X(r, c) = normal(rng);
  X = detail::orthonormalize_columns(X);

  for (out.iterations = 1; out.iterations <= params.max_power_iters; ++out.iterations) {
    Eigen::MatrixXd next = detail::orthonormalize_columns(M * X);
    const double change = (next - X).norm();
    X = std::move(next);
    if (change < params.convergence_tol) {
      out.converged = true;
      break;
    }
  }
  out.iterations = std::min(out.iterations, params.max_power_iters);

  // The basis is determined up to a 3x3 orthogonal mixing; flip the sign if
  // that mixing is a reflection.
  double det_sum = 0.0;
  for (int v = 0; v < n; ++v) det_sum += X.block<3, 3>(3 * v, 0).determinant();
  if (det_sum < 0.0) X = -X;

  std::vector<Mat3> projected(n);
  for (int v = 0; v < n; ++v) projected[v] = project_to_so3(X.block<3, 3>(3 * v, 0));
  out.rotations.resize(n);
  out.rotations[0] = Mat3::Identity();
  const Mat3 gauge = projected[0].transpose();
  for (int v = 1; v < n; ++v) out.rotations[v] = project_to_so3(projected[v] * gauge);
  return out;
}

/// Weighted least squares over camera centers with center 0 pinned at the
/// origin. Edge (i, j) predicts c_j = c_i - R_i^T R_ij^T t_ij.
inline std::vector<Vec3> sync_translations(const PoseGraph& graph, const std::vector<Mat3>& rotations) {
  graph.validate();
  const int n = graph.view_count;
  if (static_cast<int>(rotations.size()) != n) fail(ErrorCode::kDimensionMismatch, "rotation count != view count");
  std::vector<Vec3> t(n, Vec3::Zero());
  if (n == 1) return t;
  const int m = n - 1;  // unknown centers 1..n-1
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m, 3);
  for (const auto& e : graph.edges) {
    const Vec3 d = -rotations[e.i].transpose() * e.pose_ij.rotation.transpose() * e.pose_ij.translation;
    // residual: c_j - c_i - d
    const int a = e.i - 1, c = e.j - 1;
    if (a >= 0) {
      L(a, a) += e.weight;
      b.row(a) -= e.weight * d.transpose();
    }
    if (c >= 0) {
      L(c, c) += e.weight;
      b.row(c) += e.weight * d.transpose();
    }
    if (a >= 0 && c >= 0) {
      L(a, c) -= e.weight;
      L(c, a) -= e.weight;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(L);
  const auto diag = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || diag.minCoeff() <= 1e-12 * std::max(1.0, diag.maxCoeff()))
    fail(ErrorCode::kNumericalRank, "translation system is rank deficient");
  const Eigen::MatrixXd centers = ldlt.solve(b);
  for (int v = 1; v < n; ++v) t[v] = -rotations[v] * centers.row(v - 1).transpose();
  return t;
}

struct SyncResult {
  std::vector<Pose> poses;
  int iterations = 0;
  bool converged = false;
};

inline SyncResult synchronize(const PoseGraph& graph, const SyncParams& params) {
  const auto rot = sync_rotations(graph, params);
  const auto trans = sync_translations(graph, rot.rotations);
  SyncResult out;
  out.iterations = rot.iterations;
  out.converged = rot.converged;
  out.poses.resize(graph.view_count);
  for (int v = 0; v < graph.view_count; ++v) out.poses[v] = {rot.rotations[v], trans[v]};
  out.poses[0] = Pose::identity();
  return out;
}

/// Weighted least-squares objective minimized by sync_translations, for a
/// given set of centers.
inline double translation_residual(const PoseGraph& graph, const std::vector<Mat3>& rotations,
                                   const std::vector<Vec3>& centers) {
  double r = 0.0;
  for (const auto& e : graph.edges) {
    const Vec3 d = -rotations[e.i].transpose() * e.pose_ij.rotation.transpose() * e.pose_ij.translation;
    r += e.weight * (centers[e.j] - centers[e.i] - d).squaredNorm();
  }
  return r;
}

}  // namespace splatalign
