#pragma once

// Pairwise relative poses from cross-view matches lifted to 3D with metric
// depth: weighted rigid registration inside a seeded 3-point RANSAC.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/io.hpp"
#include "splatalign/parallel.hpp"

namespace splatalign {

/// argmin over (R, t) of sum_k w_k |R p_k + t - q_k|^2 (weighted Kabsch, no scale).
inline Pose rigid_fit_weighted(std::span<const Vec3> P, std::span<const Vec3> Q, std::span<const double> w) {
  if (P.size() != Q.size() || P.size() != w.size()) fail(ErrorCode::kDimensionMismatch, "rigid_fit_weighted: size mismatch");
  if (P.size() < 3) fail(ErrorCode::kDegenerate, "rigid_fit_weighted: need at least 3 points");
  double wsum = 0.0;
  Vec3 pc = Vec3::Zero(), qc = Vec3::Zero();
  for (std::size_t k = 0; k < P.size(); ++k) {
    if (!(w[k] >= 0.0)) fail(ErrorCode::kInvalidInput, "rigid_fit_weighted: negative weight");
    wsum += w[k];
    pc += w[k] * P[k];
    qc += w[k] * Q[k];
  }
  if (!(wsum > 0.0)) fail(ErrorCode::kDegenerate, "rigid_fit_weighted: zero total weight");
  pc /= wsum;
  qc /= wsum;
  Mat3 H = Mat3::Zero();
  Mat3 S = Mat3::Zero();
  for (std::size_t k = 0; k < P.size(); ++k) {
    const Vec3 dp = P[k] - pc;
    H += w[k] * dp * (Q[k] - qc).transpose();
    S += w[k] * dp * dp.transpose();
  }
  // Collinear (or coincident) source points leave the rotation about the line free.
  Eigen::SelfAdjointEigenSolver<Mat3> spread(S);
  const double smax = spread.eigenvalues()(2);
  if (!(smax > 0.0) || spread.eigenvalues()(1) <= 1e-12 * smax)
    fail(ErrorCode::kDegenerate, "rigid_fit_weighted: points are collinear");
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  if ((V * U.transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  Pose out;
  out.rotation = V * D * U.transpose();
  out.translation = qc - out.rotation * pc;
  return out;
}

struct RansacParams {
  int max_iterations = 2048;
  double inlier_threshold = 0.05;  // meters, 3D residual
  int min_inliers = 3;
  double confidence_target = 0.999;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (max_iterations < 1 || !(inlier_threshold > 0.0) || min_inliers < 3 || !(confidence_target > 0.0 && confidence_target < 1.0))
      fail(ErrorCode::kValidation, "invalid RANSAC parameters");
  }
};

struct PairwisePoseEstimate {
  int i = 0;
  int j = 0;
  Pose pose_ij;  // camera-i frame -> camera-j frame
  std::vector<std::uint8_t> inlier_mask;  // per input match; dropped matches are 0
  double support_weight = 0.0;            // sum of inlier confidences
  std::size_t inlier_count = 0;
  std::size_t match_count = 0;  // matches in the input set
  std::size_t usable_count = 0; // matches with valid depth at both ends
  int iterations = 0;
  bool failed = false;
  std::string failure;
};

/// 3D-3D correspondences lifted from pixel matches; matches whose depth lookup
/// fails at either end are dropped (index kept for the mask).
struct LiftedMatches {
  std::vector<Vec3> xi;
  std::vector<Vec3> xj;
  std::vector<double> weight;
  std::vector<std::size_t> source;  // index into the match list
};

inline LiftedMatches lift_matches(const CorrespondenceSet& matches, const DepthMap& depth_i, const DepthMap& depth_j,
                                  const CameraIntrinsics& intr_i, const CameraIntrinsics& intr_j) {
  LiftedMatches out;
  for (std::size_t k = 0; k < matches.matches.size(); ++k) {
    const auto& m = matches.matches[k];
    const auto di = depth_i.sample(m.p);
    const auto dj = depth_j.sample(m.q);
    if (!di || !dj) continue;
    out.xi.push_back(backproject(m.p, *di, intr_i));
    out.xj.push_back(backproject(m.q, *dj, intr_j));
    out.weight.push_back(m.confidence);
    out.source.push_back(k);
  }
  return out;
}

namespace detail {

struct Hypothesis {
  double score = -1.0;
  std::size_t count = 0;
  std::vector<std::uint8_t> mask;
};

inline Hypothesis score_pose(const Pose& pose, const LiftedMatches& lm, double threshold) {
  Hypothesis h;
  h.mask.assign(lm.xi.size(), 0);
  h.score = 0.0;
  for (std::size_t k = 0; k < lm.xi.size(); ++k) {
    if ((pose.transform(lm.xi[k]) - lm.xj[k]).norm() <= threshold) {
      h.mask[k] = 1;
      h.score += lm.weight[k];
      ++h.count;
    }
  }
  return h;
}

// Strictly better: larger inlier weight, then more inliers. Earlier wins ties.
inline bool better(const Hypothesis& a, const Hypothesis& b) {
  return a.score > b.score || (a.score == b.score && a.count > b.count);
}

inline std::optional<Pose> fit_subset(const LiftedMatches& lm, std::size_t a, std::size_t b, std::size_t c) {
  const std::array<Vec3, 3> P = {lm.xi[a], lm.xi[b], lm.xi[c]};
  const std::array<Vec3, 3> Q = {lm.xj[a], lm.xj[b], lm.xj[c]};
  const std::array<double, 3> w = {lm.weight[a], lm.weight[b], lm.weight[c]};
  try {
    return rigid_fit_weighted(P, Q, w);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline std::optional<Pose> fit_masked(const LiftedMatches& lm, const std::vector<std::uint8_t>& mask) {
  std::vector<Vec3> P, Q;
  std::vector<double> w;
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask[k]) {
      P.push_back(lm.xi[k]);
      Q.push_back(lm.xj[k]);
      w.push_back(lm.weight[k]);
    }
  if (P.size() < 3) return std::nullopt;
  try {
    return rigid_fit_weighted(P, Q, w);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline std::uint64_t binomial3(std::size_t n) {
  return n < 3 ? 0 : static_cast<std::uint64_t>(n) * (n - 1) * (n - 2) / 6;
}

}  // namespace detail

/// Seeded 3-point RANSAC over lifted 3D-3D pairs. When every 3-subset fits
/// in the iteration budget the subsets are enumerated exhaustively in
/// lexicographic order instead of sampled. The winning hypothesis is re-fit
/// on its inliers with confidence weights, and the mask is recomputed from
/// the re-fit pose until it stops changing, so the returned mask is always
/// exactly {residual <= threshold} under the returned pose.
inline PairwisePoseEstimate estimate_relative_pose(const CorrespondenceSet& matches, const DepthMap& depth_i,
                                                   const DepthMap& depth_j, const CameraIntrinsics& intr_i,
                                                   const CameraIntrinsics& intr_j, const RansacParams& params) {
  params.validate();
  PairwisePoseEstimate est;
  est.i = matches.i;
  est.j = matches.j;
  est.match_count = matches.matches.size();
  est.inlier_mask.assign(est.match_count, 0);

  const LiftedMatches lm = lift_matches(matches, depth_i, depth_j, intr_i, intr_j);
  const std::size_t n = lm.xi.size();
  est.usable_count = n;
  auto fail_with = [&](const std::string& why) {
    est.failed = true;
    est.failure = why;
    est.inlier_mask.assign(est.match_count, 0);
    est.support_weight = 0.0;
    est.inlier_count = 0;
    return est;
  };
  if (n < 3 || n < static_cast<std::size_t>(params.min_inliers)) return fail_with("too few matches with valid depth");

  detail::Hypothesis best;
  auto consider = [&](std::size_t a, std::size_t b, std::size_t c) {
    const auto pose = detail::fit_subset(lm, a, b, c);
    if (!pose) return;
    auto h = detail::score_pose(*pose, lm, params.inlier_threshold);
    if (detail::better(h, best)) best = std::move(h);
  };

  const std::uint64_t subsets = detail::binomial3(n);
  int iterations = 0;
  if (subsets <= static_cast<std::uint64_t>(params.max_iterations)) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        for (std::size_t c = b + 1; c < n; ++c) {
          consider(a, b, c);
          ++iterations;
        }
  } else {
    std::mt19937_64 rng(params.rng_seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    double needed = params.max_iterations;
    while (iterations < params.max_iterations && iterations < needed) {
      std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
      while (b == a) b = pick(rng);
      while (c == a || c == b) c = pick(rng);
      consider(a, b, c);
      ++iterations;
      if (best.count >= 3) {
        const double ratio = static_cast<double>(best.count) / n;
        const double p_good = std::pow(ratio, 3);
        if (p_good >= 1.0) {
          needed = 0;
        } else if (p_good > 0.0) {
          needed = std::log(1.0 - params.confidence_target) / std::log(1.0 - p_good);
        }
      }
    }
  }
  est.iterations = iterations;
  if (best.count < 3) return fail_with("no 3-point hypothesis with 3 inliers");

  std::vector<std::uint8_t> mask = best.mask;
  Pose pose;
  bool have_pose = false;
  for (int round = 0; round < 20; ++round) {
    const auto refit = detail::fit_masked(lm, mask);
    if (!refit) break;
    pose = *refit;
    have_pose = true;
    auto h = detail::score_pose(pose, lm, params.inlier_threshold);
    const bool stable = h.mask == mask;
    mask = std::move(h.mask);
    if (stable) break;
  }
  if (!have_pose) return fail_with("inlier re-fit is degenerate");
  const auto final_h = detail::score_pose(pose, lm, params.inlier_threshold);
  if (final_h.count < static_cast<std::size_t>(std::max(3, params.min_inliers)))
    return fail_with("only " + std::to_string(final_h.count) + " inliers");

  est.pose_ij = pose;
  est.support_weight = final_h.score;
  est.inlier_count = final_h.count;
  for (std::size_t k = 0; k < n; ++k) est.inlier_mask[lm.source[k]] = final_h.mask[k];
  return est;
}

/// Per-pair RANSAC seed derived from the global seed, so results do not depend
/// on processing order.
inline std::uint64_t pair_seed(std::uint64_t seed, int i, int j) {
  std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(i) * 1000003ull + j + 1));
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

/// True when edges (failed ones excluded) connect all of `views`.
inline bool is_connected(int view_count, const std::vector<std::pair<int, int>>& edges) {
  if (view_count <= 1) return true;
  std::vector<int> parent(view_count);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int components = view_count;
  for (auto [a, b] : edges) {
    const int ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components == 1;
}

struct PairInput {
  const CorrespondenceSet* matches;
  const DepthMap* depth_i;
  const DepthMap* depth_j;
  const CameraIntrinsics* intr_i;
  const CameraIntrinsics* intr_j;
};

/// One estimate per pair; failed pairs are kept (flagged) as long as the
/// surviving pairs connect all `view_count` views.
inline std::vector<PairwisePoseEstimate> estimate_all_pairs(int view_count, const std::vector<PairInput>& pairs,
                                                            const RansacParams& params, unsigned threads = 1) {
  std::vector<PairwisePoseEstimate> out(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t k) {
        RansacParams p = params;
        p.rng_seed = pair_seed(params.rng_seed, pairs[k].matches->i, pairs[k].matches->j);
        out[k] = estimate_relative_pose(*pairs[k].matches, *pairs[k].depth_i, *pairs[k].depth_j, *pairs[k].intr_i,
                                        *pairs[k].intr_j, p);
      },
      threads);
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : out)
    if (!e.failed) edges.emplace_back(e.i, e.j);
  if (!is_connected(view_count, edges)) fail(ErrorCode::kUnsolvableScene, "pose graph is disconnected after failed pairs");
  return out;
}

// ---------------------------------------------------------------------------
// Persistence of pairwise estimates: one "pair_<i>_<j>.txt" per pair.

inline void save_pairwise(const PairwisePoseEstimate& e, const std::filesystem::path& path) {
  auto os = detail::open_out(path, false);
  os << std::setprecision(17);
  os << "# pairwise pose (camera-i -> camera-j)\n";
  os << "pair " << e.i << " " << e.j << "\n";
  os << "failed " << (e.failed ? 1 : 0) << "\n";
  os << "matches " << e.match_count << "\n";
  os << "usable " << e.usable_count << "\n";
  os << "inliers " << e.inlier_count << "\n";
  os << "support " << e.support_weight << "\n";
  os << "mask ";
  for (auto m : e.inlier_mask) os << static_cast<int>(m);
  os << "\n";
  write_pose(os, e.pose_ij);
}

inline PairwisePoseEstimate load_pairwise(const std::filesystem::path& path) {
  auto is = detail::open_in(path, false);
  PairwisePoseEstimate e;
  std::string line, key;
  std::ostringstream pose_text;
  auto bad = [&](const std::string& why) { fail(ErrorCode::kParse, path.string() + ": " + why); };
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ls >> key;
    if (key == "pair") {
      if (!(ls >> e.i >> e.j)) bad("bad pair line");
    } else if (key == "failed") {
      int f = 0;
      if (!(ls >> f)) bad("bad failed line");
      e.failed = f != 0;
    } else if (key == "matches") {
      if (!(ls >> e.match_count)) bad("bad matches line");
    } else if (key == "usable") {
      if (!(ls >> e.usable_count)) bad("bad usable line");
    } else if (key == "inliers") {
      if (!(ls >> e.inlier_count)) bad("bad inliers line");
    } else if (key == "support") {
      if (!(ls >> e.support_weight)) bad("bad support line");
    } else if (key == "mask") {
      std::string bits;
      ls >> bits;
      for (char c : bits) e.inlier_mask.push_back(c == '1');
    } else {
      pose_text << line << "\n";
    }
  }
  std::istringstream ps(pose_text.str());
  const auto poses = parse_poses(ps, path.string());
  if (poses.size() != 1) bad("expected exactly one pose block");
  e.pose_ij = poses.front();
  return e;
}

}  // namespace splatalign
