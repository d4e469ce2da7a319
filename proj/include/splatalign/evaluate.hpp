#pragma once

// Evaluation metrics: pairwise relative-pose errors, trajectory error after
// similarity alignment, and image quality (PSNR, SSIM).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"
#include "splatalign/photometric.hpp"

namespace splatalign {

struct PoseErrors {
  std::vector<double> rotation_deg;     // per pair (i < j), row-major order
  std::vector<double> translation_deg;  // per pair with defined direction
  std::size_t undefined_translation = 0;
  double rotation_mean = 0.0, rotation_median = 0.0;
  double translation_mean = 0.0, translation_median = 0.0;
  double ate = 0.0;
  double ate_scale = 1.0;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Similarity (scale, rotation, translation) mapping `src` points onto `dst`
/// in the least-squares sense. Returns the 4x4 transform.
inline Eigen::Matrix4d similarity_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size() || src.empty()) fail(ErrorCode::kDimensionMismatch, "similarity_align: point counts differ");
  Eigen::Matrix3Xd S(3, src.size()), D(3, dst.size());
  for (std::size_t k = 0; k < src.size(); ++k) {
    S.col(static_cast<Eigen::Index>(k)) = src[k];
    D.col(static_cast<Eigen::Index>(k)) = dst[k];
  }
  const Eigen::Vector3d ms = S.rowwise().mean();
  if ((S.colwise() - ms).squaredNorm() <= 1e-24) {
    // All source points coincide: translation only.
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.block<3, 1>(0, 3) = D.rowwise().mean() - ms;
    return T;
  }
  return Eigen::umeyama(S, D, true);
}

/// Camera centers RMSE after aligning the estimated centers to the ground
/// truth with a similarity transform.
inline double absolute_trajectory_error(const std::vector<Pose>& est, const std::vector<Pose>& gt, double* scale = nullptr) {
  std::vector<Vec3> ce, cg;
  for (std::size_t k = 0; k < est.size(); ++k) {
    ce.push_back(est[k].center());
    cg.push_back(gt[k].center());
  }
  const Eigen::Matrix4d T = similarity_align(ce, cg);
  if (scale) *scale = std::cbrt(T.block<3, 3>(0, 0).determinant());
  double s = 0.0;
  for (std::size_t k = 0; k < ce.size(); ++k) {
    const Vec3 a = T.block<3, 3>(0, 0) * ce[k] + T.block<3, 1>(0, 3);
    s += (a - cg[k]).squaredNorm();
  }
  return std::sqrt(s / static_cast<double>(ce.size()));
}

/// Expresses `est` in the ground-truth gauge: est_k * (est_0^-1 * gt_0), so
/// view 0 coincides. Rotation-only errors are unaffected by this choice.
inline std::vector<Pose> gauge_align(const std::vector<Pose>& est, const std::vector<Pose>& gt) {
  const Pose g = pose_compose(pose_inverse(est.front()), gt.front());
  std::vector<Pose> out;
  for (const auto& p : est) out.push_back(pose_compose(p, g));
  return out;
}

inline PoseErrors evaluate_poses(const std::vector<Pose>& estimated, const std::vector<Pose>& ground_truth) {
  if (estimated.size() != ground_truth.size()) fail(ErrorCode::kDimensionMismatch, "pose counts differ");
  if (estimated.size() < 2) fail(ErrorCode::kInvalidInput, "pose evaluation needs at least 2 views");
  const auto est = gauge_align(estimated, ground_truth);
  PoseErrors e;
  for (std::size_t i = 0; i < est.size(); ++i)
    for (std::size_t j = i + 1; j < est.size(); ++j) {
      const Pose re = relative_pose(est[i], est[j]);
      const Pose rg = relative_pose(ground_truth[i], ground_truth[j]);
      e.rotation_deg.push_back(rotation_geodesic_deg(re.rotation, rg.rotation));
      try {
        e.translation_deg.push_back(translation_angle_deg(re.translation, rg.translation));
      } catch (const Error&) {
        ++e.undefined_translation;
      }
    }
  e.rotation_mean = mean_of(e.rotation_deg);
  e.rotation_median = median_of(e.rotation_deg);
  e.translation_mean = mean_of(e.translation_deg);
  e.translation_median = median_of(e.translation_deg);
  e.ate = absolute_trajectory_error(est, ground_truth, &e.ate_scale);
  return e;
}

inline constexpr double kPsnrCap = 99.0;

struct ImageMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  bool identical = false;  // psnr capped
  double ssim = 1.0;
};

inline ImageMetrics evaluate_images(const Image& rendered, const Image& target) {
  require_same_size(rendered, target);
  ImageMetrics m;
  m.mse = loss_photometric(rendered, target);
  if (m.mse <= std::pow(10.0, -kPsnrCap / 10.0)) {
    m.psnr = kPsnrCap;
    m.identical = true;
  } else {
    m.psnr = 10.0 * std::log10(1.0 / m.mse);
  }
  m.ssim = ssim(rendered, target);
  return m;
}

/// Angle-based overlap label of a set of context cameras: for each camera
/// the angle to the nearest other optical axis, averaged.
inline double context_baseline_deg(const std::vector<Pose>& poses) {
  if (poses.size() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    double best = 180.0;
    for (std::size_t j = 0; j < poses.size(); ++j)
      if (i != j) best = std::min(best, rotation_geodesic_deg(poses[i].rotation, poses[j].rotation));
    s += best;
  }
  return s / static_cast<double>(poses.size());
}

inline std::string overlap_bin(double baseline_deg) {
  if (baseline_deg > 25.0) return "small";
  if (baseline_deg >= 10.0) return "medium";
  return "large";
}

struct ViewReport {
  int view = 0;
  std::string role;  // "context" or "target"
  ImageMetrics metrics;
};

struct EvalReport {
  std::vector<ViewReport> views;
  bool has_pose_errors = false;
  PoseErrors poses;
  double baseline_deg = 0.0;
  std::string overlap;

  double mean_psnr(const std::string& role) const {
    std::vector<double> v;
    for (const auto& r : views)
      if (r.role == role) v.push_back(r.metrics.psnr);
    return mean_of(v);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["views"] = nlohmann::json::array();
    for (const auto& r : views)
      j["views"].push_back({{"view", r.view},
                            {"role", r.role},
                            {"psnr", r.metrics.psnr},
                            {"psnr_capped", r.metrics.identical},
                            {"ssim", r.metrics.ssim},
                            {"mse", r.metrics.mse}});
    j["mean_psnr_context"] = mean_psnr("context");
    j["mean_psnr_target"] = mean_psnr("target");
    if (has_pose_errors) {
      j["pose"] = {{"rotation_deg", poses.rotation_deg},
                   {"translation_deg", poses.translation_deg},
                   {"undefined_translation", poses.undefined_translation},
                   {"rotation_mean_deg", poses.rotation_mean},
                   {"rotation_median_deg", poses.rotation_median},
                   {"translation_mean_deg", poses.translation_mean},
                   {"translation_median_deg", poses.translation_median},
                   {"ate", poses.ate},
                   {"ate_scale", poses.ate_scale}};
    }
    j["baseline_deg"] = baseline_deg;
    j["overlap_bin"] = overlap;
    return j;
  }
};

}  // namespace splatalign
