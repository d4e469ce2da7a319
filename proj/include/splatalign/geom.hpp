#pragma once

// Camera model, rigid transforms, rotation parameterizations and angular
// error metrics. Poses are world-to-camera: x_cam = R * x_world + t.
// Pixel coordinates follow the pixel-center convention: integer (u, v) is the
// center of pixel (u, v).

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "splatalign/error.hpp"

namespace splatalign {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;
inline constexpr double kDegToRad = std::numbers::pi / 180.0;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx > 0.0 && cx < width && cy > 0.0 &&
           cy < height;
  }

  void validate() const {
    if (!valid()) fail(ErrorCode::kValidation, "camera intrinsics violate fx,fy > 0 and 0 < c < size");
  }

  // Intrinsics of the same camera on an image downsampled by an integer factor.
  CameraIntrinsics downscaled(int factor) const {
    CameraIntrinsics k;
    const double s = 1.0 / factor;
    k.fx = fx * s;
    k.fy = fy * s;
    k.cx = (cx + 0.5) * s - 0.5;
    k.cy = (cy + 0.5) * s - 0.5;
    k.width = width / factor;
    k.height = height / factor;
    return k;
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

inline bool is_rotation(const Mat3& R, double tol = 1e-9) {
  return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol;
}

/// Nearest rotation in Frobenius norm (SVD projection onto SO(3)).
inline Mat3 project_to_so3(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 transform(const Vec3& x) const { return rotation * x + translation; }

  /// Camera origin in world coordinates.
  Vec3 center() const { return -rotation.transpose() * translation; }

  bool valid(double tol = 1e-9) const { return is_rotation(rotation, tol) && translation.allFinite(); }

  bool operator==(const Pose& o) const { return rotation == o.rotation && translation == o.translation; }
};

inline Pose make_pose(const Mat3& R, const Vec3& t) {
  if (!is_rotation(R)) fail(ErrorCode::kValidation, "rotation is not orthonormal with det +1");
  return {R, t};
}

/// a after b: x -> a(b(x)).
inline Pose pose_compose(const Pose& a, const Pose& b) {
  assert(a.valid(1e-6) && b.valid(1e-6));
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose pose_inverse(const Pose& p) {
  assert(p.valid(1e-6));
  const Mat3 Rt = p.rotation.transpose();
  return {Rt, -Rt * p.translation};
}

/// Maps camera-i coordinates to camera-j coordinates (P_j * P_i^-1).
inline Pose relative_pose(const Pose& pose_i, const Pose& pose_j) {
  return pose_compose(pose_j, pose_inverse(pose_i));
}

inline Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& intr) {
  if (!(depth > 0.0)) fail(ErrorCode::kInvalidInput, "backproject needs positive depth");
  return {(pixel.x() - intr.cx) / intr.fx * depth, (pixel.y() - intr.cy) / intr.fy * depth, depth};
}

struct Projection {
  Vec2 pixel;
  double depth;
};

inline Projection project(const Vec3& point, const CameraIntrinsics& intr) {
  if (!(point.z() > 0.0)) fail(ErrorCode::kBehindCamera, "point has z <= 0");
  return {{intr.fx * point.x() / point.z() + intr.cx, intr.fy * point.y() / point.z() + intr.cy},
          point.z()};
}

/// Unnormalized camera-frame ray through a pixel, with unit z.
inline Vec3 pixel_ray(const Vec2& pixel, const CameraIntrinsics& intr) {
  return {(pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0};
}

// ---------------------------------------------------------------------------
// 6D rotation representation: the first two columns of a rotation matrix,
// orthonormalized by Gram-Schmidt on decode.

struct Rotation6D {
  Vec6 values = (Vec6() << 1, 0, 0, 0, 1, 0).finished();

  Vec3 first() const { return values.head<3>(); }
  Vec3 second() const { return values.tail<3>(); }
};

inline Rotation6D rot6d_encode(const Mat3& R) {
  Rotation6D r;
  r.values << R.col(0), R.col(1);
  return r;
}

inline Mat3 rot6d_decode(const Rotation6D& r) {
  const Vec3 a1 = r.first();
  const Vec3 a2 = r.second();
  const double n1 = a1.norm();
  if (!(n1 > 1e-12)) fail(ErrorCode::kDegenerate, "6D rotation has a zero first column");
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > 1e-12 * std::max(1.0, a2.norm()))) fail(ErrorCode::kDegenerate, "6D rotation columns are parallel");
  const Vec3 b2 = u2 / n2;
  Mat3 R;
  R << b1, b2, b1.cross(b2);
  return R;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return S;
}

/// Jacobian of the column-major flattening of rot6d_decode(r) with respect
/// to r: row 3*c + k is d R(k, c) / d r.
inline Eigen::Matrix<double, 9, 6> rot6d_decode_jacobian(const Rotation6D& r) {
  const Vec3 a1 = r.first();
  const Vec3 a2 = r.second();
  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const double d12 = b1.dot(a2);
  const Vec3 u2 = a2 - d12 * b1;
  const double n2 = u2.norm();
  const Vec3 b2 = u2 / n2;

  const Mat3 I = Mat3::Identity();
  const Mat3 db1_da1 = (I - b1 * b1.transpose()) / n1;
  const Mat3 du2_da1 = -(b1 * a2.transpose() + d12 * I) * db1_da1;
  const Mat3 du2_da2 = I - b1 * b1.transpose();
  const Mat3 db2_du2 = (I - b2 * b2.transpose()) / n2;
  const Mat3 db2_da1 = db2_du2 * du2_da1;
  const Mat3 db2_da2 = db2_du2 * du2_da2;
  // b3 = b1 x b2
  const Mat3 db3_da1 = -skew(b2) * db1_da1 + skew(b1) * db2_da1;
  const Mat3 db3_da2 = skew(b1) * db2_da2;

  Eigen::Matrix<double, 9, 6> J = Eigen::Matrix<double, 9, 6>::Zero();
  J.block<3, 3>(0, 0) = db1_da1;
  J.block<3, 3>(3, 0) = db2_da1;
  J.block<3, 3>(3, 3) = db2_da2;
  J.block<3, 3>(6, 0) = db3_da1;
  J.block<3, 3>(6, 3) = db3_da2;
  return J;
}

// ---------------------------------------------------------------------------

struct PluckerRayField {
  int width = 0;
  int height = 0;
  std::vector<Vec6> rays;  // row-major, (direction, moment)

  const Vec6& at(int u, int v) const { return rays[static_cast<std::size_t>(v) * width + u]; }
};

inline PluckerRayField plucker_field(const Pose& pose, const CameraIntrinsics& intr) {
  PluckerRayField field;
  field.width = intr.width;
  field.height = intr.height;
  field.rays.resize(static_cast<std::size_t>(intr.width) * intr.height);
  const Mat3 Rt = pose.rotation.transpose();
  const Vec3 origin = pose.center();
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const Vec3 d = (Rt * pixel_ray(Vec2(u, v), intr)).normalized();
      Vec6 r;
      r << d, origin.cross(d);
      field.rays[static_cast<std::size_t>(v) * intr.width + u] = r;
    }
  }
  return field;
}

// ---------------------------------------------------------------------------

inline double rotation_geodesic_deg(const Mat3& Ra, const Mat3& Rb) {
  // atan2 keeps precision for tiny angles where acos of the trace does not.
  const Mat3 M = Ra.transpose() * Rb;
  const Vec3 axis(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (M.trace() - 1.0)) * kRadToDeg;
}

inline double translation_angle_deg(const Vec3& ta, const Vec3& tb) {
  const double na = ta.norm();
  const double nb = tb.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCode::kUndefinedAngle, "translation angle of a zero vector");
  const double c = std::clamp(ta.dot(tb) / (na * nb), -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

/// Rotation about a unit axis (Rodrigues).
inline Mat3 axis_angle(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

}  // namespace splatalign
