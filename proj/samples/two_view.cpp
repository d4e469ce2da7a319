// Two views of a synthetic room with noisy depth and 30% outlier matches:
// estimate the relative pose with depth-lifted RANSAC and compare it to the
// ground truth.
#include <cstdio>
#include <cstdlib>

#include "splatalign/splatalign.hpp"

using namespace splatalign;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;

  SynthSpec spec;
  spec.views = 2;
  spec.noise.depth_sigma = 0.003;
  spec.noise.match_sigma = 0.5;
  spec.noise.outlier_fraction = 0.3;
  const SynthBundle b = generate(spec, seed);
  const auto& v0 = b.views[0];
  const auto& v1 = b.views[1];

  RansacParams rp;
  rp.rng_seed = seed;
  const auto est = estimate_relative_pose(b.matches[0], v0.depth, v1.depth, v0.intrinsics, v1.intrinsics, rp);
  if (est.failed) {
    std::fprintf(stderr, "RANSAC failed: %s\n", est.failure.c_str());
    return 1;
  }

  const Pose gt = pose_compose(v1.pose, pose_inverse(v0.pose));
  std::printf("matches %zu, usable %zu, inliers %zu after %d iterations\n", est.match_count, est.usable_count,
              est.inlier_count, est.iterations);
  std::printf("rotation error    %.4f deg\n", rotation_geodesic_deg(est.pose_ij.rotation, gt.rotation));
  std::printf("translation error %.4f deg (direction), %.4f m\n", translation_angle_deg(est.pose_ij.translation, gt.translation),
              (est.pose_ij.translation - gt.translation).norm());
  return 0;
}
