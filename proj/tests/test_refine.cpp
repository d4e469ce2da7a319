#include <random>

#include <gtest/gtest.h>

#include "splatalign/refine.hpp"
#include "support.hpp"

namespace splatalign {
namespace {

using testing::finite_difference;
using testing::random_refine_problem;
using testing::random_rotation;
using testing::random_unit;
using testing::relative_error;

// Reprojection residual norms computed from scratch: current absolute poses,
// refined depth from the offset field, world point, projection.
std::vector<double> residual_oracle(const RefineProblem& prob, const RefineState& s) {
  std::vector<double> r;
  for (const auto& m : prob.matches) {
    const auto& vi = prob.views[m.vi];
    const auto& vj = prob.views[m.vj];
    const double d = *vi.depth->sample(m.p) + s.depth[m.vi].at(m.p);
    const Pose Pi = current_pose(prob, s, m.vi), Pj = current_pose(prob, s, m.vj);
    const Vec3 world = pose_inverse(Pi).transform(backproject(m.p, d, vi.intrinsics));
    r.push_back((project(Pj.transform(world), vj.intrinsics).pixel - m.q).norm());
  }
  return r;
}

double center_gap_oracle(const RefineProblem& prob, const RefineState& s) {
  double sum = 0.0;
  for (const auto& m : prob.matches) {
    const auto& vi = prob.views[m.vi];
    const auto& vj = prob.views[m.vj];
    const double di = *vi.depth->sample(m.p) + s.depth[m.vi].at(m.p);
    const double dj = *vj.depth->sample(m.q) + s.depth[m.vj].at(m.q);
    const Vec3 a = pose_inverse(current_pose(prob, s, m.vi)).transform(backproject(m.p, di, vi.intrinsics));
    const Vec3 b = pose_inverse(current_pose(prob, s, m.vj)).transform(backproject(m.q, dj, vj.intrinsics));
    // Distance smoothed at zero: sqrt(d^2 + eps^2) - eps with eps = 1e-6.
    sum += std::sqrt((a - b).squaredNorm() + 1e-12) - 1e-6;
  }
  return sum / static_cast<double>(prob.matches.size());
}

// A Huber delta near 1 px that sits in the widest gap between residuals, so
// no finite-difference step crosses the kink.
double delta_away_from_kinks(std::vector<double> r) {
  std::sort(r.begin(), r.end());
  double best = 1.0, gap = 0.0;
  for (std::size_t k = 1; k < r.size(); ++k)
    if (r[k - 1] > 0.5 && r[k] < 2.0 && r[k] - r[k - 1] > gap) {
      gap = r[k] - r[k - 1];
      best = 0.5 * (r[k] + r[k - 1]);
    }
  return best;
}

TEST(Huber, Branches) {
  EXPECT_DOUBLE_EQ(huber(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(0.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(huber(3.0, 1.0), 2.5);
  EXPECT_DOUBLE_EQ(huber(1.0, 1.0), 0.5);
  EXPECT_NEAR(huber(1.0 + 1e-9, 1.0), 0.5, 2e-9);
}

TEST(Objective, WeightedSum) {
  ObjectiveWeights w;
  EXPECT_NEAR(total_objective({1.0, 2.0, 0.0, 0.0}, w), 1.1, 1e-15);
  EXPECT_EQ(total_objective({}, w), 0.0);
  w.lambda_3d3d = 0.0;
  EXPECT_EQ(total_objective({1.0, 2.0}, w), total_objective({1.0, 7.0}, w));
  // Image terms count only when the photometric toggle is on.
  w.lambda_3d3d = 0.05;
  const ObjectiveComponents c{1.0, 2.0, 0.5, 0.25};
  EXPECT_NEAR(total_objective(c, w), 1.1, 1e-15);
  w.photometric = true;
  EXPECT_NEAR(total_objective(c, w), 1.1 + 0.5 + 0.2 * 0.25, 1e-15);
}

TEST(Loss2d3d, MatchesOracleAndFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto r = random_refine_problem(seed);
    const auto res = residual_oracle(r.problem, r.state);
    const double delta = delta_away_from_kinks(res);
    double expect = 0.0;
    for (double x : res) expect += huber(x, delta);
    expect /= static_cast<double>(res.size());
    const auto l = loss_2d3d(r.problem, r.state, delta);
    ASSERT_EQ(l.counted, res.size());
    EXPECT_NEAR(l.value, expect, 1e-10 * std::max(1.0, expect));
    const auto fd = finite_difference(r.state, [&](const RefineState& s) { return loss_2d3d(r.problem, s, delta).value; });
    EXPECT_LT(relative_error(l.gradient, fd), 1e-4) << "seed " << seed;
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(Loss3d3d, MatchesOracleAndFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto r = random_refine_problem(1000 + seed);
    const auto l = loss_3d3d(r.problem, r.state);
    EXPECT_NEAR(l.value, center_gap_oracle(r.problem, r.state), 1e-9);
    const auto fd = finite_difference(r.state, [&](const RefineState& s) { return loss_3d3d(r.problem, s).value; });
    EXPECT_LT(relative_error(l.gradient, fd), 1e-4) << "seed " << seed;
  }
}

TEST(Loss3d3d, SymmetricInViewRoles) {
  auto r = random_refine_problem(7);
  std::vector<CorrespondenceSet> fwd, bwd;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      CorrespondenceSet s{i, j, {}}, t{j, i, {}};
      std::mt19937_64 rng(10 * i + j);
      std::uniform_real_distribution<double> u(2.0, 45.0);
      for (int k = 0; k < 30; ++k) {
        const Vec2 p(u(rng), u(rng)), q(u(rng), u(rng));
        s.matches.push_back({p, q, 1.0});
        t.matches.push_back({q, p, 1.0});
      }
      fwd.push_back(s);
      bwd.push_back(t);
    }
  const auto a = make_refine_problem(r.problem.views, fwd, 8);
  const auto b = make_refine_problem(r.problem.views, bwd, 8);
  EXPECT_NEAR(loss_3d3d(a, r.state).value, loss_3d3d(b, r.state).value, 1e-12);
  EXPECT_LT((loss_3d3d(a, r.state).gradient - loss_3d3d(b, r.state).gradient).norm(), 1e-12);
}

TEST(Loss3d3d, OneMetreGap) {
  const CameraIntrinsics K{50, 50, 20, 15, 41, 31};
  DepthMap d(41, 31);
  for (int v = 0; v < 31; ++v)
    for (int u = 0; u < 41; ++u) d.set(u, v, 2.0);
  // Camera 1 sits 1 m along +x with the same orientation.
  const std::vector<RefineView> views{{K, &d, Pose::identity()}, {K, &d, make_pose(Mat3::Identity(), Vec3(-1, 0, 0))}};
  const auto prob = make_refine_problem(views, {CorrespondenceSet{0, 1, {{Vec2(20, 15), Vec2(20, 15), 1.0}}}}, 8);
  EXPECT_NEAR(loss_3d3d(prob, RefineState::zeros(prob)).value, 1.0, 1e-6);
}

// Cameras that share one orientation and look at a plane parallel to their
// image planes: every depth map is constant, so bilinear depth lookups at
// sub-pixel match endpoints are exact.
struct ParallelRig {
  CameraIntrinsics K{80.0, 80.0, 39.5, 29.5, 80, 60};
  std::vector<Pose> poses;
  std::vector<DepthMap> depths;
  std::vector<CorrespondenceSet> sets;

  explicit ParallelRig(std::uint64_t seed, int views = 3, int matches = 60) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Mat3 R = random_rotation(rng, 3.0);
    const double plane = 4.0;  // (R x).z of the surface
    for (int v = 0; v < views; ++v) {
      poses.push_back(make_pose(R, Vec3(-0.3 * v, 0.1 * v * (u01(rng) - 0.5), 0.2 * u01(rng))));
      DepthMap d(K.width, K.height);
      for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) d.set(x, y, plane + poses[v].translation.z());
      depths.push_back(std::move(d));
    }
    for (int i = 0; i < views; ++i)
      for (int j = i + 1; j < views; ++j) {
        CorrespondenceSet s{i, j, {}};
        while (static_cast<int>(s.matches.size()) < matches) {
          const Vec2 p(std::floor(2 + u01(rng) * (K.width - 4)), std::floor(2 + u01(rng) * (K.height - 4)));
          bool dup = false;
          for (const auto& m : s.matches) dup = dup || m.p == p;
          if (dup) continue;
          const Vec3 X = backproject(p, depths[i].at(int(p.x()), int(p.y())), K);
          const Vec2 q = project(X - poses[i].translation + poses[j].translation, K).pixel;
          if (q.x() < 1 || q.y() < 1 || q.x() > K.width - 2 || q.y() > K.height - 2) continue;
          s.matches.push_back({p, q, 1.0});
        }
        sets.push_back(std::move(s));
      }
  }

  std::vector<RefineView> views() const {
    std::vector<RefineView> out;
    for (std::size_t v = 0; v < poses.size(); ++v) out.push_back({K, &depths[v], poses[v]});
    return out;
  }
};

TEST(Losses, ZeroAtGroundTruth) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ParallelRig rig(seed);
    const auto prob = make_refine_problem(rig.views(), rig.sets, 8);
    const auto s = RefineState::zeros(prob);
    EXPECT_LT(loss_2d3d(prob, s, 1.0).value, 1e-10);
    EXPECT_LT(loss_3d3d(prob, s).value, 1e-10);
  }
  // A rotated pair over a tilted plane: depth is exact at the integer p.
  const auto pp = testing::plane_pair(3, 80, 0.0);
  const auto prob = make_refine_problem({{pp.K, &pp.depth_i, Pose::identity()}, {pp.K, &pp.depth_j, pp.pose_j}}, {pp.matches}, 8);
  EXPECT_LT(loss_2d3d(prob, RefineState::zeros(prob), 1.0).value, 1e-10);
}

TEST(Losses, BehindCameraIsSkipped) {
  const CameraIntrinsics K{50, 50, 20, 15, 41, 31};
  DepthMap d(41, 31);
  for (int v = 0; v < 31; ++v)
    for (int u = 0; u < 41; ++u) d.set(u, v, 2.0);
  // Camera 1 is 5 m ahead of camera 0, facing the same way.
  const std::vector<RefineView> views{{K, &d, Pose::identity()}, {K, &d, make_pose(Mat3::Identity(), Vec3(0, 0, -5))}};
  const auto prob = make_refine_problem(views, {CorrespondenceSet{0, 1, {{Vec2(20, 15), Vec2(20, 15), 1.0}}}}, 8);
  const auto l = loss_2d3d(prob, RefineState::zeros(prob), 1.0);
  EXPECT_EQ(l.counted, 0u);
  EXPECT_EQ(l.skipped_behind, 1u);
  EXPECT_EQ(l.value, 0.0);
}

TEST(FineAlign, AlreadyAlignedStaysPutAndKeepsGauge) {
  const ParallelRig rig(11);
  FineAlignParams params;
  params.steps = 60;
  const auto res = fine_align(rig.views(), rig.sets, params);
  EXPECT_TRUE(res.poses[0] == rig.poses[0]);
  for (std::size_t v = 0; v < rig.poses.size(); ++v) {
    EXPECT_LT(rotation_geodesic_deg(res.poses[v].rotation, rig.poses[v].rotation), 1e-4);
    EXPECT_LT((res.poses[v].translation - rig.poses[v].translation).norm(), 1e-6);
  }
  for (const auto& d : res.state.depth)
    for (double x : d.values) EXPECT_LT(std::abs(x), 1e-6);
}

TEST(FineAlign, ReducesObjectiveAndKeepsGauge) {
  const ParallelRig rig(12);
  std::mt19937_64 rng(5);
  auto views = rig.views();
  for (std::size_t v = 1; v < views.size(); ++v) {
    views[v].base_pose.rotation = axis_angle(random_unit(rng), 1.0 * kDegToRad) * views[v].base_pose.rotation;
    views[v].base_pose.translation += 0.02 * random_unit(rng);
  }
  FineAlignParams params;
  params.rounds = 1;
  const auto res = fine_align(views, rig.sets, params);
  const auto& obj = res.report.rounds[0].objective;
  EXPECT_LT(obj.back(), 0.1 * obj.front());
  EXPECT_TRUE(res.poses[0] == views[0].base_pose);
  std::vector<Pose> start;
  for (const auto& v : views) start.push_back(v.base_pose);
  const double before = testing::mean_relative_rotation_error(start, rig.poses);
  const double after = testing::mean_relative_rotation_error(res.poses, rig.poses);
  EXPECT_LT(after, 0.5);
  EXPECT_LT(after, 0.25 * before);
  // Refined depth stays positive wherever the input was valid.
  for (std::size_t v = 0; v < res.depths.size(); ++v) EXPECT_EQ(res.depths[v].valid_count(), rig.depths[v].valid_count());
}

TEST(FineAlign, InvalidArguments) {
  try {
    fine_align({}, {}, FineAlignParams{});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
  const ParallelRig rig(13, 2, 10);
  FineAlignParams params;
  params.rounds = 0;
  EXPECT_THROW(fine_align(rig.views(), rig.sets, params), Error);
  params.rounds = 1;
  params.photometric_polish = true;
  EXPECT_THROW(fine_align(rig.views(), rig.sets, params), Error);
}

TEST(DepthOffsetField, GridSizeAndBilinearLookup) {
  auto f = DepthOffsetField::zeros(64, 48, 8);
  EXPECT_EQ(f.grid_width, 9);
  EXPECT_EQ(f.grid_height, 7);
  for (std::size_t k = 0; k < f.values.size(); ++k) f.values[k] = 0.01 * static_cast<double>(k);
  EXPECT_DOUBLE_EQ(f.at(Vec2(16, 8)), f.values[1 * 9 + 2]);
  // Halfway between nodes (2, 1) and (3, 1), a quarter of the way to row 2.
  const double expect = 0.75 * (0.5 * f.values[11] + 0.5 * f.values[12]) + 0.25 * (0.5 * f.values[20] + 0.5 * f.values[21]);
  EXPECT_NEAR(f.at(Vec2(20, 10)), expect, 1e-15);
  EXPECT_DOUBLE_EQ(f.at(Vec2(-5, -5)), f.values[0]);
  // Pixel (63, 47) sits at grid (7.875, 5.875): nodes 52, 53, 61, 62.
  EXPECT_NEAR(f.at(Vec2(63, 47)), 0.875 * 0.875 * f.values[62] + 0.875 * 0.125 * (f.values[53] + f.values[61]) +
                                      0.125 * 0.125 * f.values[52], 1e-15);
  EXPECT_DOUBLE_EQ(f.at(Vec2(500, 500)), f.values.back());
  EXPECT_THROW(DepthOffsetField::zeros(64, 48, 0), Error);
}

TEST(DepthOffsetField, RefinedDepthDropsNonPositive) {
  DepthMap d(16, 16);
  for (int v = 0; v < 16; ++v)
    for (int u = 0; u < 16; ++u) d.set(u, v, 1.0);
  auto f = DepthOffsetField::zeros(16, 16, 15);
  ASSERT_EQ(f.values.size(), 4u);
  f.values = {-2.0, 0.0, 0.0, 0.0};
  const auto r = refined_depth(d, f);
  EXPECT_FALSE(r.is_valid(0, 0));
  EXPECT_TRUE(r.is_valid(15, 15));
  EXPECT_DOUBLE_EQ(r.at(15, 15), 1.0);
}

TEST(Photometric, L2Basics) {
  Image a(16, 12), b(16, 12);
  EXPECT_EQ(loss_photometric(a, a), 0.0);
  std::fill(b.data.begin(), b.data.end(), 1.0);
  EXPECT_DOUBLE_EQ(loss_photometric(a, b), 1.0);
  EXPECT_NEAR(loss_ssim(b, b), 0.0, 1e-12);
  EXPECT_THROW(loss_photometric(a, Image(12, 16)), Error);
}

}  // namespace
}  // namespace splatalign
