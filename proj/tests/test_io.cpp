#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "splatalign/io.hpp"
#include "support.hpp"

namespace splatalign {
namespace {

namespace fs = std::filesystem;

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("splatalign_io_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream os(path(name));
    os << text;
  }

  fs::path dir_;
};

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidInput;
}

Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h);
  for (auto& x : img.data) x = u(rng);
  return img;
}

TEST_F(IoTest, PfmImageRoundTripIsFloatExact) {
  const Image img = random_image(13, 7, 1);
  save_image_pfm(img, path("a.pfm"));
  const Image back = load_image(path("a.pfm"));
  ASSERT_EQ(back.width, 13);
  ASSERT_EQ(back.height, 7);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    EXPECT_EQ(back.data[i], static_cast<double>(static_cast<float>(img.data[i])));
}

TEST_F(IoTest, PngImageRoundTripWithinQuantization) {
  const Image img = random_image(9, 5, 2);
  save_image_png(img, path("a.png"));
  const Image back = load_image(path("a.png"));
  ASSERT_EQ(back.width, 9);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255.0 + 1e-12);
}

TEST_F(IoTest, DepthPfmRoundTripKeepsInvalidPixels) {
  DepthMap d(6, 4);
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 6; ++u) d.set(u, v, (u + v) % 3 == 0 ? 0.0 : 1.0 + 0.25 * u + v);
  save_depth(d, path("d.pfm"));
  const DepthMap back = load_depth(path("d.pfm"));
  ASSERT_EQ(back.width, 6);
  ASSERT_EQ(back.height, 4);
  EXPECT_EQ(back.valid, d.valid);
  for (std::size_t i = 0; i < d.depth.size(); ++i) EXPECT_FLOAT_EQ(back.depth[i], d.depth[i]);
}

TEST_F(IoTest, DepthPngUsesSidecarScale) {
  DepthMap d(4, 3);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 4; ++u) d.set(u, v, u == 0 && v == 0 ? 0.0 : 0.5 + 0.125 * (u + 4 * v));
  save_depth_png(d, path("d.png"), 1e-3);  // metres per raw unit
  const DepthMap back = load_depth(path("d.png"));
  EXPECT_EQ(back.valid, d.valid);
  for (std::size_t i = 0; i < d.depth.size(); ++i) EXPECT_NEAR(back.depth[i], d.depth[i], 0.5e-3 + 1e-12);
  // An explicit scale overrides the sidecar.
  const DepthMap twice = load_depth(path("d.png"), 2e-3);
  EXPECT_NEAR(twice.at(1, 0), 2.0 * back.at(1, 0), 1e-12);
}

TEST_F(IoTest, CorrespondencesRoundTrip) {
  CorrespondenceSet s;
  s.i = 0;
  s.j = 2;
  s.matches.push_back({Vec2(1.25, 2.5), Vec2(3.0, 4.125), 0.75});
  s.matches.push_back({Vec2(0.1, 0.2), Vec2(5.5, 6.5), 1.0});
  save_correspondences(s, path("m.txt"));
  const auto back = load_correspondences(path("m.txt"));
  EXPECT_EQ(back.i, 0);
  EXPECT_EQ(back.j, 2);
  ASSERT_EQ(back.matches.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back.matches[k].p, s.matches[k].p);
    EXPECT_EQ(back.matches[k].q, s.matches[k].q);
    EXPECT_EQ(back.matches[k].confidence, s.matches[k].confidence);
  }
}

TEST_F(IoTest, CorrespondenceErrors) {
  write_text("short.txt", "0 1 3\n1 2 3 4 0.5\n");
  EXPECT_EQ(code_of([&] { load_correspondences(path("short.txt")); }), ErrorCode::kParse);
  write_text("conf.txt", "0 1 1\n1 2 3 4 1.5\n");
  EXPECT_EQ(code_of([&] { load_correspondences(path("conf.txt")); }), ErrorCode::kValidation);
  EXPECT_EQ(code_of([&] { load_correspondences(path("missing.txt")); }), ErrorCode::kMissingFile);

  const CameraIntrinsics K{10, 10, 4.5, 4.5, 10, 10};
  CorrespondenceSet dup;
  dup.matches = {{Vec2(1, 1), Vec2(2, 2), 1.0}, {Vec2(1, 1), Vec2(3, 3), 1.0}};
  EXPECT_EQ(code_of([&] { validate_correspondences(dup, K, K); }), ErrorCode::kValidation);
  CorrespondenceSet out;
  out.matches = {{Vec2(1, 1), Vec2(9.5, 2), 1.0}};
  EXPECT_EQ(code_of([&] { validate_correspondences(out, K, K); }), ErrorCode::kDimensionMismatch);
}

TEST_F(IoTest, FeaturesRoundTripAndNormalize) {
  FeatureMap f(3, 4, 5);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  for (auto& x : f.data) x = n(rng);
  save_features(f, path("f.bin"));
  const auto back = load_features(path("f.bin"));
  ASSERT_EQ(back.height, 3);
  ASSERT_EQ(back.width, 4);
  ASSERT_EQ(back.dim, 5);
  FeatureMap expect = f;
  expect.normalize();
  for (std::size_t i = 0; i < f.data.size(); ++i) EXPECT_NEAR(back.data[i], expect.data[i], 1e-6);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 4; ++u) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += back.cell(u, v)[k] * back.cell(u, v)[k];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST_F(IoTest, FeatureHeaderErrors) {
  write_text("magic.bin", "NOPE\x01");
  EXPECT_EQ(code_of([&] { load_features(path("magic.bin")); }), ErrorCode::kParse);
  FeatureMap f(1, 1, 2);
  f.data = {1.0, 0.0};
  save_features(f, path("v.bin"));
  {
    std::fstream fs(path("v.bin"), std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(4);
    fs.put(static_cast<char>(9));
  }
  EXPECT_EQ(code_of([&] { load_features(path("v.bin")); }), ErrorCode::kUnknownVersion);
  // Truncated payload.
  fs::resize_file(path("v.bin"), fs::file_size(path("v.bin")) - 2);
  EXPECT_NE(code_of([&] { load_features(path("v.bin")); }), ErrorCode::kInvalidInput);
}

TEST_F(IoTest, SceneRoundTrip) {
  const GaussianScene scene = testing::random_scene(4, 25);
  save_scene(scene, path("s.bin"));
  const auto back = load_scene(path("s.bin"));
  ASSERT_EQ(back.size(), scene.size());
  EXPECT_EQ(back.view_counts, scene.view_counts);
  for (std::size_t k = 0; k < scene.size(); ++k) {
    const auto& a = scene.gaussians[k];
    const auto& b = back.gaussians[k];
    EXPECT_LT((a.center - b.center).norm(), 1e-5);
    EXPECT_NEAR(a.opacity, b.opacity, 1e-6);
    EXPECT_LT((a.covariance - b.covariance).norm(), 1e-5 * a.covariance.norm());
    EXPECT_LT((a.color - b.color).norm(), 1e-6);
    EXPECT_EQ(a.view, b.view);
    EXPECT_EQ(a.pixel_u, b.pixel_u);
    EXPECT_EQ(a.pixel_v, b.pixel_v);
  }
}

TEST_F(IoTest, PosesRoundTripAndValidation) {
  std::mt19937_64 rng(5);
  std::vector<Pose> poses;
  for (int k = 0; k < 3; ++k)
    poses.push_back(make_pose(testing::random_rotation(rng, 3.0), testing::random_unit(rng)));
  save_poses(poses, path("p.txt"));
  const auto back = load_poses(path("p.txt"));
  ASSERT_EQ(back.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_LT((back[k].rotation - poses[k].rotation).norm(), 1e-14);
    EXPECT_LT((back[k].translation - poses[k].translation).norm(), 1e-14);
  }

  write_text("bad_rot.txt", "1 0 0 0\n0 1 0 0\n0 0 1.1 0\n");
  EXPECT_EQ(code_of([&] { load_poses(path("bad_rot.txt")); }), ErrorCode::kValidation);
  write_text("bad_row.txt", "1 0 0\n0 1 0 0\n0 0 1 0\n");
  EXPECT_EQ(code_of([&] { load_poses(path("bad_row.txt")); }), ErrorCode::kParse);
  // Printed with limited precision: projected back onto SO(3).
  write_text("rounded.txt", "0.7071068 -0.7071068 0 1\n0.7071068 0.7071068 0 2\n0 0 1 3\n");
  const auto r = load_poses(path("rounded.txt"));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_TRUE(is_rotation(r[0].rotation, 1e-12));
}

class ManifestTest : public IoTest {
 protected:
  void SetUp() override {
    IoTest::SetUp();
    save_image_pfm(Image(8, 6, 0.5), path("img0.pfm"));
    save_image_pfm(Image(8, 6, 0.5), path("img1.pfm"));
    DepthMap d(8, 6);
    for (int v = 0; v < 6; ++v)
      for (int u = 0; u < 8; ++u) d.set(u, v, 2.0);
    save_depth(d, path("d0.pfm"));
    save_depth(d, path("d1.pfm"));
    write_text("m01.txt", "0 1 0\n");
  }

  nlohmann::json base() const {
    nlohmann::json k = {{"fx", 8.0}, {"fy", 8.0}, {"cx", 3.5}, {"cy", 2.5}, {"width", 8}, {"height", 6}};
    return {{"near", 0.5},
            {"far", 10.0},
            {"views",
             {{{"image", "img0.pfm"}, {"depth", "d0.pfm"}, {"intrinsics", k}},
              {{"image", "img1.pfm"}, {"depth", "d1.pfm"}, {"intrinsics", k}}}},
            {"pairs", {{{"i", 0}, {"j", 1}, {"matches", "m01.txt"}}}}};
  }

  ErrorCode load_error(const nlohmann::json& j) {
    write_text("scene.json", j.dump());
    return code_of([&] { load_manifest(path("scene.json")); });
  }
};

TEST_F(ManifestTest, LoadsAndResolvesRelativePaths) {
  write_text("scene.json", base().dump());
  const auto m = load_manifest(path("scene.json"));
  ASSERT_EQ(m.views.size(), 2u);
  EXPECT_EQ(m.views[1].image, path("img1.pfm"));
  EXPECT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.context_views(), (std::vector<int>{0, 1}));
  EXPECT_FALSE(m.has_ground_truth());

  save_manifest(m, path("again.json"));
  const auto m2 = load_manifest(path("again.json"));
  EXPECT_EQ(m2.views[0].intrinsics, m.views[0].intrinsics);
  EXPECT_EQ(m2.near, m.near);
}

TEST_F(ManifestTest, ErrorCodes) {
  auto j = base();
  j["views"][1]["depth"] = "nope.pfm";
  EXPECT_EQ(load_error(j), ErrorCode::kMissingFile);

  j = base();
  j["pairs"][0]["j"] = 5;
  EXPECT_EQ(load_error(j), ErrorCode::kIndexOutOfRange);

  j = base();
  j["near"] = 20.0;
  EXPECT_EQ(load_error(j), ErrorCode::kBounds);

  j = base();
  j["views"][0]["intrinsics"]["cx"] = 9.0;
  EXPECT_EQ(load_error(j), ErrorCode::kValidation);

  j = base();
  j["views"][0].erase("image");
  EXPECT_EQ(load_error(j), ErrorCode::kParse);

  j = base();
  j["pairs"].push_back(j["pairs"][0]);
  EXPECT_EQ(load_error(j), ErrorCode::kValidation);

  write_text("scene.json", "{ not json");
  EXPECT_EQ(code_of([&] { load_manifest(path("scene.json")); }), ErrorCode::kParse);
}

TEST_F(ManifestTest, TargetViewsNeedNoDepth) {
  auto j = base();
  j["views"][1]["role"] = "target";
  j["views"][1]["depth"] = "absent.pfm";
  j.erase("pairs");
  write_text("scene.json", j.dump());
  const auto m = load_manifest(path("scene.json"));
  EXPECT_EQ(m.target_views(), std::vector<int>{1});
}

}  // namespace
}  // namespace splatalign
