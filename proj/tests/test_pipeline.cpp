#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "splatalign/splatalign.hpp"

namespace splatalign {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("splatalign_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path small_scene(const fs::path& dir, std::uint64_t seed = 3) {
  SynthSpec s;
  s.views = 3;
  s.width = 96;
  s.height = 96;
  s.matches_per_pair = 150;
  write_bundle(generate(s, seed), dir);
  return dir / "manifest.json";
}

PipelineConfig fast_config() {
  PipelineConfig c;
  c.K = 16;
  c.refine.rounds = 1;
  c.refine.steps = 100;
  return c;
}

TEST(Config, DefaultsRoundTrip) {
  const PipelineConfig c;
  const auto back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(PipelineConfig::from_json(nlohmann::json::object()).to_json(), c.to_json());
}

TEST(Config, PatchOverridesOnlyGivenKeys) {
  const auto c = PipelineConfig::from_json({{"seed", 9}, {"confidence", {{"K", 32}}}, {"refine", {{"lambda_3d3d", 0.0}}}});
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.K, 32);
  EXPECT_EQ(c.tau, PipelineConfig{}.tau);
  EXPECT_EQ(c.refine.weights.lambda_3d3d, 0.0);
  EXPECT_EQ(c.refine_params().ransac.rng_seed, 9u);
}

TEST(Config, FileRoundTrip) {
  const auto dir = scratch("config");
  auto c = fast_config();
  c.render.background = Vec3(0.1, 0.2, 0.3);
  save_config(c, dir / "c.json");
  EXPECT_EQ(load_config(dir / "c.json").to_json(), c.to_json());
}

TEST(Config, UnknownKeysAndWrongTypesAreRejected) {
  for (const auto& bad : {nlohmann::json{{"sed", 1}}, nlohmann::json{{"ransac", {{"max_iter", 5}}}},
                          nlohmann::json{{"confidence", {{"K", "many"}}}}, nlohmann::json{{"refine", {{"enabled", 1}}}}}) {
    try {
      PipelineConfig::from_json(bad);
      FAIL() << "expected an error for " << bad.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParse) << bad.dump();
    }
  }
  try {
    PipelineConfig::from_json({{"ransac", {{"max_iter", 5}}}});
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("config.ransac.max_iter"), std::string::npos);
  }
}

TEST(Config, OutOfRangeValuesFailValidation) {
  for (const auto& bad : {nlohmann::json{{"confidence", {{"K", 1}}}}, nlohmann::json{{"refine", {{"rounds", 0}}}},
                          nlohmann::json{{"render", {{"tile_size", 0}}}}, nlohmann::json{{"refine", {{"polish_steps", 51}}}}}) {
    try {
      PipelineConfig::from_json(bad);
      FAIL() << "expected an error for " << bad.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kValidation) << bad.dump();
    }
  }
}

TEST(Pipeline, NoiselessSceneEndToEnd) {
  const auto dir = scratch("e2e");
  const auto manifest = small_scene(dir / "scene");
  const auto res = run_pipeline(manifest, fast_config(), dir / "out");
  EXPECT_EQ(res.executed, pipeline_stage_names());
  ASSERT_TRUE(res.report.has_pose_errors);
  EXPECT_LT(res.report.poses.rotation_mean, 0.1);
  for (const char* f : {"config.json", "poses_coarse.txt", "scene.spgs", "report.json"}) EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;

  // Same seed, same bytes.
  run_pipeline(manifest, fast_config(), dir / "again");
  EXPECT_EQ(slurp(dir / "out" / "report.json"), slurp(dir / "again" / "report.json"));
  EXPECT_EQ(slurp(dir / "out" / "scene.spgs"), slurp(dir / "again" / "scene.spgs"));
}

TEST(Pipeline, ResumeSkipsCompletedStages) {
  const auto dir = scratch("resume");
  const auto manifest = small_scene(dir / "scene");
  run_pipeline(manifest, fast_config(), dir / "out");
  const auto report = slurp(dir / "out" / "report.json");
  EXPECT_TRUE(run_pipeline(manifest, fast_config(), dir / "out", true).executed.empty());
  fs::remove(dir / "out" / "stages" / "render.done");
  EXPECT_EQ(run_pipeline(manifest, fast_config(), dir / "out", true).executed, (std::vector<std::string>{"render", "eval"}));
  EXPECT_EQ(slurp(dir / "out" / "report.json"), report);
  // Without --resume everything runs again.
  EXPECT_EQ(run_pipeline(manifest, fast_config(), dir / "out").executed.size(), pipeline_stage_names().size());
}

TEST(Pipeline, MissingDepthNamesStageAndFile) {
  const auto dir = scratch("missing");
  const auto manifest = small_scene(dir / "scene");
  fs::remove(dir / "scene" / "view_1_depth.pfm");
  try {
    run_pipeline(manifest, fast_config(), dir / "out");
    FAIL() << "expected an error";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "coarse");
    EXPECT_NE(std::string(e.what()).find("view_1_depth.pfm"), std::string::npos) << e.what();
  }
}

// The command-line binary, when the build tells us where it is.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const char* p = std::getenv("SPLATALIGN_CLI");
    if (!p || !*p) GTEST_SKIP() << "SPLATALIGN_CLI not set";
    cli_ = p;
  }

  int run(const std::string& args, const fs::path& err) const {
    const std::string cmd = "\"" + cli_ + "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  std::string cli_;
};

TEST_F(Cli, SynthThenPipeline) {
  const auto dir = scratch("cli");
  std::ofstream(dir / "spec.json") << R"({"views": 3, "width": 96, "height": 96, "matches_per_pair": 150})";
  std::ofstream(dir / "cfg.json") << R"({"confidence": {"K": 16}, "refine": {"rounds": 1, "steps": 100}})";
  ASSERT_EQ(run("synth --spec " + (dir / "spec.json").string() + " --seed 3 --out " + (dir / "scene").string(), dir / "e1"), 0)
      << slurp(dir / "e1");
  const std::string pipe = "pipeline --manifest " + (dir / "scene" / "manifest.json").string() + " --config " +
                           (dir / "cfg.json").string() + " --out ";
  ASSERT_EQ(run(pipe + (dir / "a").string(), dir / "e2"), 0) << slurp(dir / "e2");
  ASSERT_EQ(run(pipe + (dir / "b").string(), dir / "e3"), 0) << slurp(dir / "e3");
  EXPECT_EQ(slurp(dir / "a" / "report.json"), slurp(dir / "b" / "report.json"));

  fs::remove(dir / "scene" / "view_2_depth.pfm");
  EXPECT_NE(run(pipe + (dir / "c").string(), dir / "e4"), 0);
  const auto err = slurp(dir / "e4");
  EXPECT_NE(err.find("view_2_depth.pfm"), std::string::npos) << err;
  EXPECT_NE(err.find("coarse"), std::string::npos) << err;
}

TEST_F(Cli, UnknownConfigKeyFails) {
  const auto dir = scratch("cli_cfg");
  std::ofstream(dir / "cfg.json") << R"({"confidence": {"kk": 16}})";
  EXPECT_NE(run("pipeline --manifest nowhere.json --config " + (dir / "cfg.json").string() + " --out " + (dir / "o").string(),
                dir / "e"),
            0);
  EXPECT_NE(slurp(dir / "e").find("config.confidence.kk"), std::string::npos) << slurp(dir / "e");
}

}  // namespace
}  // namespace splatalign
