// splatalign command-line driver.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splatalign/splatalign.hpp"

namespace fs = std::filesystem;
using namespace splatalign;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = 1;
};

PipelineConfig effective_config(const Common& c, CLI::App* sub) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (sub->count("--seed")) cfg.seed = c.seed;
  if (sub->count("--threads")) cfg.threads = c.threads;
  return cfg;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "pipeline config (JSON)");
  sub->add_option("--seed", c.seed, "global seed");
  sub->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

CameraIntrinsics parse_intrinsics(const std::string& s) {
  std::stringstream ss(s);
  std::string tok;
  std::vector<double> v;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (v.size() != 6) fail(ErrorCode::kParse, "--intrinsics expects fx,fy,cx,cy,width,height");
  CameraIntrinsics k{v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5])};
  k.validate();
  return k;
}

void save_rendered(const Image& img, const fs::path& path) {
  if (detail::has_ext(path, ".pfm")) save_image_pfm(img, path);
  else save_image_png(img, path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"splatalign: pose-free pixel-aligned Gaussian reconstruction"};
  app.require_subcommand(1);
  app.set_version_flag("--version",
                       std::string("splatalign ") + kVersion + "\nfeature format version " +
                           std::to_string(kFeatureFormatVersion) + "\nscene format version " +
                           std::to_string(kSceneFormatVersion));

  Common common;
  std::string manifest, out, spec_path, pairwise, poses, conf_dir, scene, intrinsics, report, pipeline_config;
  int rounds = 2, K = 64, view = -1;
  double lambda = 0.05, tau = 0.1;
  bool resume = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truth scene");
  synth->add_option("--spec", spec_path, "synth spec (JSON); defaults when omitted");
  synth->add_option("--seed", common.seed, "scene seed");
  synth->add_option("--out", out, "output directory")->required();

  auto* coarse = app.add_subcommand("coarse", "pairwise relative poses (RANSAC rigid fit)");
  coarse->add_option("--manifest", manifest)->required();
  coarse->add_option("--out", out, "pairwise directory")->required();
  add_common(coarse, common);

  auto* sync = app.add_subcommand("sync", "synchronize pairwise poses into absolute poses");
  sync->add_option("--pairwise", pairwise)->required();
  sync->add_option("--out", out, "absolute poses file")->required();
  add_common(sync, common);

  auto* confidence = app.add_subcommand("confidence", "geometry confidence maps");
  confidence->add_option("--manifest", manifest)->required();
  confidence->add_option("--poses", poses)->required();
  confidence->add_option("--out", out)->required();
  confidence->add_option("--K", K, "depth candidates");
  confidence->add_option("--tau", tau, "softmax temperature");
  add_common(confidence, common);

  auto* build = app.add_subcommand("build-scene", "pixel-aligned Gaussian scene from context views");
  build->add_option("--manifest", manifest)->required();
  build->add_option("--poses", poses)->required();
  build->add_option("--conf", conf_dir, "confidence directory (constant 1 when omitted)");
  build->add_option("--out", out, "scene file")->required();
  add_common(build, common);

  auto* rend = app.add_subcommand("render", "render a Gaussian scene");
  rend->add_option("--scene", scene)->required();
  rend->add_option("--pose", poses, "pose file (first pose, or --view)")->required();
  rend->add_option("--view", view, "index into the pose file");
  rend->add_option("--intrinsics", intrinsics, "fx,fy,cx,cy,width,height")->required();
  rend->add_option("--out", out, "image (.png or .pfm)")->required();
  add_common(rend, common);

  auto* ref = app.add_subcommand("refine", "fine alignment of poses and depths");
  ref->add_option("--manifest", manifest)->required();
  ref->add_option("--poses", poses)->required();
  ref->add_option("--out", out)->required();
  ref->add_option("--rounds", rounds);
  ref->add_option("--lambda3d3d", lambda);
  add_common(ref, common);

  auto* ev = app.add_subcommand("eval", "held-out evaluation protocol");
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--pipeline-config", pipeline_config);
  ev->add_option("--report", report)->required();
  ev->add_option("--work", out, "working directory (default: <report>.work)");
  add_common(ev, common);

  auto* pipe = app.add_subcommand("pipeline", "run every stage end to end");
  pipe->add_option("--manifest", manifest)->required();
  pipe->add_option("--out", out)->required();
  pipe->add_flag("--resume", resume, "continue from the last completed stage");
  add_common(pipe, common);

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (synth->parsed()) {
      SynthSpec spec;
      if (!spec_path.empty()) {
        auto is = detail::open_in(spec_path, false);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::parse_error& e) {
          fail(ErrorCode::kParse, spec_path + ": " + e.what());
        }
        spec = synth_spec_from_json(j);
      }
      write_bundle(generate(spec, common.seed), out);
    } else if (coarse->parsed()) {
      const auto cfg = effective_config(common, coarse);
      stages::coarse(load_context(load_manifest(manifest)), cfg, out);
    } else if (sync->parsed()) {
      stages::sync(pairwise, effective_config(common, sync), out);
    } else if (confidence->parsed()) {
      auto cfg = effective_config(common, confidence);
      if (confidence->count("--K")) cfg.K = K;
      if (confidence->count("--tau")) cfg.tau = tau;
      cfg.validate();
      const auto c = load_context(load_manifest(manifest));
      stages::confidence(c, stages::load_context_poses(poses, c), cfg, out);
    } else if (build->parsed()) {
      const auto cfg = effective_config(common, build);
      const auto c = load_context(load_manifest(manifest));
      const auto p = stages::load_context_poses(poses, c);
      if (conf_dir.empty()) {
        std::vector<std::vector<Gaussian>> per_view;
        for (int k = 0; k < c.size(); ++k)
          per_view.push_back(build_view_gaussians(c.images[k], c.depths[k], p[k], c.intrinsics[k],
                                                  constant_confidence(c.intrinsics[k].width, c.intrinsics[k].height, 1.0), 1,
                                                  static_cast<std::uint32_t>(c.views[k]), cfg.gaussians));
        save_scene(merge_scene(per_view), out);
      } else {
        save_scene(stages::build_scene(c, p, c.depths, conf_dir, cfg), out);
      }
    } else if (rend->parsed()) {
      auto cfg = effective_config(common, rend);
      const auto all = load_poses(poses);
      const int idx = view < 0 ? 0 : view;
      if (idx >= static_cast<int>(all.size())) fail(ErrorCode::kIndexOutOfRange, "--view exceeds the number of poses");
      RenderConfig rc = cfg.render;
      rc.threads = cfg.threads;
      save_rendered(render(load_scene(scene), all[idx], parse_intrinsics(intrinsics), rc).color, out);
    } else if (ref->parsed()) {
      auto cfg = effective_config(common, ref);
      if (ref->count("--rounds")) cfg.refine.rounds = rounds;
      if (ref->count("--lambda3d3d")) cfg.refine.weights.lambda_3d3d = lambda;
      cfg.validate();
      const auto c = load_context(load_manifest(manifest));
      stages::refine(c, stages::load_context_poses(poses, c), cfg, out);
    } else if (ev->parsed()) {
      if (!pipeline_config.empty()) common.config = pipeline_config;
      const auto cfg = effective_config(common, ev);
      const fs::path work = out.empty() ? fs::path(report + ".work") : fs::path(out);
      const auto r = run_protocol(manifest, cfg, work);
      auto os = detail::open_out(report, false);
      os << r.to_json().dump(2) << "\n";
    } else if (pipe->parsed()) {
      const auto cfg = effective_config(common, pipe);
      run_pipeline(manifest, cfg, out, resume);
    }
  } catch (const StageError& e) {
    std::cerr << "splatalign " << stage << ": " << e.what() << " [" << to_string(e.code()) << "]\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "splatalign " << stage << ": " << e.what() << " [" << to_string(e.code()) << "]\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "splatalign " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
