#pragma once

// End-to-end driver: coarse -> sync -> confidence -> scene -> refine ->
// render -> eval. Every stage reads its inputs from the previous stages'
// files in the output directory, so a resumed run and a fresh run see the
// same bytes.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatalign/coarse.hpp"
#include "splatalign/confvol.hpp"
#include "splatalign/error.hpp"
#include "splatalign/evaluate.hpp"
#include "splatalign/io.hpp"
#include "splatalign/raster.hpp"
#include "splatalign/refine.hpp"
#include "splatalign/scene.hpp"
#include "splatalign/sync.hpp"

namespace splatalign {

struct PipelineConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  RansacParams ransac;
  SyncParams sync;
  int K = 64;
  double tau = 0.1;
  double beta = 1.0;
  GaussianParams gaussians;
  RenderConfig render;
  bool refine_enabled = true;
  FineAlignParams refine;
  int top_k = 0;  // 0: targets render from all context views

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"threads", threads},
            {"ransac",
             {{"max_iterations", ransac.max_iterations},
              {"inlier_threshold", ransac.inlier_threshold},
              {"min_inliers", ransac.min_inliers},
              {"confidence_target", ransac.confidence_target}}},
            {"sync", {{"max_power_iters", sync.max_power_iters}, {"convergence_tol", sync.convergence_tol}}},
            {"confidence", {{"K", K}, {"tau", tau}, {"beta", beta}}},
            {"gaussians",
             {{"max_opacity", gaussians.max_opacity},
              {"opacity_epsilon", gaussians.opacity_epsilon},
              {"pixel_radius", gaussians.pixel_radius},
              {"depth_scale", gaussians.depth_scale}}},
            {"render",
             {{"tile_size", render.tile_size},
              {"alpha_threshold", render.alpha_threshold},
              {"gaussian_cutoff", render.gaussian_cutoff},
              {"background", {render.background.x(), render.background.y(), render.background.z()}},
              {"near_clip", render.near_clip},
              {"cov2d_floor", render.cov2d_floor},
              {"max_alpha", render.max_alpha}}},
            {"refine",
             {{"enabled", refine_enabled},
              {"rounds", refine.rounds},
              {"steps", refine.steps},
              {"lr_pose", refine.lr_pose},
              {"lr_depth", refine.lr_depth},
              {"depth_grid_factor", refine.depth_grid_factor},
              {"lambda_3d3d", refine.weights.lambda_3d3d},
              {"huber_delta", refine.weights.huber_delta},
              {"lambda_ssim", refine.weights.lambda_ssim},
              {"weight_2d3d", refine.weights.weight_2d3d},
              {"refine_reference_depth", refine.refine_reference_depth},
              {"photometric_polish", refine.photometric_polish},
              {"polish_steps", refine.polish_steps},
              {"divergence_factor", refine.divergence_factor}}},
            {"eval", {{"top_k", top_k}}}};
  }

  /// Overlays `patch` on the defaults. Keys absent from the defaults, or
  /// values of a different JSON type, are rejected with the key path.
  static PipelineConfig from_json(const nlohmann::json& patch) {
    const PipelineConfig defaults;
    nlohmann::json merged = defaults.to_json();
    check_keys(merged, patch, "config");
    merged.merge_patch(patch);
    PipelineConfig c;
    try {
      c.seed = merged["seed"].get<std::uint64_t>();
      c.threads = merged["threads"].get<unsigned>();
      const auto& r = merged["ransac"];
      c.ransac.max_iterations = r["max_iterations"].get<int>();
      c.ransac.inlier_threshold = r["inlier_threshold"].get<double>();
      c.ransac.min_inliers = r["min_inliers"].get<int>();
      c.ransac.confidence_target = r["confidence_target"].get<double>();
      c.sync.max_power_iters = merged["sync"]["max_power_iters"].get<int>();
      c.sync.convergence_tol = merged["sync"]["convergence_tol"].get<double>();
      c.K = merged["confidence"]["K"].get<int>();
      c.tau = merged["confidence"]["tau"].get<double>();
      c.beta = merged["confidence"]["beta"].get<double>();
      const auto& g = merged["gaussians"];
      c.gaussians.max_opacity = g["max_opacity"].get<double>();
      c.gaussians.opacity_epsilon = g["opacity_epsilon"].get<double>();
      c.gaussians.pixel_radius = g["pixel_radius"].get<double>();
      c.gaussians.depth_scale = g["depth_scale"].get<double>();
      const auto& rd = merged["render"];
      c.render.tile_size = rd["tile_size"].get<int>();
      c.render.alpha_threshold = rd["alpha_threshold"].get<double>();
      c.render.gaussian_cutoff = rd["gaussian_cutoff"].get<double>();
      const auto bg = rd["background"].get<std::vector<double>>();
      if (bg.size() != 3) fail(ErrorCode::kParse, "config.render.background: expected 3 values");
      c.render.background = Vec3(bg[0], bg[1], bg[2]);
      c.render.near_clip = rd["near_clip"].get<double>();
      c.render.cov2d_floor = rd["cov2d_floor"].get<double>();
      c.render.max_alpha = rd["max_alpha"].get<double>();
      const auto& f = merged["refine"];
      c.refine_enabled = f["enabled"].get<bool>();
      c.refine.rounds = f["rounds"].get<int>();
      c.refine.steps = f["steps"].get<int>();
      c.refine.lr_pose = f["lr_pose"].get<double>();
      c.refine.lr_depth = f["lr_depth"].get<double>();
      c.refine.depth_grid_factor = f["depth_grid_factor"].get<int>();
      c.refine.weights.lambda_3d3d = f["lambda_3d3d"].get<double>();
      c.refine.weights.huber_delta = f["huber_delta"].get<double>();
      c.refine.weights.lambda_ssim = f["lambda_ssim"].get<double>();
      c.refine.weights.weight_2d3d = f["weight_2d3d"].get<double>();
      c.refine.refine_reference_depth = f["refine_reference_depth"].get<bool>();
      c.refine.photometric_polish = f["photometric_polish"].get<bool>();
      c.refine.polish_steps = f["polish_steps"].get<int>();
      c.refine.divergence_factor = f["divergence_factor"].get<double>();
      c.top_k = merged["eval"]["top_k"].get<int>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  void validate() const {
    ransac.validate();
    sync.validate();
    render.validate();
    if (K < 2 || !(tau > 0.0) || !(beta >= 0.0)) fail(ErrorCode::kValidation, "config.confidence: need K >= 2, tau > 0, beta >= 0");
    const auto& w = refine.weights;
    if (!(w.lambda_3d3d >= 0.0 && w.huber_delta > 0.0 && w.lambda_ssim >= 0.0 && w.weight_2d3d >= 0.0))
      fail(ErrorCode::kValidation, "config.refine: objective weights must be >= 0 (huber_delta > 0)");
    if (refine.rounds < 1 || refine.steps < 0 || refine.depth_grid_factor < 1 || refine.polish_steps < 0 ||
        refine.polish_steps > 50)
      fail(ErrorCode::kValidation, "config.refine: need rounds >= 1, steps >= 0, grid factor >= 1, polish steps in [0, 50]");
    if (top_k < 0) fail(ErrorCode::kValidation, "config.eval.top_k must be >= 0");
    if (!(gaussians.pixel_radius > 0.0 && gaussians.depth_scale > 0.0 && gaussians.max_opacity >= 0.0))
      fail(ErrorCode::kValidation, "config.gaussians: invalid values");
  }

  /// Module parameter records with the global seed and thread count applied.
  FineAlignParams refine_params() const {
    FineAlignParams p = refine;
    p.ransac = ransac;
    p.ransac.rng_seed = seed;
    p.sync = sync;
    p.sync.rng_seed = seed;
    p.seed = seed;
    p.threads = threads;
    return p;
  }

 private:
  static void check_keys(const nlohmann::json& defaults, const nlohmann::json& patch, const std::string& where) {
    if (!patch.is_object()) fail(ErrorCode::kParse, where + ": expected an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
      const std::string path = where + "." + it.key();
      if (!defaults.contains(it.key())) fail(ErrorCode::kParse, path + ": unknown key");
      const auto& d = defaults.at(it.key());
      if (d.is_object()) {
        check_keys(d, it.value(), path);
      } else if (d.is_number() != it.value().is_number() || d.is_boolean() != it.value().is_boolean() ||
                 d.is_array() != it.value().is_array()) {
        fail(ErrorCode::kParse, path + ": wrong type");
      }
    }
  }
};

inline PipelineConfig load_config(const std::filesystem::path& path) {
  auto is = detail::open_in(path, false);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return PipelineConfig::from_json(j);
}

inline void save_config(const PipelineConfig& c, const std::filesystem::path& path) {
  auto os = detail::open_out(path, false);
  os << c.to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Context data: the manifest's context views with local indices 0..C-1.

struct ContextData {
  SceneManifest manifest;
  std::vector<int> views;  // manifest index per local index
  std::vector<Image> images;
  std::vector<DepthMap> depths;
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<CorrespondenceSet> matches;  // local indices

  int size() const { return static_cast<int>(views.size()); }
};

inline ContextData load_context(const SceneManifest& m) {
  ContextData c;
  c.manifest = m;
  c.views = m.context_views();
  if (c.views.empty()) fail(ErrorCode::kInvalidInput, "manifest has no context views");
  std::map<int, int> local;
  for (int k = 0; k < c.size(); ++k) {
    const auto& v = m.views[c.views[k]];
    local[c.views[k]] = k;
    c.images.push_back(load_image(v.image));
    c.depths.push_back(load_depth(v.depth, v.depth_scale));
    c.intrinsics.push_back(v.intrinsics);
    const auto& img = c.images.back();
    const auto& d = c.depths.back();
    if (img.width != v.intrinsics.width || img.height != v.intrinsics.height || d.width != img.width ||
        d.height != img.height)
      fail(ErrorCode::kDimensionMismatch, "view " + std::to_string(c.views[k]) + ": image, depth and intrinsics sizes differ");
  }
  for (const auto& p : m.pairs) {
    CorrespondenceSet set = load_correspondences(p.matches);
    if (set.i != p.i || set.j != p.j)
      fail(ErrorCode::kValidation, p.matches.string() + ": header pair (" + std::to_string(set.i) + "," + std::to_string(set.j) +
                                       ") disagrees with manifest (" + std::to_string(p.i) + "," + std::to_string(p.j) + ")");
    validate_correspondences(set, m.views[p.i].intrinsics, m.views[p.j].intrinsics);
    set.i = local.at(p.i);
    set.j = local.at(p.j);
    c.matches.push_back(std::move(set));
  }
  return c;
}

namespace stages {

namespace fs = std::filesystem;

inline std::string view_name(int manifest_index) { return "view_" + std::to_string(manifest_index); }

// --- coarse ---------------------------------------------------------------

inline void coarse(const ContextData& c, const PipelineConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<PairInput> inputs;
  for (const auto& set : c.matches)
    inputs.push_back({&set, &c.depths[set.i], &c.depths[set.j], &c.intrinsics[set.i], &c.intrinsics[set.j]});
  RansacParams rp = cfg.ransac;
  rp.rng_seed = cfg.seed;
  const auto est = estimate_all_pairs(c.size(), inputs, rp, cfg.threads);
  {
    auto os = detail::open_out(dir / "views.txt", false);
    for (int v : c.views) os << v << "\n";
  }
  auto report = detail::open_out(dir / "report.txt", false);
  report << std::setprecision(17) << "# i j matches usable inliers support failed\n";
  for (const auto& e : est) {
    save_pairwise(e, dir / ("pair_" + std::to_string(e.i) + "_" + std::to_string(e.j) + ".txt"));
    report << e.i << " " << e.j << " " << e.match_count << " " << e.usable_count << " " << e.inlier_count << " "
           << e.support_weight << " " << (e.failed ? 1 : 0);
    if (e.failed) report << " # " << e.failure;
    report << "\n";
  }
}

struct PairwiseSet {
  std::vector<int> views;
  std::vector<PairwisePoseEstimate> pairs;
};

inline PairwiseSet load_pairwise_dir(const fs::path& dir) {
  PairwiseSet s;
  {
    auto is = detail::open_in(dir / "views.txt", false);
    int v;
    while (is >> v) s.views.push_back(v);
  }
  if (s.views.empty()) fail(ErrorCode::kParse, (dir / "views.txt").string() + ": no views listed");
  const std::regex name(R"(pair_(\d+)_(\d+)\.txt)");
  std::vector<std::pair<std::pair<int, int>, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string fn = entry.path().filename().string();
    if (std::regex_match(fn, m, name)) files.push_back({{std::stoi(m[1]), std::stoi(m[2])}, entry.path()});
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) s.pairs.push_back(load_pairwise(f.second));
  return s;
}

// --- sync -----------------------------------------------------------------

inline std::vector<Pose> sync(const fs::path& pairwise_dir, const PipelineConfig& cfg, const fs::path& out) {
  const auto ps = load_pairwise_dir(pairwise_dir);
  SyncParams sp = cfg.sync;
  sp.rng_seed = cfg.seed;
  const auto result = synchronize(pose_graph_from_pairs(static_cast<int>(ps.views.size()), ps.pairs), sp);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  save_poses(result.poses, out);
  return result.poses;
}

inline std::vector<Pose> load_context_poses(const fs::path& path, const ContextData& c) {
  auto poses = load_poses(path);
  if (static_cast<int>(poses.size()) != c.size())
    fail(ErrorCode::kDimensionMismatch, path.string() + ": " + std::to_string(poses.size()) + " poses for " +
                                            std::to_string(c.size()) + " context views");
  return poses;
}

// --- confidence -------------------------------------------------------------

inline std::vector<FeatureMap> context_features(const ContextData& c) {
  std::vector<FeatureMap> out;
  for (int k = 0; k < c.size(); ++k) {
    const auto& v = c.manifest.views[c.views[k]];
    out.push_back(v.features ? load_features(*v.features) : builtin_features(c.images[k]));
  }
  return out;
}

/// Geometry confidence of every view against all others, at image
/// resolution: the sweep volume is upsampled and the guidance uses every
/// pixel's own depth.
inline std::vector<ConfidenceMap> compute_confidence(const std::vector<FeatureMap>& features, const std::vector<DepthMap>& depths,
                                                     const std::vector<Pose>& poses, const std::vector<CameraIntrinsics>& intr,
                                                     const DepthCandidates& cand, const PipelineConfig& cfg) {
  const int n = static_cast<int>(features.size());
  std::vector<ConfidenceMap> out;
  for (int k = 0; k < n; ++k) {
    const auto guide = build_guidance_volume(depths[k], cand);
    if (n == 1) {
      out.push_back(geometry_confidence(guide, cfg.tau));
      continue;
    }
    std::vector<SweepView> src;
    for (int s = 0; s < n; ++s)
      if (s != k) src.push_back({&features[s], poses[s], intr[s]});
    const int stride = detail::feature_stride(features[k], intr[k]);
    const auto multi = build_multiview_volume({&features[k], poses[k], intr[k]}, src, cand, cfg.threads);
    out.push_back(geometry_confidence(aggregate_volumes(upsample_volume(multi, stride), guide, cfg.beta), cfg.tau));
  }
  return out;
}

inline void confidence(const ContextData& c, const std::vector<Pose>& poses, const PipelineConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  const auto conf = compute_confidence(context_features(c), c.depths, poses, c.intrinsics,
                                       make_candidates(c.manifest.near, c.manifest.far, cfg.K), cfg);
  for (int k = 0; k < c.size(); ++k)
    save_scalar_pfm(dir / (view_name(c.views[k]) + ".pfm"), conf[k].width, conf[k].height, conf[k].values);
}

inline ConfidenceMap load_confidence(const fs::path& path) {
  const auto g = read_pfm(path);
  if (g.channels != 1) fail(ErrorCode::kParse, path.string() + ": confidence map must be single channel");
  ConfidenceMap m{g.height, g.width, std::vector<double>(g.data.begin(), g.data.end())};
  return m;
}

// --- scene ----------------------------------------------------------------

inline GaussianScene build_scene(const ContextData& c, const std::vector<Pose>& poses, const std::vector<DepthMap>& depths,
                                 const fs::path& conf_dir, const PipelineConfig& cfg, const std::vector<int>* subset = nullptr) {
  std::vector<std::vector<Gaussian>> per_view;
  for (int k = 0; k < c.size(); ++k) {
    if (subset && std::find(subset->begin(), subset->end(), k) == subset->end()) continue;
    const auto conf = load_confidence(conf_dir / (view_name(c.views[k]) + ".pfm"));
    if (conf.width == 0 || c.intrinsics[k].width % conf.width != 0)
      fail(ErrorCode::kDimensionMismatch, "confidence map size does not divide the image size");
    const int stride = c.intrinsics[k].width / conf.width;
    per_view.push_back(build_view_gaussians(c.images[k], depths[k], poses[k], c.intrinsics[k], conf, stride,
                                            static_cast<std::uint32_t>(c.views[k]), cfg.gaussians));
  }
  return merge_scene(per_view);
}

// --- refine ---------------------------------------------------------------

struct RefineOutputs {
  std::vector<Pose> poses;
  std::vector<DepthMap> depths;
};

inline void refine(const ContextData& c, const std::vector<Pose>& coarse_poses, const PipelineConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  if (!cfg.refine_enabled) {
    save_poses(coarse_poses, dir / "poses.txt");
    for (int k = 0; k < c.size(); ++k) save_depth(c.depths[k], dir / (view_name(c.views[k]) + "_depth.pfm"));
    auto os = detail::open_out(dir / "report.txt", false);
    os << "disabled 1\n";
    return;
  }
  std::vector<RefineView> views;
  for (int k = 0; k < c.size(); ++k) views.push_back({c.intrinsics[k], &c.depths[k], coarse_poses[k]});
  const auto res = fine_align(views, c.matches, cfg.refine_params(), &c.images);
  save_poses(res.poses, dir / "poses.txt");
  for (int k = 0; k < c.size(); ++k) save_depth(res.depths[k], dir / (view_name(c.views[k]) + "_depth.pfm"));
  auto os = detail::open_out(dir / "report.txt", false);
  res.report.write(os);
}

inline RefineOutputs load_refined(const ContextData& c, const fs::path& dir) {
  RefineOutputs r;
  r.poses = load_context_poses(dir / "poses.txt", c);
  for (int k = 0; k < c.size(); ++k) r.depths.push_back(load_depth(dir / (view_name(c.views[k]) + "_depth.pfm")));
  return r;
}

// --- render / eval ----------------------------------------------------------

/// Ground-truth pose of a held-out view expressed in the estimated gauge:
/// the ground-truth motion from context view 0 to the target, with its
/// translation rescaled by the estimated/ground-truth scale ratio, composed
/// onto the estimated pose of context view 0.
inline Pose target_pose_in_estimate(const Pose& gt_target, const std::vector<Pose>& gt_ctx, const std::vector<Pose>& est_ctx) {
  double scale = 1.0;
  if (gt_ctx.size() >= 2) {
    std::vector<Vec3> ce, cg;
    for (std::size_t k = 0; k < gt_ctx.size(); ++k) {
      ce.push_back(est_ctx[k].center());
      cg.push_back(gt_ctx[k].center());
    }
    const Eigen::Matrix4d T = similarity_align(ce, cg);
    const double s = std::cbrt(T.block<3, 3>(0, 0).determinant());
    if (s > 0.0) scale = 1.0 / s;
  }
  Pose q = relative_pose(gt_ctx.front(), gt_target);
  q.translation *= scale;
  return pose_compose(q, est_ctx.front());
}

inline std::vector<Pose> load_gt(const SceneManifest& m, const std::vector<int>& views) {
  std::vector<Pose> out;
  for (int v : views) {
    const auto p = load_poses(*m.views[v].gt_pose);
    if (p.size() != 1) fail(ErrorCode::kParse, m.views[v].gt_pose->string() + ": expected one pose");
    out.push_back(p.front());
  }
  return out;
}

/// Context indices (local) nearest to a target by ground-truth center distance.
inline std::vector<int> nearest_contexts(const Pose& target, const std::vector<Pose>& gt_ctx, int k) {
  std::vector<int> idx(gt_ctx.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return (gt_ctx[a].center() - target.center()).norm() < (gt_ctx[b].center() - target.center()).norm();
  });
  if (k > 0 && k < static_cast<int>(idx.size())) idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline void render_views(const ContextData& c, const RefineOutputs& refined, const fs::path& conf_dir, const PipelineConfig& cfg,
                         const fs::path& scene_path, const fs::path& dir) {
  fs::create_directories(dir);
  RenderConfig rc = cfg.render;
  rc.threads = cfg.threads;
  const auto scene = load_scene(scene_path);
  for (int k = 0; k < c.size(); ++k) {
    const auto out = render(scene, refined.poses[k], c.intrinsics[k], rc);
    save_image_pfm(out.color, dir / (view_name(c.views[k]) + ".pfm"));
    save_image_png(out.color, dir / (view_name(c.views[k]) + ".png"));
  }
  const auto targets = c.manifest.target_views();
  if (targets.empty() || !c.manifest.has_ground_truth()) return;
  const auto gt_ctx = load_gt(c.manifest, c.views);
  const auto gt_tgt = load_gt(c.manifest, targets);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Pose pose = target_pose_in_estimate(gt_tgt[t], gt_ctx, refined.poses);
    GaussianScene sub;
    if (cfg.top_k > 0 && cfg.top_k < c.size()) {
      const auto subset = nearest_contexts(gt_tgt[t], gt_ctx, cfg.top_k);
      sub = build_scene(c, refined.poses, refined.depths, conf_dir, cfg, &subset);
    }
    const auto out = render(cfg.top_k > 0 && cfg.top_k < c.size() ? sub : scene, pose, c.manifest.views[targets[t]].intrinsics, rc);
    save_image_pfm(out.color, dir / (view_name(targets[t]) + ".pfm"));
    save_image_png(out.color, dir / (view_name(targets[t]) + ".png"));
  }
}

inline EvalReport evaluate(const ContextData& c, const RefineOutputs& refined, const fs::path& render_dir, const fs::path& out) {
  EvalReport r;
  for (int k = 0; k < c.size(); ++k) {
    const auto img = load_image(render_dir / (view_name(c.views[k]) + ".pfm"));
    r.views.push_back({c.views[k], "context", evaluate_images(img, c.images[k])});
  }
  if (c.manifest.has_ground_truth()) {
    const auto gt_ctx = load_gt(c.manifest, c.views);
    if (c.size() >= 2) {
      r.poses = evaluate_poses(refined.poses, gt_ctx);
      r.has_pose_errors = true;
    }
    r.baseline_deg = context_baseline_deg(gt_ctx);
    r.overlap = overlap_bin(r.baseline_deg);
    for (int t : c.manifest.target_views()) {
      const auto img = load_image(render_dir / (view_name(t) + ".pfm"));
      r.views.push_back({t, "target", evaluate_images(img, load_image(c.manifest.views[t].image))});
    }
  }
  auto os = detail::open_out(out, false);
  os << r.to_json().dump(2) << "\n";
  return r;
}

}  // namespace stages

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& pipeline_stage_names() {
  static const std::vector<std::string> names = {"coarse", "sync", "confidence", "scene", "refine", "render", "eval"};
  return names;
}

/// Raised for a failure inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), "stage " + stage + " failed: " + cause.what()), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineResult {
  EvalReport report;
  std::vector<std::string> executed;  // stages run in this invocation
};

/// Runs the full pipeline into `out`. With `resume`, stages whose completion
/// marker exists are skipped; otherwise all markers are cleared first.
inline PipelineResult run_pipeline(const std::filesystem::path& manifest_path, const PipelineConfig& cfg,
                                   const std::filesystem::path& out, bool resume = false) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out / "stages");
  if (!resume)
    for (const auto& s : pipeline_stage_names()) fs::remove(out / "stages" / (s + ".done"));
  save_config(cfg, out / "config.json");

  PipelineResult result;
  std::optional<ContextData> ctx;
  auto context = [&]() -> const ContextData& {
    if (!ctx) ctx = load_context(load_manifest(manifest_path));
    return *ctx;
  };
  bool forced = false;  // once a stage runs, every later stage runs too
  auto run = [&](const std::string& name, const std::function<void()>& fn) {
    const fs::path marker = out / "stages" / (name + ".done");
    if (!forced && resume && fs::exists(marker)) return;
    forced = true;
    try {
      fn();
    } catch (const Error& e) {
      throw StageError(name, e);
    } catch (const std::exception& e) {
      throw StageError(name, Error(ErrorCode::kIo, e.what()));
    }
    detail::open_out(marker, false) << "ok\n";
    result.executed.push_back(name);
  };

  run("coarse", [&] { stages::coarse(context(), cfg, out / "pairwise"); });
  run("sync", [&] { stages::sync(out / "pairwise", cfg, out / "poses_coarse.txt"); });
  run("confidence", [&] {
    const auto& c = context();
    stages::confidence(c, stages::load_context_poses(out / "poses_coarse.txt", c), cfg, out / "conf");
  });
  run("scene", [&] {
    const auto& c = context();
    save_scene(stages::build_scene(c, stages::load_context_poses(out / "poses_coarse.txt", c), c.depths, out / "conf", cfg),
               out / "scene_coarse.spgs");
  });
  run("refine", [&] {
    const auto& c = context();
    stages::refine(c, stages::load_context_poses(out / "poses_coarse.txt", c), cfg, out / "refined");
    const auto r = stages::load_refined(c, out / "refined");
    save_scene(stages::build_scene(c, r.poses, r.depths, out / "conf", cfg), out / "scene.spgs");
  });
  run("render", [&] {
    const auto& c = context();
    stages::render_views(c, stages::load_refined(c, out / "refined"), out / "conf", cfg, out / "scene.spgs", out / "renders");
  });
  run("eval", [&] {
    const auto& c = context();
    result.report = stages::evaluate(c, stages::load_refined(c, out / "refined"), out / "renders", out / "report.json");
  });
  if (std::find(result.executed.begin(), result.executed.end(), "eval") == result.executed.end()) {
    const auto& c = context();
    result.report = stages::evaluate(c, stages::load_refined(c, out / "refined"), out / "renders", out / "report.json");
  }
  return result;
}

/// Held-out evaluation: the pipeline sees only context views; each target
/// is rendered from its ground-truth pose carried into the estimated gauge.
inline EvalReport run_protocol(const std::filesystem::path& manifest_path, const PipelineConfig& cfg,
                               const std::filesystem::path& work_dir) {
  const auto m = load_manifest(manifest_path);
  if (!m.has_ground_truth()) fail(ErrorCode::kInvalidInput, "protocol needs ground-truth poses for every view");
  return run_pipeline(manifest_path, cfg, work_dir, false).report;
}

}  // namespace splatalign
