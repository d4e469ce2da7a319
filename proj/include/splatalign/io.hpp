#pragma once

// File formats: scene manifest (JSON), depth maps (PFM / 16-bit PNG), images
// (PFM / PNG), correspondence sets (text), feature maps and Gaussian scenes
// (little-endian binary with magic + version byte), pose stacks (text).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include <nlohmann/json.hpp>

#include "splatalign/error.hpp"
#include "splatalign/gaussian.hpp"
#include "splatalign/geom.hpp"
#include "splatalign/image.hpp"

namespace splatalign {

namespace fs = std::filesystem;

inline constexpr std::uint8_t kFeatureFormatVersion = 1;
inline constexpr std::uint8_t kSceneFormatVersion = 1;
inline constexpr char kFeatureMagic[4] = {'S', 'P', 'F', 'T'};
inline constexpr char kSceneMagic[4] = {'S', 'P', 'G', 'S'};

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace detail {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) fail(ErrorCode::kParse, "truncated file: " + what);
  return byteswap_if_big(v);
}

inline std::ifstream open_in(const fs::path& path, bool binary) {
  if (!fs::exists(path)) fail(ErrorCode::kMissingFile, "file not found: " + path.string());
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  return is;
}

inline std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  return os;
}

inline bool has_ext(const fs::path& p, const char* ext) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PFM (Portable Float Map). Little-endian (negative scale), rows stored
// bottom-to-top as the format prescribes.

struct FloatGrid {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;  // top-to-bottom rows, interleaved channels
};

inline void write_pfm(const fs::path& path, const FloatGrid& g) {
  auto os = detail::open_out(path, true);
  os << (g.channels == 3 ? "PF" : "Pf") << "\n" << g.width << " " << g.height << "\n-1.0\n";
  const std::size_t row = static_cast<std::size_t>(g.width) * g.channels;
  for (int v = g.height - 1; v >= 0; --v)
    for (std::size_t k = 0; k < row; ++k) detail::write_le(os, g.data[v * row + k]);
  if (!os) fail(ErrorCode::kIo, "failed writing " + path.string());
}

inline FloatGrid read_pfm(const fs::path& path) {
  auto is = detail::open_in(path, true);
  std::string magic;
  FloatGrid g;
  double scale = 0.0;
  if (!(is >> magic) || (magic != "PF" && magic != "Pf")) fail(ErrorCode::kParse, path.string() + ": bad PFM magic");
  if (!(is >> g.width >> g.height >> scale) || g.width <= 0 || g.height <= 0 || scale == 0.0)
    fail(ErrorCode::kParse, path.string() + ": malformed PFM header");
  is.get();  // single whitespace byte before payload
  g.channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  const std::size_t row = static_cast<std::size_t>(g.width) * g.channels;
  g.data.resize(row * g.height);
  for (int v = g.height - 1; v >= 0; --v) {
    for (std::size_t k = 0; k < row; ++k) {
      std::uint32_t bits = detail::read_le<std::uint32_t>(is, path.string());
      if (!little) bits = __builtin_bswap32(bits);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      g.data[v * row + k] = f;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// PNG via libpng

namespace detail {

struct PngPixels {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1..4
  int bit_depth = 8;
  std::vector<std::uint16_t> data;  // interleaved, row-major
};

inline PngPixels read_png(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kMissingFile, "file not found: " + path.string());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) fail(ErrorCode::kIo, "cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  PngPixels out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kParse, path.string() + ": malformed PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  if (png_get_bit_depth(png, info) == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buf(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int v = 0; v < out.height; ++v) rows[v] = buf.data() + v * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.data.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) std::memcpy(&out.data[i], buf.data() + 2 * i, 2);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.data[i] = buf[i];
  }
  return out;
}

inline void write_png(const fs::path& path, const PngPixels& px) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  const int color = px.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, px.width, px.height, px.bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int bytes = px.bit_depth / 8;
  std::vector<unsigned char> row(static_cast<std::size_t>(px.width) * px.channels * bytes);
  for (int v = 0; v < px.height; ++v) {
    for (int k = 0; k < px.width * px.channels; ++k) {
      const std::uint16_t s = px.data[static_cast<std::size_t>(v) * px.width * px.channels + k];
      if (bytes == 2) {
        row[2 * k] = static_cast<unsigned char>(s >> 8);  // PNG is big-endian
        row[2 * k + 1] = static_cast<unsigned char>(s & 0xff);
      } else {
        row[k] = static_cast<unsigned char>(s);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Images

inline Image load_image(const fs::path& path) {
  if (detail::has_ext(path, ".pfm")) {
    const auto g = read_pfm(path);
    Image img(g.width, g.height);
    for (int v = 0; v < g.height; ++v)
      for (int u = 0; u < g.width; ++u)
        for (int c = 0; c < 3; ++c)
          img.at(c, u, v) = g.data[(static_cast<std::size_t>(v) * g.width + u) * g.channels + (g.channels == 3 ? c : 0)];
    return img;
  }
  const auto px = detail::read_png(path);
  const double maxv = px.bit_depth == 16 ? 65535.0 : 255.0;
  Image img(px.width, px.height);
  for (int v = 0; v < px.height; ++v)
    for (int u = 0; u < px.width; ++u)
      for (int c = 0; c < 3; ++c)
        img.at(c, u, v) =
            px.data[(static_cast<std::size_t>(v) * px.width + u) * px.channels + (px.channels >= 3 ? c : 0)] / maxv;
  return img;
}

inline void save_image_pfm(const Image& img, const fs::path& path) {
  FloatGrid g{img.width, img.height, 3, {}};
  g.data.resize(static_cast<std::size_t>(3) * img.width * img.height);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      for (int c = 0; c < 3; ++c)
        g.data[(static_cast<std::size_t>(v) * img.width + u) * 3 + c] = static_cast<float>(img.at(c, u, v));
  write_pfm(path, g);
}

inline void save_image_png(const Image& img, const fs::path& path) {
  detail::PngPixels px{img.width, img.height, 3, 8, {}};
  px.data.resize(static_cast<std::size_t>(3) * img.width * img.height);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      for (int c = 0; c < 3; ++c)
        px.data[(static_cast<std::size_t>(v) * img.width + u) * 3 + c] =
            static_cast<std::uint16_t>(std::lround(std::clamp(img.at(c, u, v), 0.0, 1.0) * 255.0));
  detail::write_png(path, px);
}

/// Writes a single-channel map as PFM; values are stored as float32.
inline void save_scalar_pfm(const fs::path& path, int width, int height, const std::vector<double>& values) {
  FloatGrid g{width, height, 1, {}};
  g.data.assign(values.begin(), values.end());
  write_pfm(path, g);
}

// ---------------------------------------------------------------------------
// Depth maps. PFM stores metric depth directly; 16-bit PNG stores raw
// integers with depth = raw * scale, the scale read from a "<path>.scale"
// sidecar unless given. Non-positive or non-finite values load as invalid.

inline DepthMap load_depth(const fs::path& path, std::optional<double> png_scale = std::nullopt) {
  if (detail::has_ext(path, ".pfm")) {
    const auto g = read_pfm(path);
    if (g.channels != 1) fail(ErrorCode::kParse, path.string() + ": depth PFM must be single channel");
    DepthMap d(g.width, g.height);
    for (int v = 0; v < g.height; ++v)
      for (int u = 0; u < g.width; ++u) d.set(u, v, g.data[static_cast<std::size_t>(v) * g.width + u]);
    return d;
  }
  if (detail::has_ext(path, ".png")) {
    double scale = 0.0;
    if (png_scale) {
      scale = *png_scale;
    } else {
      fs::path sidecar = path;
      sidecar += ".scale";
      auto is = detail::open_in(sidecar, false);
      if (!(is >> scale)) fail(ErrorCode::kParse, sidecar.string() + ": expected a scale factor");
    }
    if (!(scale > 0.0)) fail(ErrorCode::kValidation, path.string() + ": depth scale must be positive");
    const auto px = detail::read_png(path);
    if (px.channels != 1 || px.bit_depth != 16) fail(ErrorCode::kParse, path.string() + ": depth PNG must be 16-bit gray");
    DepthMap d(px.width, px.height);
    for (int v = 0; v < px.height; ++v)
      for (int u = 0; u < px.width; ++u) {
        const auto raw = px.data[static_cast<std::size_t>(v) * px.width + u];
        d.set(u, v, raw == 0 ? 0.0 : raw * scale);
      }
    return d;
  }
  fail(ErrorCode::kParse, path.string() + ": unsupported depth format (expected .pfm or .png)");
}

inline void save_depth(const DepthMap& d, const fs::path& path) {
  FloatGrid g{d.width, d.height, 1, {}};
  g.data.resize(d.depth.size());
  for (std::size_t i = 0; i < d.depth.size(); ++i) g.data[i] = d.valid[i] ? static_cast<float>(d.depth[i]) : 0.0f;
  write_pfm(path, g);
}

/// Quantizes to raw = round(depth / scale) and writes the "<path>.scale" sidecar.
inline void save_depth_png(const DepthMap& d, const fs::path& path, double scale) {
  detail::PngPixels px{d.width, d.height, 1, 16, {}};
  px.data.resize(d.depth.size());
  for (std::size_t i = 0; i < d.depth.size(); ++i)
    px.data[i] = d.valid[i] ? static_cast<std::uint16_t>(std::clamp<long>(std::lround(d.depth[i] / scale), 1, 65535)) : 0;
  detail::write_png(path, px);
  fs::path sidecar = path;
  sidecar += ".scale";
  auto os = detail::open_out(sidecar, false);
  os << std::setprecision(17) << scale << "\n";
}

// ---------------------------------------------------------------------------
// Correspondences

struct Match {
  Vec2 p;  // pixel in view i
  Vec2 q;  // pixel in view j
  double confidence = 1.0;
};

struct CorrespondenceSet {
  int i = 0;
  int j = 0;
  std::vector<Match> matches;
};

/// Checks pixel bounds, confidence range and uniqueness of p.
inline void validate_correspondences(const CorrespondenceSet& set, const CameraIntrinsics& intr_i,
                                     const CameraIntrinsics& intr_j) {
  auto inside = [](const Vec2& x, const CameraIntrinsics& k) {
    return x.x() >= 0.0 && x.y() >= 0.0 && x.x() <= k.width - 1 && x.y() <= k.height - 1;
  };
  std::set<std::pair<double, double>> seen;
  for (std::size_t k = 0; k < set.matches.size(); ++k) {
    const auto& m = set.matches[k];
    const std::string where = "pair (" + std::to_string(set.i) + "," + std::to_string(set.j) + ") row " + std::to_string(k);
    if (!(m.confidence > 0.0 && m.confidence <= 1.0)) fail(ErrorCode::kValidation, where + ": confidence outside (0,1]");
    if (!inside(m.p, intr_i) || !inside(m.q, intr_j)) fail(ErrorCode::kDimensionMismatch, where + ": pixel outside image");
    if (!seen.emplace(m.p.x(), m.p.y()).second) fail(ErrorCode::kValidation, where + ": duplicate p entry");
  }
}

inline CorrespondenceSet load_correspondences(const fs::path& path) {
  auto is = detail::open_in(path, false);
  CorrespondenceSet set;
  long count = -1;
  if (!(is >> set.i >> set.j >> count) || count < 0)
    fail(ErrorCode::kParse, path.string() + ": line 1: expected header 'i j count'");
  set.matches.reserve(static_cast<std::size_t>(count));
  for (long k = 0; k < count; ++k) {
    Match m;
    if (!(is >> m.p.x() >> m.p.y() >> m.q.x() >> m.q.y() >> m.confidence))
      fail(ErrorCode::kParse, path.string() + ": line " + std::to_string(k + 2) + ": expected 'u1 v1 u2 v2 conf'");
    if (!(m.confidence > 0.0 && m.confidence <= 1.0))
      fail(ErrorCode::kValidation, path.string() + ": line " + std::to_string(k + 2) + ": confidence outside (0,1]");
    set.matches.push_back(m);
  }
  return set;
}

inline void save_correspondences(const CorrespondenceSet& set, const fs::path& path) {
  auto os = detail::open_out(path, false);
  os << set.i << " " << set.j << " " << set.matches.size() << "\n" << std::setprecision(17);
  for (const auto& m : set.matches)
    os << m.p.x() << " " << m.p.y() << " " << m.q.x() << " " << m.q.y() << " " << m.confidence << "\n";
}

// ---------------------------------------------------------------------------
// Feature maps: magic "SPFT", version byte, u32 h, w, d, float32 payload
// (row-major cells, d contiguous values each). Normalized on load.

inline void save_features(const FeatureMap& f, const fs::path& path) {
  auto os = detail::open_out(path, true);
  os.write(kFeatureMagic, 4);
  detail::write_le<std::uint8_t>(os, kFeatureFormatVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.height));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.width));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.dim));
  for (double x : f.data) detail::write_le<float>(os, static_cast<float>(x));
}

inline FeatureMap load_features(const fs::path& path) {
  auto is = detail::open_in(path, true);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) fail(ErrorCode::kParse, path.string() + ": bad feature magic");
  const auto version = detail::read_le<std::uint8_t>(is, path.string());
  if (version != kFeatureFormatVersion) fail(ErrorCode::kUnknownVersion, path.string() + ": feature version " + std::to_string(version));
  const auto h = detail::read_le<std::uint32_t>(is, path.string());
  const auto w = detail::read_le<std::uint32_t>(is, path.string());
  const auto d = detail::read_le<std::uint32_t>(is, path.string());
  if (h == 0 || w == 0 || d == 0) fail(ErrorCode::kParse, path.string() + ": empty feature grid");
  FeatureMap f(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
  for (auto& x : f.data) x = detail::read_le<float>(is, path.string());
  f.normalize();
  return f;
}

// ---------------------------------------------------------------------------
// Gaussian scenes: magic "SPGS", version byte, u32 view count, u32 per-view
// counts, then per Gaussian: center 3f, opacity f, covariance upper triangle
// (xx xy xz yy yz zz) 6f, color 3f, u32 view, u32 pixel u, u32 pixel v.

inline void save_scene(const GaussianScene& scene, const fs::path& path) {
  auto os = detail::open_out(path, true);
  os.write(kSceneMagic, 4);
  detail::write_le<std::uint8_t>(os, kSceneFormatVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(scene.view_counts.size()));
  for (auto c : scene.view_counts) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c));
  auto f = [&](double x) { detail::write_le<float>(os, static_cast<float>(x)); };
  for (const auto& g : scene.gaussians) {
    for (int k = 0; k < 3; ++k) f(g.center[k]);
    f(g.opacity);
    f(g.covariance(0, 0));
    f(g.covariance(0, 1));
    f(g.covariance(0, 2));
    f(g.covariance(1, 1));
    f(g.covariance(1, 2));
    f(g.covariance(2, 2));
    for (int k = 0; k < 3; ++k) f(g.color[k]);
    detail::write_le<std::uint32_t>(os, g.view);
    detail::write_le<std::uint32_t>(os, g.pixel_u);
    detail::write_le<std::uint32_t>(os, g.pixel_v);
  }
  if (!os) fail(ErrorCode::kIo, "failed writing " + path.string());
}

inline GaussianScene load_scene(const fs::path& path) {
  auto is = detail::open_in(path, true);
  const std::string name = path.string();
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kSceneMagic, 4) != 0) fail(ErrorCode::kParse, name + ": bad scene magic");
  const auto version = detail::read_le<std::uint8_t>(is, name);
  if (version != kSceneFormatVersion) fail(ErrorCode::kUnknownVersion, name + ": scene version " + std::to_string(version));
  const auto views = detail::read_le<std::uint32_t>(is, name);
  GaussianScene scene;
  std::size_t total = 0;
  for (std::uint32_t v = 0; v < views; ++v) {
    scene.view_counts.push_back(detail::read_le<std::uint32_t>(is, name));
    total += scene.view_counts.back();
  }
  scene.gaussians.resize(total);
  auto f = [&]() { return static_cast<double>(detail::read_le<float>(is, name)); };
  for (auto& g : scene.gaussians) {
    for (int k = 0; k < 3; ++k) g.center[k] = f();
    g.opacity = f();
    const double xx = f(), xy = f(), xz = f(), yy = f(), yz = f(), zz = f();
    g.covariance << xx, xy, xz, xy, yy, yz, xz, yz, zz;
    for (int k = 0; k < 3; ++k) g.color[k] = f();
    g.view = detail::read_le<std::uint32_t>(is, name);
    g.pixel_u = detail::read_le<std::uint32_t>(is, name);
    g.pixel_v = detail::read_le<std::uint32_t>(is, name);
    if (!is_valid_gaussian(g)) fail(ErrorCode::kValidation, name + ": invalid Gaussian record");
  }
  scene.bounds = bounding_box(scene.gaussians);
  return scene;
}

// ---------------------------------------------------------------------------
// Pose text: 3 rows of 4 numbers ([R|t], row-major), poses separated by blank
// lines. Rotations off SO(3) by more than 1e-6 are rejected; smaller
// deviations (limited printed precision) are projected back with an SVD.

inline std::vector<Pose> parse_poses(std::istream& is, const std::string& name) {
  std::vector<Pose> poses;
  std::vector<double> vals;
  std::string line;
  int lineno = 0;
  auto flush = [&]() {
    if (vals.empty()) return;
    if (vals.size() != 12)
      fail(ErrorCode::kParse, name + ": line " + std::to_string(lineno) + ": pose block needs 12 numbers, got " +
                                  std::to_string(vals.size()));
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = vals[r * 4 + c];
      p.translation[r] = vals[r * 4 + 3];
    }
    if (!is_rotation(p.rotation, 1e-6)) fail(ErrorCode::kValidation, name + ": pose " + std::to_string(poses.size()) + " rotation not in SO(3)");
    if (!is_rotation(p.rotation, 1e-12)) p.rotation = project_to_so3(p.rotation);
    poses.push_back(p);
    vals.clear();
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
      flush();
      continue;
    }
    if (line[first] == '#') continue;
    std::istringstream ls(line);
    double x;
    int n = 0;
    while (ls >> x) {
      vals.push_back(x);
      ++n;
    }
    if (!ls.eof() || n != 4) fail(ErrorCode::kParse, name + ": line " + std::to_string(lineno) + ": expected 4 numbers");
    if (vals.size() == 12) flush();
  }
  flush();
  return poses;
}

inline std::vector<Pose> load_poses(const fs::path& path) {
  auto is = detail::open_in(path, false);
  return parse_poses(is, path.string());
}

inline void write_pose(std::ostream& os, const Pose& p) {
  os << std::setprecision(17);
  for (int r = 0; r < 3; ++r)
    os << p.rotation(r, 0) << " " << p.rotation(r, 1) << " " << p.rotation(r, 2) << " " << p.translation[r] << "\n";
}

inline void save_poses(const std::vector<Pose>& poses, const fs::path& path) {
  auto os = detail::open_out(path, false);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    if (k) os << "\n";
    write_pose(os, poses[k]);
  }
}

// ---------------------------------------------------------------------------
// Scene manifest (JSON). Grammar:
//
//   {
//     "near": <float>, "far": <float>,
//     "views": [ { "image": <path>, "depth": <path>, "depth_scale": <float, png only, optional>,
//                  "intrinsics": {"fx","fy","cx","cy","width","height"},
//                  "features": <path, optional>, "gt_pose": <path, optional>,
//                  "role": "context" | "target" (optional, default context) } ... ],
//     "pairs": [ { "i": <int>, "j": <int>, "matches": <path> } ... ]
//   }
//
// Relative paths resolve against the manifest's directory.

struct ViewEntry {
  fs::path image;
  fs::path depth;
  std::optional<double> depth_scale;
  CameraIntrinsics intrinsics;
  std::optional<fs::path> features;
  std::optional<fs::path> gt_pose;
  bool is_target = false;
};

struct PairEntry {
  int i = 0;
  int j = 0;
  fs::path matches;
};

struct SceneManifest {
  fs::path base_dir;
  std::vector<ViewEntry> views;
  std::vector<PairEntry> pairs;
  double near = 0.0;
  double far = 0.0;

  std::vector<int> context_views() const {
    std::vector<int> out;
    for (int v = 0; v < static_cast<int>(views.size()); ++v)
      if (!views[v].is_target) out.push_back(v);
    return out;
  }
  std::vector<int> target_views() const {
    std::vector<int> out;
    for (int v = 0; v < static_cast<int>(views.size()); ++v)
      if (views[v].is_target) out.push_back(v);
    return out;
  }
  bool has_ground_truth() const {
    return !views.empty() && std::all_of(views.begin(), views.end(), [](const ViewEntry& v) { return v.gt_pose.has_value(); });
  }
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) fail(ErrorCode::kParse, where + "." + key + ": missing field");
  return obj.at(key);
}

template <typename T>
T field(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, where + "." + key + ": wrong type (" + e.what() + ")");
  }
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const SceneManifest& m) {
  nlohmann::json j;
  j["near"] = m.near;
  j["far"] = m.far;
  j["views"] = nlohmann::json::array();
  for (const auto& v : m.views) {
    nlohmann::json jv;
    jv["image"] = v.image.generic_string();
    jv["depth"] = v.depth.generic_string();
    if (v.depth_scale) jv["depth_scale"] = *v.depth_scale;
    jv["intrinsics"] = {{"fx", v.intrinsics.fx}, {"fy", v.intrinsics.fy}, {"cx", v.intrinsics.cx},
                        {"cy", v.intrinsics.cy}, {"width", v.intrinsics.width}, {"height", v.intrinsics.height}};
    if (v.features) jv["features"] = v.features->generic_string();
    if (v.gt_pose) jv["gt_pose"] = v.gt_pose->generic_string();
    jv["role"] = v.is_target ? "target" : "context";
    j["views"].push_back(jv);
  }
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : m.pairs) j["pairs"].push_back({{"i", p.i}, {"j", p.j}, {"matches", p.matches.generic_string()}});
  return j;
}

inline void save_manifest(const SceneManifest& m, const fs::path& path) {
  auto os = detail::open_out(path, false);
  os << std::setprecision(17) << manifest_to_json(m).dump(2) << "\n";
}

inline SceneManifest load_manifest(const fs::path& path) {
  auto is = detail::open_in(path, false);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  SceneManifest m;
  m.base_dir = path.parent_path();
  const std::string root = "manifest";
  m.near = detail::field<double>(j, "near", root);
  m.far = detail::field<double>(j, "far", root);
  if (!(m.near > 0.0 && m.near < m.far && std::isfinite(m.far)))
    fail(ErrorCode::kBounds, path.string() + ": require 0 < near < far (finite)");

  auto resolve = [&](const std::string& p) {
    fs::path r(p);
    return r.is_absolute() ? r : m.base_dir / r;
  };
  auto must_exist = [](const fs::path& p, const std::string& where) {
    if (!fs::exists(p)) fail(ErrorCode::kMissingFile, where + ": file not found: " + p.string());
  };

  const auto& views = detail::require(j, "views", root);
  if (!views.is_array() || views.empty()) fail(ErrorCode::kParse, root + ".views: expected non-empty array");
  for (std::size_t k = 0; k < views.size(); ++k) {
    const std::string where = root + ".views[" + std::to_string(k) + "]";
    const auto& jv = views[k];
    ViewEntry v;
    v.image = resolve(detail::field<std::string>(jv, "image", where));
    v.depth = resolve(detail::field<std::string>(jv, "depth", where));
    if (jv.contains("depth_scale")) v.depth_scale = detail::field<double>(jv, "depth_scale", where);
    const auto& ji = detail::require(jv, "intrinsics", where);
    const std::string wi = where + ".intrinsics";
    v.intrinsics.fx = detail::field<double>(ji, "fx", wi);
    v.intrinsics.fy = detail::field<double>(ji, "fy", wi);
    v.intrinsics.cx = detail::field<double>(ji, "cx", wi);
    v.intrinsics.cy = detail::field<double>(ji, "cy", wi);
    v.intrinsics.width = detail::field<int>(ji, "width", wi);
    v.intrinsics.height = detail::field<int>(ji, "height", wi);
    if (!v.intrinsics.valid()) fail(ErrorCode::kValidation, wi + ": require fx,fy > 0 and 0 < cx < width, 0 < cy < height");
    if (jv.contains("features")) v.features = resolve(detail::field<std::string>(jv, "features", where));
    if (jv.contains("gt_pose")) v.gt_pose = resolve(detail::field<std::string>(jv, "gt_pose", where));
    if (jv.contains("role")) {
      const auto role = detail::field<std::string>(jv, "role", where);
      if (role != "context" && role != "target") fail(ErrorCode::kParse, where + ".role: expected 'context' or 'target'");
      v.is_target = role == "target";
    }
    must_exist(v.image, where + ".image");
    if (!v.is_target) must_exist(v.depth, where + ".depth");
    if (v.features) must_exist(*v.features, where + ".features");
    if (v.gt_pose) must_exist(*v.gt_pose, where + ".gt_pose");
    m.views.push_back(std::move(v));
  }

  const int n = static_cast<int>(m.views.size());
  if (j.contains("pairs")) {
    const auto& pairs = j.at("pairs");
    if (!pairs.is_array()) fail(ErrorCode::kParse, root + ".pairs: expected array");
    std::set<std::pair<int, int>> seen;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const std::string where = root + ".pairs[" + std::to_string(k) + "]";
      PairEntry p;
      p.i = detail::field<int>(pairs[k], "i", where);
      p.j = detail::field<int>(pairs[k], "j", where);
      if (p.i < 0 || p.j < 0 || p.i >= n || p.j >= n)
        fail(ErrorCode::kIndexOutOfRange, where + ": view index out of range for " + std::to_string(n) + " views");
      if (!(p.i < p.j)) fail(ErrorCode::kValidation, where + ": require i < j");
      if (m.views[p.i].is_target || m.views[p.j].is_target) fail(ErrorCode::kValidation, where + ": pairs must join context views");
      if (!seen.emplace(p.i, p.j).second) fail(ErrorCode::kValidation, where + ": duplicate pair");
      p.matches = resolve(detail::field<std::string>(pairs[k], "matches", where));
      must_exist(p.matches, where + ".matches");
      m.pairs.push_back(std::move(p));
    }
  }
  if (m.context_views().empty()) fail(ErrorCode::kValidation, root + ": no context views");
  return m;
}

}  // namespace splatalign
