#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "splatalign/error.hpp"
#include "splatalign/geom.hpp"

namespace splatalign {

/// Planar RGB image with values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // channel-major: c * H * W + v * W + u

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(width) * height; }
  double& at(int c, int u, int v) { return data[c * plane() + static_cast<std::size_t>(v) * width + u]; }
  double at(int c, int u, int v) const { return data[c * plane() + static_cast<std::size_t>(v) * width + u]; }

  Vec3 rgb(int u, int v) const { return {at(0, u, v), at(1, u, v), at(2, u, v)}; }
  void set_rgb(int u, int v, const Vec3& c) {
    at(0, u, v) = c.x();
    at(1, u, v) = c.y();
    at(2, u, v) = c.z();
  }

  double luminance(int u, int v) const { return 0.299 * at(0, u, v) + 0.587 * at(1, u, v) + 0.114 * at(2, u, v); }

  bool operator==(const Image&) const = default;
};

/// Box-filter downsampling by an integer factor (trailing rows/cols dropped).
inline Image downsample(const Image& img, int factor) {
  Image out(img.width / factor, img.height / factor);
  const double norm = 1.0 / (factor * factor);
  for (int c = 0; c < 3; ++c)
    for (int v = 0; v < out.height; ++v)
      for (int u = 0; u < out.width; ++u) {
        double s = 0.0;
        for (int dv = 0; dv < factor; ++dv)
          for (int du = 0; du < factor; ++du) s += img.at(c, u * factor + du, v * factor + dv);
        out.at(c, u, v) = s * norm;
      }
  return out;
}

/// Metric depth per pixel with a validity mask. Invalid pixels store 0.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0), valid(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  bool is_valid(int u, int v) const { return valid[index(u, v)] != 0; }
  double at(int u, int v) const { return depth[index(u, v)]; }

  void set(int u, int v, double d) {
    const auto i = index(u, v);
    if (d > 0.0 && std::isfinite(d)) {
      depth[i] = d;
      valid[i] = 1;
    } else {
      depth[i] = 0.0;
      valid[i] = 0;
    }
  }

  /// Depth at a sub-pixel location: bilinear in inverse depth over the four
  /// neighbours. Neighbours with zero weight are ignored; any other invalid or
  /// out-of-range neighbour makes the lookup fail. Inverse depth is affine in
  /// pixel coordinates on a plane, so planar surfaces are reproduced exactly.
  std::optional<double> sample(const Vec2& p) const {
    if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1 && p.y() <= height - 1)) return std::nullopt;
    const int u0 = static_cast<int>(std::floor(p.x()));
    const int v0 = static_cast<int>(std::floor(p.y()));
    const double fu = p.x() - u0;
    const double fv = p.y() - v0;
    const std::array<double, 4> w = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
    const std::array<int, 4> du = {0, 1, 0, 1};
    const std::array<int, 4> dv = {0, 0, 1, 1};
    double inv = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (w[k] == 0.0) continue;
      const int u = u0 + du[k];
      const int v = v0 + dv[k];
      if (u >= width || v >= height || !is_valid(u, v)) return std::nullopt;
      inv += w[k] / at(u, v);
    }
    return 1.0 / inv;
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto m : valid) n += m;
    return n;
  }
};

/// Per-cell unit-norm descriptors on a (possibly downscaled) grid.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<double> data;  // (v * width + u) * dim + k

  FeatureMap() = default;
  FeatureMap(int h, int w, int d) : height(h), width(w), dim(d), data(static_cast<std::size_t>(h) * w * d, 0.0) {}

  double* cell(int u, int v) { return &data[(static_cast<std::size_t>(v) * width + u) * dim]; }
  const double* cell(int u, int v) const { return &data[(static_cast<std::size_t>(v) * width + u) * dim]; }

  /// Normalizes every cell to unit length; zero cells become the first basis vector.
  void normalize() {
    for (int v = 0; v < height; ++v)
      for (int u = 0; u < width; ++u) {
        double* f = cell(u, v);
        double n = 0.0;
        for (int k = 0; k < dim; ++k) n += f[k] * f[k];
        n = std::sqrt(n);
        if (n < 1e-12) {
          for (int k = 0; k < dim; ++k) f[k] = 0.0;
          f[0] = 1.0;
        } else {
          for (int k = 0; k < dim; ++k) f[k] /= n;
        }
      }
  }
};

}  // namespace splatalign
