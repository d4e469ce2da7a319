#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "splatalign/error.hpp"
#include "splatalign/image.hpp"

namespace splatalign {

inline void require_same_size(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) fail(ErrorCode::kDimensionMismatch, "image sizes differ");
}

/// Mean squared error over all pixels and channels.
inline double loss_photometric(const Image& rendered, const Image& target) {
  require_same_size(rendered, target);
  if (rendered.data.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    s += d * d;
  }
  return s / static_cast<double>(rendered.data.size());
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2 for data in [0, 1]. Statistics use population (1/N)
/// normalization; the mean is taken over window centers at least 5 pixels
/// from the border and averaged over the three channels.
inline double ssim(const Image& a, const Image& b) {
  require_same_size(a, b);
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (a.width < 2 * kRadius + 1 || a.height < 2 * kRadius + 1)
    fail(ErrorCode::kInvalidInput, "SSIM needs images of at least 11x11");
  std::array<double, 2 * kRadius + 1> w{};
  double wsum = 0.0;
  for (int k = -kRadius; k <= kRadius; ++k) wsum += (w[k + kRadius] = std::exp(-0.5 * k * k / (kSigma * kSigma)));
  for (auto& x : w) x /= wsum;

  const int W = a.width, H = a.height;
  const int ow = W - 2 * kRadius;
  std::vector<double> tmp(static_cast<std::size_t>(5) * ow * H);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    // Horizontal pass of x, y, x^2, y^2, xy.
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < ow; ++u) {
        double s[5] = {0, 0, 0, 0, 0};
        for (int k = 0; k <= 2 * kRadius; ++k) {
          const double x = a.at(c, u + k, v), y = b.at(c, u + k, v);
          s[0] += w[k] * x;
          s[1] += w[k] * y;
          s[2] += w[k] * x * x;
          s[3] += w[k] * y * y;
          s[4] += w[k] * x * y;
        }
        for (int q = 0; q < 5; ++q) tmp[(static_cast<std::size_t>(q) * H + v) * ow + u] = s[q];
      }
    double sum = 0.0;
    for (int v = kRadius; v < H - kRadius; ++v)
      for (int u = 0; u < ow; ++u) {
        double s[5] = {0, 0, 0, 0, 0};
        for (int k = 0; k <= 2 * kRadius; ++k)
          for (int q = 0; q < 5; ++q) s[q] += w[k] * tmp[(static_cast<std::size_t>(q) * H + v - kRadius + k) * ow + u];
        const double mx = s[0], my = s[1];
        const double vx = s[2] - mx * mx, vy = s[3] - my * my, cxy = s[4] - mx * my;
        sum += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      }
    total += sum / (static_cast<double>(ow) * (H - 2 * kRadius));
  }
  return total / 3.0;
}

inline double loss_ssim(const Image& rendered, const Image& target) { return 1.0 - ssim(rendered, target); }

}  // namespace splatalign
