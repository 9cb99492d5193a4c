#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "bvib/error.hpp"
#include "bvib/random.hpp"
#include "bvib/shapegen/volume.hpp"

namespace bvib::shapegen {

struct IntensityConfig {
  double foreground_mean = 0.8;
  double background_mean = 0.2;
  double sigma = 0.05;
  bool allow_zero_contrast = false;
};

// Half-sample symmetric reflection of an index into [0, n).
inline int reflect_index(int i, int n) {
  const int period = 2 * n;
  int r = i % period;
  if (r < 0) r += period;
  return r < n ? r : period - 1 - r;
}

// Normalized 1D Gaussian kernel with radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    const double w = std::exp(-0.5 * t * t / (sigma * sigma));
    k[static_cast<std::size_t>(t + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

// Separable Gaussian filter, standard deviation in voxels, reflective boundary.
// sigma == 0 leaves the volume unchanged.
inline Volume gaussian_blur(const Volume& in, double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw DomainError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return in;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> cur(in.data.begin(), in.data.end());
  std::vector<double> next(cur.size());
  const auto& d = in.dims;
  const std::size_t stride[3] = {static_cast<std::size_t>(d[1]) * d[2], static_cast<std::size_t>(d[2]), 1};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[static_cast<std::size_t>(axis)];
    for (int i = 0; i < d[0]; ++i)
      for (int j = 0; j < d[1]; ++j)
        for (int k = 0; k < d[2]; ++k) {
          const int pos[3] = {i, j, k};
          const std::size_t base = in.index(i, j, k) - static_cast<std::size_t>(pos[axis]) * stride[axis];
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t)
            acc += kernel[static_cast<std::size_t>(t + radius)] *
                   cur[base + static_cast<std::size_t>(reflect_index(pos[axis] + t, n)) * stride[axis]];
          next[in.index(i, j, k)] = acc;
        }
    std::swap(cur, next);
  }
  Volume out = in;
  for (std::size_t v = 0; v < cur.size(); ++v) out.data[v] = static_cast<float>(cur[v]);
  return out;
}

// Gaussian foreground/background intensities followed by Gaussian blur.
inline Volume synthesize_image(const Volume& mask, const IntensityConfig& cfg, double blur_size, Rng& rng) {
  if (cfg.foreground_mean == cfg.background_mean && !cfg.allow_zero_contrast)
    throw DomainError("synthesize_image: foreground and background means are equal");
  if (cfg.sigma < 0.0) throw DomainError("synthesize_image: negative intensity sigma");
  Volume img = mask;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t v = 0; v < img.size(); ++v) {
    const float m = mask.data[v];
    if (m != 0.0f && m != 1.0f) throw DomainError("synthesize_image: mask is not binary");
    const double mu = m == 1.0f ? cfg.foreground_mean : cfg.background_mean;
    img.data[v] = static_cast<float>(mu + cfg.sigma * noise(rng));
  }
  return gaussian_blur(img, blur_size);
}

}  // namespace bvib::shapegen
