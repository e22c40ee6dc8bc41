#pragma once

#include <array>

#include "dfo/geometry.hpp"
#include "dfo/grid.hpp"

namespace dfo {

inline constexpr int kPyramidLevels = 4;

/// Per-level settings: feature channels c, comparison patch side k, and the
/// target fraction rho of selected points.
struct LevelConfig {
  int channels = 16;
  int patch = 3;
  double rho = 0.3;
};

inline std::array<LevelConfig, kPyramidLevels> default_level_configs() {
  return {LevelConfig{16, 3, 0.3}, LevelConfig{16, 3, 0.3}, LevelConfig{8, 3, 0.5},
          LevelConfig{8, 1, 0.7}};
}

/// Fixed 4-level stack. Level l (1-based) has dimensions ceil(H/2^(l-1)) x
/// ceil(W/2^(l-1)) and intrinsics rescale_intrinsics(K, l).
struct Pyramid {
  std::array<Grid, kPyramidLevels> levels;
  std::array<Intrinsics, kPyramidLevels> intrinsics;
  std::array<LevelConfig, kPyramidLevels> config = default_level_configs();

  const Grid& level(int l) const { return levels[check(l)]; }
  Grid& level(int l) { return levels[check(l)]; }
  const Intrinsics& K(int l) const { return intrinsics[check(l)]; }
  const LevelConfig& cfg(int l) const { return config[check(l)]; }

 private:
  static int check(int l) {
    if (l < 1 || l > kPyramidLevels) throw InvalidLevel(l);
    return l - 1;
  }
};

/// Smooth-and-decimate chain for image or feature grids.
inline Pyramid make_image_pyramid(const Grid& base, const Intrinsics& K,
                                  const std::array<LevelConfig, kPyramidLevels>& configs =
                                      default_level_configs()) {
  Pyramid p;
  p.levels[0] = base;
  for (int l = 2; l <= kPyramidLevels; ++l) p.levels[l - 1] = downsample2(p.levels[l - 2]);
  for (int l = 1; l <= kPyramidLevels; ++l) p.intrinsics[l - 1] = rescale_intrinsics(K, l);
  p.config = configs;
  return p;
}

/// Plain decimation chain; used for depth and mask grids where smoothing would
/// mix values across surfaces.
inline Pyramid make_decimated_pyramid(const Grid& base, const Intrinsics& K,
                                      const std::array<LevelConfig, kPyramidLevels>& configs =
                                          default_level_configs()) {
  Pyramid p;
  p.levels[0] = base;
  for (int l = 2; l <= kPyramidLevels; ++l) p.levels[l - 1] = decimate2(p.levels[l - 2]);
  for (int l = 1; l <= kPyramidLevels; ++l) p.intrinsics[l - 1] = rescale_intrinsics(K, l);
  p.config = configs;
  return p;
}

/// Mean over all pixels of a level's depth grid; the z-bar used to rescale
/// translation between levels.
inline double mean_depth(const Grid& depth) {
  double acc = 0.0;
  for (double v : depth.data()) acc += v;
  return acc / static_cast<double>(depth.data().size());
}

}  // namespace dfo
