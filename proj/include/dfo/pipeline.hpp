#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dfo/config.hpp"
#include "dfo/evalio.hpp"
#include "dfo/grid_io.hpp"
#include "dfo/losses.hpp"
#include "dfo/selection.hpp"
#include "dfo/solver.hpp"
#include "dfo/synthetic.hpp"

namespace dfo {

// Shared plumbing for the command-line runs: on-disk frame layout, feature
// pyramid construction, pairwise solving, and synthetic snippet export. The
// synthetic command writes a directory and then solves it through the same
// loaders as the plain solve command, so both paths see identical
// (float32-quantized) inputs.

enum class FeatureSource { Intensity, Gradient, RandomProjection, External };

inline FeatureSource parse_feature_source(const std::string& s) {
  if (s == "intensity") return FeatureSource::Intensity;
  if (s == "gradient") return FeatureSource::Gradient;
  if (s == "random-projection") return FeatureSource::RandomProjection;
  if (s == "external") return FeatureSource::External;
  throw ConfigError("unknown feature source '" + s + "'");
}

// ---------------------------------------------------------------------------
// Directory layout
// ---------------------------------------------------------------------------

namespace paths {

inline std::string frame_image(int k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d.img.pgm", k);
  return buf;
}

inline std::string frame_image_level(int k, int level) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d.img.l%d.dfog", k, level);
  return buf;
}

inline std::string frame_depth(int k, int level) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d.depth.l%d.dfog", k, level);
  return buf;
}

inline std::string frame_features(int k, int level) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d.feat.l%d.dfog", k, level);
  return buf;
}

inline std::string frame_prob(int k, int level) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d.prob.l%d.dfog", k, level);
  return buf;
}

inline constexpr const char* kIntrinsics = "intrinsics.txt";
inline constexpr const char* kPosesGt = "poses_gt.txt";
inline constexpr const char* kPosesPred = "poses_pred.txt";
inline constexpr const char* kReport = "report.txt";
inline constexpr const char* kSummary = "summary.txt";
inline constexpr const char* kConfigUsed = "config_used.ini";

}  // namespace paths

/// Single line "fx fy cx cy".
inline Intrinsics read_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open intrinsics file: " + path);
  Intrinsics K;
  if (!(in >> K.fx >> K.fy >> K.cx >> K.cy)) throw MalformedLine(path, 1);
  if (!(K.fx > 0.0) || !(K.fy > 0.0)) throw MalformedLine(path, 1);
  return K;
}

inline void write_intrinsics(const Intrinsics& K, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open intrinsics file for writing: " + path);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.12g %.12g %.12g %.12g\n", K.fx, K.fy, K.cx, K.cy);
  out << buf;
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Feature sources
// ---------------------------------------------------------------------------

namespace detail {

/// Channel-mean of a multi-channel image; pass-through for C=1.
inline Grid luminance(const Grid& image) {
  if (image.channels() == 1) return image;
  Grid out(image.height(), image.width(), 1, GridTag::Image);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      double acc = 0.0;
      for (int c = 0; c < image.channels(); ++c) acc += image.at(y, x, c);
      out.at(y, x) = acc / image.channels();
    }
  return out;
}

}  // namespace detail

/// One feature channel: the image intensity itself.
inline Grid intensity_features(const Grid& image_level) {
  const Grid lum = detail::luminance(image_level);
  Grid out(lum.height(), lum.width(), 1, GridTag::Feature);
  out.data() = lum.data();
  return out;
}

/// Three channels: intensity plus central-difference gradients (clamped at
/// the borders).
inline Grid gradient_features(const Grid& image_level) {
  const Grid lum = detail::luminance(image_level);
  const int H = lum.height(), W = lum.width();
  Grid out(H, W, 3, GridTag::Feature);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, W - 1);
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
      out.at(y, x, 0) = lum.at(y, x);
      out.at(y, x, 1) = 0.5 * (lum.at(y, xp) - lum.at(y, xm));
      out.at(y, x, 2) = 0.5 * (lum.at(yp, x) - lum.at(ym, x));
    }
  return out;
}

/// `channels` seeded zero-mean 3x3 stencils applied to the intensity with
/// clamped borders. The stencil bank depends only on the seed, so every frame
/// and level of a run shares one bank.
inline Grid projection_features(const Grid& image_level, int channels, uint64_t seed) {
  if (channels < 1) throw ConfigError("projection_features: channels must be >= 1");
  const Grid lum = detail::luminance(image_level);
  const int H = lum.height(), W = lum.width();
  Grid out(H, W, channels, GridTag::Feature);
  for (int c = 0; c < channels; ++c) {
    Rng rng(Rng::derive(seed, 0x70726f6aULL + static_cast<uint64_t>(c)));
    std::array<double, 9> w;
    double mean = 0.0;
    for (double& v : w) {
      v = rng.uniform_range(-1.0, 1.0);
      mean += v;
    }
    mean /= 9.0;
    double norm = 0.0;
    for (double& v : w) {
      v -= mean;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-9) {
      w.fill(0.0);
      w[4] = 1.0;
    } else {
      for (double& v : w) v /= norm;
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, H - 1);
            const int xx = std::clamp(x + dx, 0, W - 1);
            acc += w[static_cast<size_t>((dy + 1) * 3 + dx + 1)] * lum.at(yy, xx);
          }
        out.at(y, x, c) = acc;
      }
  }
  return out;
}

/// Builds the feature pyramid of one frame from its image: the image is
/// smooth-decimated into a 4-level stack and each level is transformed by the
/// chosen source. External features do not pass through here.
inline Pyramid feature_pyramid_from_image(const Grid& image, const Intrinsics& K,
                                          FeatureSource src, uint64_t seed,
                                          const std::array<LevelConfig, kPyramidLevels>& configs) {
  if (src == FeatureSource::External)
    throw ConfigError("external features are read from files, not computed");
  const Pyramid img = make_image_pyramid(image, K, configs);
  Pyramid out;
  out.intrinsics = img.intrinsics;
  out.config = configs;
  for (int l = 1; l <= kPyramidLevels; ++l) {
    switch (src) {
      case FeatureSource::Intensity:
        out.levels[l - 1] = intensity_features(img.level(l));
        break;
      case FeatureSource::Gradient:
        out.levels[l - 1] = gradient_features(img.level(l));
        break;
      default:
        out.levels[l - 1] =
            projection_features(img.level(l), configs[static_cast<size_t>(l - 1)].channels, seed);
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise normalization
// ---------------------------------------------------------------------------

/// Applies the target grid's per-channel mean/std to both grids. Sharing one
/// statistic keeps the residual structure of the pair intact; independent
/// per-grid normalization would inject a per-channel offset between the two
/// views. Channels with (near) zero spread are centered but not scaled.
inline std::pair<Grid, Grid> normalize_with_target_stats(const Grid& target,
                                                         const Grid& source) {
  if (!target.same_shape(source))
    throw ShapeMismatch("normalize_with_target_stats: grid shapes differ");
  const int H = target.height(), W = target.width(), C = target.channels();
  Grid out_t(H, W, C, GridTag::Feature);
  Grid out_s(source.height(), source.width(), C, GridTag::Feature);
  for (int c = 0; c < C; ++c) {
    double mean = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) mean += target.at(y, x, c);
    mean /= static_cast<double>(H) * W;
    double var = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double d = target.at(y, x, c) - mean;
        var += d * d;
      }
    var /= static_cast<double>(H) * W;
    const double sigma = std::sqrt(var) > 1e-12 ? std::sqrt(var) : 1.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out_t.at(y, x, c) = (target.at(y, x, c) - mean) / sigma;
    for (int y = 0; y < source.height(); ++y)
      for (int x = 0; x < source.width(); ++x)
        out_s.at(y, x, c) = (source.at(y, x, c) - mean) / sigma;
  }
  return {std::move(out_t), std::move(out_s)};
}

// ---------------------------------------------------------------------------
// Frame loading
// ---------------------------------------------------------------------------

struct FrameData {
  Grid image{1, 1, 1, GridTag::Image};
  Pyramid features;
  Pyramid depth;
  MaskPyramid masks;
};

namespace detail {

inline Pyramid pyramid_from_level_files(
    const std::string& dir, int frame, const Intrinsics& K,
    const std::array<LevelConfig, kPyramidLevels>& configs,
    const std::function<std::string(int, int)>& name, GridTag tag, bool decimate_missing) {
  namespace fs = std::filesystem;
  Pyramid p;
  p.config = configs;
  for (int l = 1; l <= kPyramidLevels; ++l) p.intrinsics[l - 1] = rescale_intrinsics(K, l);
  for (int l = 1; l <= kPyramidLevels; ++l) {
    const std::string path = dir + "/" + name(frame, l);
    if (fs::exists(path)) {
      p.levels[l - 1] = read_dfog(path, tag);
    } else if (l == 1 || !decimate_missing) {
      throw IoError("missing required grid file: " + path);
    } else {
      p.levels[l - 1] = decimate2(p.levels[l - 2]);
    }
  }
  return p;
}

}  // namespace detail

/// Loads one frame: image, depth pyramid (level 1 required; missing upper
/// levels decimated), features per the configured source, and selection masks
/// hardened from probability maps when present (full masks otherwise).
inline FrameData load_frame(const std::string& dir, int frame, const RunConfig& cfg,
                            const Intrinsics& K, FeatureSource src) {
  namespace fs = std::filesystem;
  FrameData f;
  f.image = read_pnm(dir + "/" + paths::frame_image(frame));
  f.depth = detail::pyramid_from_level_files(dir, frame, K, cfg.levels, paths::frame_depth,
                                             GridTag::Depth, true);
  if (src == FeatureSource::External) {
    f.features = detail::pyramid_from_level_files(dir, frame, K, cfg.levels,
                                                  paths::frame_features, GridTag::Feature, false);
  } else {
    f.features = feature_pyramid_from_image(f.image, K, src, cfg.seed, cfg.levels);
  }
  for (int l = 1; l <= kPyramidLevels; ++l) {
    const Grid& d = f.depth.level(l);
    const std::string prob_path = dir + "/" + paths::frame_prob(frame, l);
    if (fs::exists(prob_path)) {
      ProbabilityMap pm{read_dfog(prob_path, GridTag::Mask)};
      const uint64_t mask_seed =
          Rng::derive(cfg.seed, 0x6d61736bULL + 1000003ULL * static_cast<uint64_t>(frame) +
                                    static_cast<uint64_t>(l));
      f.masks[static_cast<size_t>(l - 1)] = harden(gumbel_sample(pm, cfg.tau, mask_seed));
    } else {
      f.masks[static_cast<size_t>(l - 1)] =
          SelectionMask{Grid(d.height(), d.width(), 1, GridTag::Mask, 1.0), MaskMode::Hard, 1.0};
    }
  }
  return f;
}

/// Counts consecutive frame images frame_0000, frame_0001, ... in a directory.
inline int count_frames(const std::string& dir) {
  namespace fs = std::filesystem;
  int n = 0;
  while (fs::exists(dir + "/" + paths::frame_image(n))) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Pair solving
// ---------------------------------------------------------------------------

/// Normalizes the pair's features with the target's statistics level by level
/// and runs the coarse-to-fine solve. The estimated transform maps target
/// camera coordinates to source camera coordinates.
inline SolveReport solve_frame_pair(const FrameData& target, const FrameData& source,
                                    const Intrinsics& K, const RunConfig& cfg) {
  Pyramid feat_t = target.features;
  Pyramid feat_s = source.features;
  for (int l = 1; l <= kPyramidLevels; ++l) {
    auto [nt, ns] = normalize_with_target_stats(target.features.level(l),
                                                source.features.level(l));
    feat_t.levels[l - 1] = std::move(nt);
    feat_s.levels[l - 1] = std::move(ns);
  }
  return solve_pyramid(feat_t, feat_s, target.depth, target.masks, K, cfg.solver);
}

/// Rotation error in degrees and translation error relative to the true norm
/// (absolute norm when the true translation vanishes).
struct PairError {
  double rot_deg = 0.0;
  double trans_rel = 0.0;
};

inline PairError pose_error(const RigidTransform& pred, const RigidTransform& gt) {
  PairError e;
  const Matrix3 dR = pred.R * gt.R.transpose();
  const double c = std::clamp(0.5 * (dR.trace() - 1.0), -1.0, 1.0);
  e.rot_deg = std::acos(c) * 180.0 / M_PI;
  const double gn = gt.t.norm();
  const double diff = (pred.t - gt.t).norm();
  e.trans_rel = gn > 1e-12 ? diff / gn : diff;
  return e;
}

// ---------------------------------------------------------------------------
// Synthetic snippet export
// ---------------------------------------------------------------------------

struct SynthSnippet {
  Scene scene;
  TrajectorySpec traj;
  std::vector<FramePyramids> frames;
};

namespace detail {

inline RigidTransform demo_motion(Rng& rng, double t_norm, double max_rot_rad) {
  Vector3 axis(rng.normal(), rng.normal(), rng.normal());
  Vector3 dir(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-9) axis = Vector3(0, 0, 1);
  if (dir.norm() < 1e-9) dir = Vector3(1, 0, 0);
  Twist xi;
  xi.w = axis.normalized() * (max_rot_rad * rng.uniform_range(0.4, 1.0));
  RigidTransform T = exp_map(xi);
  T.t = dir.normalized() * t_norm;
  return T;
}

}  // namespace detail

/// A slanted-plane scene with seeded band-limited texture and a seeded gentle
/// motion (or the identity trajectory), rendered analytically per level.
inline SynthSnippet make_synth_snippet(const RunConfig& cfg) {
  const int H = 144, W = 192;
  const Intrinsics K{90.0, 90.0, (W - 1) / 2.0, (H - 1) / 2.0};
  int channels = 1;
  for (const LevelConfig& lc : cfg.levels) channels = std::max(channels, lc.channels);

  SynthSnippet s;
  s.scene = synth::slanted_plane(H, W, K, Vector3(0.2, 0.15, 1.0), 2.4, channels,
                                 Rng::derive(cfg.seed, 11));

  const double zbar = mean_depth(render_view(s.scene, RigidTransform::identity()).depth);
  for (int k = 0; k + 1 < cfg.snippet_len; ++k) {
    if (cfg.motion == "identity") {
      s.traj.relatives.push_back(RigidTransform::identity());
    } else {
      Rng rng(Rng::derive(cfg.seed, 21 + static_cast<uint64_t>(k)));
      s.traj.relatives.push_back(
          detail::demo_motion(rng, 0.05 * zbar, 1.2 * M_PI / 180.0));
    }
  }
  s.frames = make_snippet_pyramids(s.scene, s.traj, cfg.levels);
  return s;
}

/// Writes a snippet to disk in the directory layout the solve and losses
/// commands read: 8-bit preview image, float32 per-level image/depth/feature
/// grids, intrinsics, and ground-truth camera-to-world poses.
inline void export_snippet(const SynthSnippet& s, const std::string& dir,
                           const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_intrinsics(s.scene.K, dir + "/" + paths::kIntrinsics);
  for (size_t k = 0; k < s.frames.size(); ++k) {
    const FramePyramids& fp = s.frames[k];
    write_pnm(fp.image.level(1), dir + "/" + paths::frame_image(static_cast<int>(k)));
    for (int l = 1; l <= kPyramidLevels; ++l) {
      write_dfog(fp.image.level(l),
                 dir + "/" + paths::frame_image_level(static_cast<int>(k), l));
      write_dfog(fp.depth.level(l), dir + "/" + paths::frame_depth(static_cast<int>(k), l));
      const Grid& full = fp.features.level(l);
      const int keep = std::min(cfg.levels[static_cast<size_t>(l - 1)].channels,
                                full.channels());
      Grid trimmed(full.height(), full.width(), keep, GridTag::Feature);
      for (int y = 0; y < full.height(); ++y)
        for (int x = 0; x < full.width(); ++x)
          for (int c = 0; c < keep; ++c) trimmed.at(y, x, c) = full.at(y, x, c);
      write_dfog(trimmed, dir + "/" + paths::frame_features(static_cast<int>(k), l));
    }
  }
  std::vector<RigidTransform> gt_poses;
  for (const FramePyramids& fp : s.frames) gt_poses.push_back(inverse(fp.pose));
  write_kitti_poses(Trajectory::from_poses(std::move(gt_poses)),
                    dir + "/" + paths::kPosesGt);
}

// ---------------------------------------------------------------------------
// Directory solving (shared by the synthetic and plain solve commands)
// ---------------------------------------------------------------------------

struct DirSolveResult {
  std::vector<RigidTransform> pair_transforms;  // target-to-source per pair
  std::vector<SolveReport> reports;
  Trajectory trajectory;  // integrated camera-to-world
};

/// Loads every frame in the directory, solves consecutive pairs, and
/// integrates the camera-to-world trajectory. Deterministic given (dir,
/// config): loaders quantize through the same float32 files the exporter
/// wrote.
inline DirSolveResult solve_directory(const std::string& dir, const RunConfig& cfg) {
  const int n = count_frames(dir);
  if (n < 2) throw IoError("need at least 2 frames in " + dir);
  const Intrinsics K = read_intrinsics(dir + "/" + paths::kIntrinsics);
  const FeatureSource src = parse_feature_source(cfg.feature_source);

  DirSolveResult out;
  FrameData prev = load_frame(dir, 0, cfg, K, src);
  for (int k = 1; k < n; ++k) {
    FrameData cur = load_frame(dir, k, cfg, K, src);
    SolveReport rep = solve_frame_pair(prev, cur, K, cfg);
    out.pair_transforms.push_back(rep.pose);
    out.reports.push_back(std::move(rep));
    prev = std::move(cur);
  }
  std::vector<RigidTransform> relatives;
  for (const RigidTransform& T : out.pair_transforms) relatives.push_back(inverse(T));
  out.trajectory = integrate(relatives);
  return out;
}

/// Per-pair key-value report blocks, concatenated.
inline std::string dir_report_text(const DirSolveResult& res) {
  std::string out;
  for (size_t k = 0; k < res.reports.size(); ++k) {
    out += "pair=" + std::to_string(k) + "\n";
    out += report_kv(res.reports[k]);
    out += "\n";
  }
  return out;
}

}  // namespace dfo
