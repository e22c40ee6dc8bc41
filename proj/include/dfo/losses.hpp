#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "dfo/geometry.hpp"
#include "dfo/grid.hpp"
#include "dfo/pyramid.hpp"
#include "dfo/selection.hpp"

namespace dfo {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kClipDssim = 0.15;
inline constexpr double kClipL1 = 0.3;

/// Mixing and regularization weights of the joint objective.
struct LossWeights {
  double lambda_sm = 0.1;   // smoothness
  double lambda_sp = 0.01;  // sparsity
  double lambda_ae = 0.01;  // reconstruction
  double alpha = 0.85;      // SSIM share of the appearance term
};

/// Backward-warps the source image into the target frame: output pixel u takes
/// the bilinear sample of I_s at omega(u, Z_t(u), T). The validity grid is 1
/// where the warped point projects in front of the camera and inside the
/// source support, 0 elsewhere (those output pixels are left at 0).
inline std::pair<Grid, Grid> warp_image(const Grid& source, const Grid& depth,
                                        const RigidTransform& T, const Intrinsics& K) {
  if (source.height() != depth.height() || source.width() != depth.width())
    throw ShapeMismatch("warp_image: source and depth extents differ");
  if (depth.channels() != 1) throw ShapeMismatch("warp_image: depth must have C=1");
  const int H = source.height(), W = source.width(), C = source.channels();
  Grid warped(H, W, C, source.tag());
  Grid validity(H, W, 1, GridTag::Mask);
  std::vector<double> sample(static_cast<size_t>(C));
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double z = depth.at(y, x);
      if (!(z > 0.0)) continue;
      WarpedPoint wp;
      try {
        wp = warp_point(Pixel{double(x), double(y)}, z, T, K);
      } catch (const PointBehindCamera&) {
        continue;
      }
      if (!detail::bilinear_into(source, wp.pixel.u, wp.pixel.v, sample.data())) continue;
      for (int c = 0; c < C; ++c) warped.at(y, x, c) = sample[c];
      validity.at(y, x) = 1.0;
    }
  }
  return {std::move(warped), std::move(validity)};
}

/// Per-pixel, per-channel SSIM with 3x3 uniform block statistics (replicate
/// border padding) and the standard stabilizers for unit dynamic range.
inline Grid ssim(const Grid& a, const Grid& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("ssim: operand shapes differ");
  const int H = a.height(), W = a.width(), C = a.channels();
  Grid out(H, W, C, GridTag::Image);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < C; ++c) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, H - 1);
            const int xx = std::clamp(x + dx, 0, W - 1);
            const double va = a.at(yy, xx, c), vb = b.at(yy, xx, c);
            ma += va;
            mb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        ma /= 9.0;
        mb /= 9.0;
        const double var_a = saa / 9.0 - ma * ma;
        const double var_b = sbb / 9.0 - mb * mb;
        const double cov = sab / 9.0 - ma * mb;
        out.at(y, x, c) = ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
                          ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
      }
    }
  }
  return out;
}

/// Soft-thresholds an error value: identity below eps, slope 0.1 above, with
/// the two branches meeting exactly at the knee.
inline double robust_clip(double x, double eps) {
  return x < eps ? x : eps + 0.1 * (x - eps);
}

/// Mean photometric error over usable pixels: a pixel is usable when its whole
/// 3x3 SSIM support window (clamped at image borders) is valid, so block
/// statistics never mix in unwarped values. Per usable pixel the error is
///   alpha * clip(DSSIM, 0.15) + (1 - alpha) * clip(L1, 0.3)
/// with DSSIM and L1 averaged over channels.
inline double appearance_loss(const Grid& target, const Grid& warped, const Grid& validity,
                              double alpha = 0.85, double clip_dssim = kClipDssim,
                              double clip_l1 = kClipL1) {
  if (!target.same_shape(warped))
    throw ShapeMismatch("appearance_loss: image shapes differ");
  if (validity.height() != target.height() || validity.width() != target.width() ||
      validity.channels() != 1)
    throw ShapeMismatch("appearance_loss: validity shape");
  const int H = target.height(), W = target.width(), C = target.channels();
  const Grid s = ssim(target, warped);
  double acc = 0.0;
  long count = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      bool usable = validity.at(y, x) != 0.0;
      for (int dy = -1; dy <= 1 && usable; ++dy)
        for (int dx = -1; dx <= 1 && usable; ++dx) {
          const int yy = std::clamp(y + dy, 0, H - 1);
          const int xx = std::clamp(x + dx, 0, W - 1);
          usable = validity.at(yy, xx) != 0.0;
        }
      if (!usable) continue;
      double dssim = 0.0, l1 = 0.0;
      for (int c = 0; c < C; ++c) {
        dssim += (1.0 - s.at(y, x, c)) / 2.0;
        l1 += std::abs(target.at(y, x, c) - warped.at(y, x, c));
      }
      dssim /= C;
      l1 /= C;
      acc += alpha * robust_clip(dssim, clip_dssim) +
             (1.0 - alpha) * robust_clip(l1, clip_l1);
      ++count;
    }
  }
  if (count == 0) throw NoValidPixels();
  return acc / static_cast<double>(count);
}

/// Edge-aware first-order depth smoothness: forward differences of Z damped by
/// the channel-mean absolute image gradient. The x and y terms are each
/// averaged over their own difference positions and summed.
inline double smoothness_loss(const Grid& depth, const Grid& image) {
  if (depth.height() != image.height() || depth.width() != image.width())
    throw ShapeMismatch("smoothness_loss: extents differ");
  if (depth.channels() != 1) throw ShapeMismatch("smoothness_loss: depth must have C=1");
  const int H = depth.height(), W = depth.width(), C = image.channels();
  double term_x = 0.0, term_y = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 1 < W; ++x) {
      double gi = 0.0;
      for (int c = 0; c < C; ++c) gi += std::abs(image.at(y, x + 1, c) - image.at(y, x, c));
      term_x += std::abs(depth.at(y, x + 1) - depth.at(y, x)) * std::exp(-gi / C);
    }
  for (int y = 0; y + 1 < H; ++y)
    for (int x = 0; x < W; ++x) {
      double gi = 0.0;
      for (int c = 0; c < C; ++c) gi += std::abs(image.at(y + 1, x, c) - image.at(y, x, c));
      term_y += std::abs(depth.at(y + 1, x) - depth.at(y, x)) * std::exp(-gi / C);
    }
  double loss = 0.0;
  if (W > 1) loss += term_x / (static_cast<double>(H) * (W - 1));
  if (H > 1) loss += term_y / (static_cast<double>(H - 1) * W);
  return loss;
}

/// One frame of a snippet: image and depth pyramids plus the camera-from-world
/// pose used to derive pairwise relative transforms.
struct SnippetFrame {
  Pyramid image;
  Pyramid depth;
  RigidTransform pose;
};

struct AppearanceTerm {
  int target = 0, source = 0, level = 1;
  double value = 0.0;
};

struct SmoothnessTerm {
  int frame = 0, level = 1;
  double value = 0.0;  // raw loss, before the 1/2^(l-1) level weight
};

/// Aggregated objective. The level weight 1/2^(l-1) is folded into the
/// smoothness aggregate; the lambda factors are applied only in total, so the
/// breakdown stays linear in each lambda.
struct LossBreakdown {
  std::vector<AppearanceTerm> appearance_terms;
  std::vector<SmoothnessTerm> smoothness_terms;
  double appearance = 0.0;
  double smoothness = 0.0;
  double sparsity = 0.0;
  double reconstruction = 0.0;
  double total = 0.0;
};

/// Joint objective over a snippet: appearance summed over ordered frame pairs
/// (i != j) and all 4 levels, smoothness per frame and level with weight
/// 1/2^(l-1), the KL sparsity penalty per mask, and mean-squared
/// reconstruction error per provided grid pair.
inline LossBreakdown total_loss(
    const std::vector<SnippetFrame>& frames,
    const std::vector<std::array<SelectionMask, kPyramidLevels>>& masks,
    const LossWeights& weights, const std::array<double, kPyramidLevels>& rho_targets,
    const std::vector<std::pair<Grid, Grid>>& reconstructions,
    double clip_dssim = kClipDssim, double clip_l1 = kClipL1) {
  if (frames.size() < 2) throw ShapeMismatch("total_loss: need at least 2 frames");
  if (!masks.empty() && masks.size() != frames.size())
    throw ShapeMismatch("total_loss: mask list must match the frame count");
  LossBreakdown out;

  const int n = static_cast<int>(frames.size());
  for (int t = 0; t < n; ++t) {
    for (int s = 0; s < n; ++s) {
      if (s == t) continue;
      const RigidTransform rel = compose(frames[s].pose, inverse(frames[t].pose));
      for (int l = 1; l <= kPyramidLevels; ++l) {
        const auto [warped, validity] =
            warp_image(frames[s].image.level(l), frames[t].depth.level(l), rel,
                       frames[t].image.K(l));
        const double v = appearance_loss(frames[t].image.level(l), warped, validity,
                                         weights.alpha, clip_dssim, clip_l1);
        out.appearance_terms.push_back({t, s, l, v});
        out.appearance += v;
      }
    }
  }

  for (int f = 0; f < n; ++f) {
    for (int l = 1; l <= kPyramidLevels; ++l) {
      const double v = smoothness_loss(frames[f].depth.level(l), frames[f].image.level(l));
      out.smoothness_terms.push_back({f, l, v});
      out.smoothness += v / std::pow(2.0, l - 1);
    }
  }

  for (const auto& frame_masks : masks)
    for (int l = 1; l <= kPyramidLevels; ++l)
      out.sparsity += sparsity_kl(frame_masks[l - 1], rho_targets[l - 1]);

  for (const auto& [input, recon] : reconstructions) {
    if (!input.same_shape(recon))
      throw ShapeMismatch("total_loss: reconstruction pair shapes differ");
    double mse = 0.0;
    for (size_t i = 0; i < input.data().size(); ++i) {
      const double d = input.data()[i] - recon.data()[i];
      mse += d * d;
    }
    out.reconstruction += mse / static_cast<double>(input.data().size());
  }

  out.total = out.appearance + weights.lambda_sm * out.smoothness +
              weights.lambda_sp * out.sparsity + weights.lambda_ae * out.reconstruction;
  return out;
}

/// Converts a network-style disparity grid (values in [0,1]) to metric depth
/// via depth = 1 / (10 x + 0.01). Ingestion helper only; no normalization is
/// applied anywhere else.
inline Grid disparity_to_depth(const Grid& disparity) {
  Grid depth = disparity.with_tag(GridTag::Depth);
  for (double& v : depth.data()) v = 1.0 / (10.0 * v + 0.01);
  return depth;
}

}  // namespace dfo
