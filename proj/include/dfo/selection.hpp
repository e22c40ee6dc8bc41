#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dfo/grid.hpp"
#include "dfo/rng.hpp"

namespace dfo {

inline constexpr double kProbClampLo = 1e-6;
inline constexpr double kProbClampHi = 1.0 - 1e-6;

/// Per-pixel Bernoulli selection probability, clamped to (0,1).
struct ProbabilityMap {
  Grid p;  // C=1, mask-tagged

  static ProbabilityMap uniform(int height, int width, double value) {
    ProbabilityMap m{Grid(height, width, 1, GridTag::Mask,
                          std::clamp(value, kProbClampLo, kProbClampHi))};
    return m;
  }
};

enum class MaskMode { Soft, Hard };

/// Per-pixel selection weights. Soft masks carry relaxed weights in (0,1);
/// hard masks carry exact {0,1} indicators.
struct SelectionMask {
  Grid weights;  // C=1, mask-tagged
  MaskMode mode = MaskMode::Soft;
  double temperature = 1.0;
};

/// Relaxed Bernoulli draw per pixel via the two-class Gumbel-softmax:
///   w = sigmoid((log p + g1 - log(1-p) - g0) / tau)
/// with independent standard Gumbel noise (g1, g0) per pixel. The noise
/// depends only on the seed, so calls that differ only in tau share a noise
/// realization. Deterministic for fixed (p, tau, seed).
inline SelectionMask gumbel_sample(const ProbabilityMap& map, double tau, uint64_t seed) {
  if (!(tau > 0.0)) throw ShapeMismatch("gumbel_sample: temperature must be positive");
  const Grid& p = map.p;
  SelectionMask m{Grid(p.height(), p.width(), 1, GridTag::Mask), MaskMode::Soft, tau};
  Rng rng(seed);
  for (int y = 0; y < p.height(); ++y) {
    for (int x = 0; x < p.width(); ++x) {
      const double g1 = rng.gumbel();
      const double g0 = rng.gumbel();
      const double prob = std::clamp(p.at(y, x), kProbClampLo, kProbClampHi);
      const double logit = (std::log(prob) + g1 - std::log(1.0 - prob) - g0) / tau;
      // Clamp keeps soft weights strictly inside (0,1) even where the sigmoid
      // saturates in floating point.
      m.weights.at(y, x) =
          std::clamp(1.0 / (1.0 + std::exp(-logit)), kProbClampLo, kProbClampHi);
    }
  }
  return m;
}

/// Thresholds a soft mask at 0.5 (ties break upward) and switches to hard mode.
inline SelectionMask harden(const SelectionMask& m) {
  SelectionMask out = m;
  out.mode = MaskMode::Hard;
  for (double& w : out.weights.data()) w = (w >= 0.5) ? 1.0 : 0.0;
  return out;
}

/// KL divergence between the target rate rho and the mean mask activation
/// rho_hat (clamped away from {0,1}):
///   rho log(rho/rho_hat) + (1-rho) log((1-rho)/(1-rho_hat))
inline double sparsity_kl(const SelectionMask& m, double rho) {
  if (!(rho > 0.0 && rho < 1.0))
    throw ShapeMismatch("sparsity_kl: target rate must lie in (0,1)");
  double rho_hat = 0.0;
  for (double w : m.weights.data()) rho_hat += w;
  rho_hat /= static_cast<double>(m.weights.data().size());
  rho_hat = std::clamp(rho_hat, kProbClampLo, kProbClampHi);
  return rho * std::log(rho / rho_hat) +
         (1.0 - rho) * std::log((1.0 - rho) / (1.0 - rho_hat));
}

/// Selection probabilities proportional in rank to local gradient magnitude,
/// calibrated so the map's mean equals rho: pixels are ranked by channel-mean
/// central-difference gradient magnitude (ties share their average rank), the
/// rank is mapped to u = (rank + 0.5)/N, and u is passed through the piecewise
/// linear ramp with mean rho:
///   p = 2 rho u                  when rho <= 1/2
///   p = 1 - 2 (1 - rho) (1 - u)  when rho  > 1/2
inline ProbabilityMap gradient_prior(const Grid& image, double rho) {
  if (image.tag() != GridTag::Image)
    throw ShapeMismatch("gradient_prior expects an image-tagged grid");
  if (!(rho > 0.0 && rho < 1.0))
    throw ShapeMismatch("gradient_prior: target rate must lie in (0,1)");
  const int H = image.height(), W = image.width(), C = image.channels();
  const int N = H * W;

  std::vector<double> mag(static_cast<size_t>(N), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0.0;
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, W - 1);
      const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
      for (int c = 0; c < C; ++c) {
        const double gx = 0.5 * (image.at(y, xp, c) - image.at(y, xm, c));
        const double gy = 0.5 * (image.at(yp, x, c) - image.at(ym, x, c));
        acc += std::sqrt(gx * gx + gy * gy);
      }
      mag[static_cast<size_t>(y) * W + x] = acc / C;
    }

  std::vector<int> order(mag.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mag[a] < mag[b]; });

  // Average rank across ties keeps equal-magnitude pixels at equal probability
  // and makes a constant image collapse to the uniform map p = rho.
  std::vector<double> rank(mag.size(), 0.0);
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && mag[order[j + 1]] == mag[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  ProbabilityMap out{Grid(H, W, 1, GridTag::Mask)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double u = (rank[static_cast<size_t>(y) * W + x] + 0.5) / N;
      const double p = (rho <= 0.5) ? 2.0 * rho * u : 1.0 - 2.0 * (1.0 - rho) * (1.0 - u);
      out.p.at(y, x) = std::clamp(p, kProbClampLo, kProbClampHi);
    }
  return out;
}

}  // namespace dfo
