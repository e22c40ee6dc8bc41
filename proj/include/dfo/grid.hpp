#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dfo/errors.hpp"
#include "dfo/geometry.hpp"

namespace dfo {

enum class GridTag { Image, Feature, Depth, Mask };

/// Dense H x W x C array of doubles, row-major with interleaved channels:
/// data[(y*W + x)*C + c]. Grids are treated as immutable once built.
class Grid {
 public:
  Grid() : Grid(1, 1, 1, GridTag::Image) {}
  Grid(int height, int width, int channels, GridTag tag, double fill = 0.0)
      : h_(height), w_(width), c_(channels), tag_(tag) {
    if (h_ < 1 || w_ < 1 || c_ < 1)
      throw ShapeMismatch("grid dimensions must be positive");
    data_.assign(static_cast<size_t>(h_) * w_ * c_, fill);
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  GridTag tag() const { return tag_; }

  double& at(int y, int x, int c = 0) { return data_[idx(y, x, c)]; }
  double at(int y, int x, int c = 0) const { return data_[idx(y, x, c)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Grid with_tag(GridTag tag) const {
    Grid g = *this;
    g.tag_ = tag;
    return g;
  }

  bool same_shape(const Grid& o) const {
    return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }

 private:
  size_t idx(int y, int x, int c) const {
    return (static_cast<size_t>(y) * w_ + x) * c_ + c;
  }
  int h_, w_, c_;
  GridTag tag_;
  std::vector<double> data_;
};

/// Square patch side length; must be odd.
struct PatchSpec {
  int k = 3;
  explicit PatchSpec(int side) : k(side) {
    if (k < 1 || k % 2 == 0) throw ShapeMismatch("patch side must be odd and >= 1");
  }
  int radius() const { return (k - 1) / 2; }
};

namespace detail {
inline void require_smoothable(const Grid& g) {
  if (g.tag() != GridTag::Image && g.tag() != GridTag::Feature)
    throw ShapeMismatch("gaussian_smooth expects an image- or feature-tagged grid");
}
}  // namespace detail

/// 3x3 binomial smoothing (1/16)[1 2 1; 2 4 2; 1 2 1] per channel, replicate
/// border padding.
inline Grid gaussian_smooth(const Grid& g) {
  detail::require_smoothable(g);
  static const double kKernel[3] = {0.25, 0.5, 0.25};
  const int H = g.height(), W = g.width(), C = g.channels();

  // Separable: horizontal pass then vertical pass.
  Grid tmp(H, W, C, g.tag());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, W - 1);
          acc += kKernel[dx + 1] * g.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  Grid out(H, W, C, g.tag());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = std::clamp(y + dy, 0, H - 1);
          acc += kKernel[dy + 1] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

/// Keep every other pixel starting at index 0; output dims are ceil(H/2), ceil(W/2).
inline Grid decimate2(const Grid& g) {
  if (g.height() < 2 || g.width() < 2)
    throw ShapeMismatch("decimate2 needs H, W >= 2");
  const int H2 = (g.height() + 1) / 2, W2 = (g.width() + 1) / 2;
  Grid out(H2, W2, g.channels(), g.tag());
  for (int y = 0; y < H2; ++y)
    for (int x = 0; x < W2; ++x)
      for (int c = 0; c < g.channels(); ++c)
        out.at(y, x, c) = g.at(2 * y, 2 * x, c);
  return out;
}

/// Gaussian smooth, then 2x decimation.
inline Grid downsample2(const Grid& g) {
  if (g.height() < 2 || g.width() < 2)
    throw ShapeMismatch("downsample2 needs H, W >= 2");
  return decimate2(gaussian_smooth(g));
}

/// Per-channel zero mean, unit variance over spatial positions.
inline Grid zscore_normalize(const Grid& g) {
  if (g.tag() != GridTag::Feature)
    throw ShapeMismatch("zscore_normalize expects a feature-tagged grid");
  const int H = g.height(), W = g.width(), C = g.channels();
  const double n = static_cast<double>(H) * W;
  Grid out(H, W, C, g.tag());
  for (int c = 0; c < C; ++c) {
    double mean = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) mean += g.at(y, x, c);
    mean /= n;
    double var = 0.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double d = g.at(y, x, c) - mean;
        var += d * d;
      }
    var /= n;
    if (var <= 1e-12) throw DegenerateChannel(c);
    const double inv_sigma = 1.0 / std::sqrt(var);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.at(y, x, c) = (g.at(y, x, c) - mean) * inv_sigma;
  }
  return out;
}

namespace detail {

/// Picks the interpolation cell for coordinate u on an axis of extent n.
/// Valid support is the closed interval [0, n-1]; at the far edge the cell is
/// clamped so u = n-1 samples the edge value exactly.
inline bool pick_cell(double u, int n, int& i0, int& i1, double& frac) {
  if (!(u >= 0.0 && u <= n - 1)) return false;
  i0 = std::max(std::min(static_cast<int>(std::floor(u)), n - 2), 0);
  i1 = std::min(i0 + 1, n - 1);
  frac = u - i0;
  return true;
}

/// Writes the C interpolated values to out. Returns false (and zeros) when p
/// falls outside the closed rectangle [0,W-1] x [0,H-1].
inline bool bilinear_into(const Grid& g, double u, double v, double* out) {
  const int C = g.channels();
  int x0, x1, y0, y1;
  double fu, fv;
  if (!pick_cell(u, g.width(), x0, x1, fu) || !pick_cell(v, g.height(), y0, y1, fv)) {
    std::fill(out, out + C, 0.0);
    return false;
  }
  const double w00 = (1 - fu) * (1 - fv), w10 = fu * (1 - fv);
  const double w01 = (1 - fu) * fv, w11 = fu * fv;
  for (int c = 0; c < C; ++c)
    out[c] = w00 * g.at(y0, x0, c) + w10 * g.at(y0, x1, c) + w01 * g.at(y1, x0, c) +
             w11 * g.at(y1, x1, c);
  return true;
}

/// Analytic d(sample)/d(u,v) of the bilinear surface; 2 x C, row 0 is d/du.
inline bool bilinear_gradient_into(const Grid& g, double u, double v, double* du,
                                   double* dv) {
  const int C = g.channels();
  int x0, x1, y0, y1;
  double fu, fv;
  if (!pick_cell(u, g.width(), x0, x1, fu) || !pick_cell(v, g.height(), y0, y1, fv)) {
    std::fill(du, du + C, 0.0);
    std::fill(dv, dv + C, 0.0);
    return false;
  }
  for (int c = 0; c < C; ++c) {
    const double g00 = g.at(y0, x0, c), g10 = g.at(y0, x1, c);
    const double g01 = g.at(y1, x0, c), g11 = g.at(y1, x1, c);
    du[c] = (1 - fv) * (g10 - g00) + fv * (g11 - g01);
    dv[c] = (1 - fu) * (g01 - g00) + fu * (g11 - g10);
  }
  return true;
}

}  // namespace detail

struct SampleResult {
  Eigen::VectorXd values;
  bool valid = false;
};

inline SampleResult bilinear_sample(const Grid& g, const Pixel& p) {
  SampleResult r;
  r.values.resize(g.channels());
  r.valid = detail::bilinear_into(g, p.u, p.v, r.values.data());
  return r;
}

struct GradientResult {
  Eigen::Matrix<double, 2, Eigen::Dynamic> grad;  // row 0: d/du, row 1: d/dv
  bool valid = false;
};

inline GradientResult bilinear_gradient(const Grid& g, const Pixel& p) {
  GradientResult r;
  r.grad.resize(2, g.channels());
  Eigen::VectorXd du(g.channels()), dv(g.channels());
  r.valid = detail::bilinear_gradient_into(g, p.u, p.v, du.data(), dv.data());
  r.grad.row(0) = du.transpose();
  r.grad.row(1) = dv.transpose();
  return r;
}

namespace detail {

/// Patch values in channel-major order: index = c*k*k + (dy+r)*k + (dx+r).
/// Valid only if every lattice sample is valid.
inline bool patch_into(const Grid& g, double u, double v, int k, double* out) {
  const int C = g.channels();
  const int r = (k - 1) / 2;
  const int kk = k * k;
  std::vector<double> sample(C);
  bool valid = true;
  for (int dy = -r; dy <= r && valid; ++dy)
    for (int dx = -r; dx <= r && valid; ++dx) {
      if (!bilinear_into(g, u + dx, v + dy, sample.data())) {
        valid = false;
        break;
      }
      const int cell = (dy + r) * k + (dx + r);
      for (int c = 0; c < C; ++c) out[c * kk + cell] = sample[c];
    }
  if (!valid) std::fill(out, out + static_cast<size_t>(C) * kk, 0.0);
  return valid;
}

}  // namespace detail

/// Bilinear samples at the k x k unit-spacing lattice centered on p,
/// concatenated channel-major.
inline SampleResult extract_patch(const Grid& g, const Pixel& p, const PatchSpec& spec) {
  SampleResult r;
  r.values.resize(static_cast<Eigen::Index>(g.channels()) * spec.k * spec.k);
  r.valid = detail::patch_into(g, p.u, p.v, spec.k, r.values.data());
  return r;
}

}  // namespace dfo
