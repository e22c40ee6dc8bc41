#pragma once

#include <cmath>
#include <vector>

#include "dfo/geometry.hpp"
#include "dfo/grid.hpp"
#include "dfo/pyramid.hpp"
#include "dfo/rng.hpp"

namespace dfo {

/// One sinusoidal component of a band-limited field over world (x, y).
struct Harmonic {
  double amp = 0.0;
  double kx = 0.0, ky = 0.0;
  double phase = 0.0;
};

/// offset + sum of sinusoids; smooth and analytically differentiable.
struct ScalarField {
  double offset = 0.0;
  std::vector<Harmonic> terms;

  double eval(double x, double y) const {
    double v = offset;
    for (const Harmonic& h : terms) v += h.amp * std::sin(h.kx * x + h.ky * y + h.phase);
    return v;
  }
};

/// Ground-truth world: an analytic surface carrying analytic feature and
/// image fields. The world frame coincides with the reference camera frame.
/// Surfaces are either planes (n.X = d, closed-form ray intersection) or a
/// harmonic height surface z = h(x, y) solved by bracketed bisection.
struct Scene {
  enum class Kind { Plane, HarmonicSurface };

  int height = 96, width = 128;
  Intrinsics K;
  Kind kind = Kind::Plane;

  Vector3 normal = Vector3(0, 0, 1);  // plane: normal . X = plane_d
  double plane_d = 2.0;
  ScalarField surface;  // harmonic kind: z = surface(x, y)

  std::vector<ScalarField> features;  // one field per channel
  ScalarField image_field;            // values kept within [0, 1]

  int channels() const { return static_cast<int>(features.size()); }

  /// Same world viewed at pyramid level l: halved resolution and intrinsics.
  Scene at_level(int level) const {
    Scene s = *this;
    s.K = rescale_intrinsics(K, level);
    s.height = (height + (1 << (level - 1)) - 1) >> (level - 1);
    s.width = (width + (1 << (level - 1)) - 1) >> (level - 1);
    return s;
  }

  /// Depth of the surface along the ray of pixel p in the view cam_from_world.
  double view_depth(const RigidTransform& T, const Pixel& p) const {
    const Vector3 v((p.u - K.cx) / K.fx, (p.v - K.cy) / K.fy, 1.0);
    const Vector3 rv = T.R.transpose() * v;
    const Vector3 cam_center = -(T.R.transpose() * T.t);
    if (kind == Kind::Plane) {
      const double denom = normal.dot(rv);
      if (std::abs(denom) < 1e-12) throw SceneBehindCamera();
      const double s = (plane_d - normal.dot(cam_center)) / denom;
      if (s <= 1e-6) throw SceneBehindCamera();
      return s;
    }
    // Harmonic surface: root of f(s) = z(s) - h(x(s), y(s)) along the ray
    // X(s) = cam_center + s * rv.
    auto f = [&](double s) {
      const Vector3 X = cam_center + s * rv;
      return X.z() - surface.eval(X.x(), X.y());
    };
    double lo = 1e-4, hi = lo;
    double flo = f(lo);
    bool bracketed = false;
    for (int i = 0; i < 64; ++i) {
      hi = lo * 1.5 + 0.05;
      const double fhi = f(hi);
      if ((flo <= 0.0) != (fhi <= 0.0)) {
        bracketed = true;
        break;
      }
      lo = hi;
      flo = fhi;
      if (hi > 1e4) break;
    }
    if (!bracketed) throw SceneBehindCamera();
    for (int i = 0; i < 120; ++i) {
      const double mid = 0.5 * (lo + hi);
      if ((f(mid) <= 0.0) == (flo <= 0.0)) {
        lo = mid;
        flo = f(mid);
      } else {
        hi = mid;
      }
    }
    const double s = 0.5 * (lo + hi);
    if (s <= 1e-6) throw SceneBehindCamera();
    return s;
  }

  /// World-space intersection of pixel p's ray with the surface.
  Vector3 intersect(const RigidTransform& T, const Pixel& p) const {
    const double s = view_depth(T, p);
    const Vector3 v((p.u - K.cx) / K.fx, (p.v - K.cy) / K.fy, 1.0);
    return T.R.transpose() * (s * v - T.t);
  }
};

/// One rendered view of a scene.
struct RenderedView {
  Grid features;
  Grid image;
  Grid depth;
};

/// Evaluates the scene fields at every pixel's ray-surface intersection for
/// the camera cam_from_world. Depth is the true per-pixel view depth.
inline RenderedView render_view(const Scene& scene, const RigidTransform& cam_from_world) {
  const int H = scene.height, W = scene.width, C = scene.channels();
  RenderedView out{Grid(H, W, std::max(C, 1), GridTag::Feature),
                   Grid(H, W, 1, GridTag::Image), Grid(H, W, 1, GridTag::Depth)};
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Pixel p{double(x), double(y)};
      const double s = scene.view_depth(cam_from_world, p);
      const Vector3 v((p.u - scene.K.cx) / scene.K.fx, (p.v - scene.K.cy) / scene.K.fy, 1.0);
      const Vector3 Xw = cam_from_world.R.transpose() * (s * v - cam_from_world.t);
      out.depth.at(y, x) = s;
      out.image.at(y, x) = scene.image_field.eval(Xw.x(), Xw.y());
      for (int c = 0; c < C; ++c)
        out.features.at(y, x, c) = scene.features[c].eval(Xw.x(), Xw.y());
    }
  }
  return out;
}

/// Ground-truth frame-to-frame motions; frame k+1's camera-from-world pose is
/// relatives[k] composed onto frame k's.
struct TrajectorySpec {
  std::vector<RigidTransform> relatives;
  int frames() const { return static_cast<int>(relatives.size()) + 1; }
};

struct RenderedFrame {
  Grid features;
  Grid image;
  Grid depth;
  RigidTransform pose;  // camera-from-world (world = frame 0)
};

/// Renders n frames along a trajectory; all share one world-scale depth.
inline std::vector<RenderedFrame> make_snippet(const Scene& scene, const TrajectorySpec& traj) {
  if (traj.frames() < 2) throw ShapeMismatch("make_snippet: need at least 2 frames");
  std::vector<RenderedFrame> out;
  RigidTransform pose = RigidTransform::identity();
  for (int k = 0; k < traj.frames(); ++k) {
    if (k > 0) pose = compose(traj.relatives[k - 1], pose);
    RenderedView view = render_view(scene, pose);
    out.push_back({std::move(view.features), std::move(view.image), std::move(view.depth), pose});
  }
  return out;
}

/// A frame rendered independently at every pyramid level (analytic rendering,
/// not downsampling, so each level is itself band-limited and exact).
struct FramePyramids {
  Pyramid features;
  Pyramid image;
  Pyramid depth;
  RigidTransform pose;
};

inline std::vector<FramePyramids> make_snippet_pyramids(
    const Scene& scene, const TrajectorySpec& traj,
    const std::array<LevelConfig, kPyramidLevels>& configs = default_level_configs()) {
  if (traj.frames() < 2) throw ShapeMismatch("make_snippet_pyramids: need at least 2 frames");
  std::vector<FramePyramids> out;
  RigidTransform pose = RigidTransform::identity();
  for (int k = 0; k < traj.frames(); ++k) {
    if (k > 0) pose = compose(traj.relatives[k - 1], pose);
    FramePyramids fp;
    fp.pose = pose;
    fp.features.config = fp.image.config = fp.depth.config = configs;
    for (int l = 1; l <= kPyramidLevels; ++l) {
      const Scene level_scene = scene.at_level(l);
      RenderedView view = render_view(level_scene, pose);
      fp.features.levels[l - 1] = std::move(view.features);
      fp.image.levels[l - 1] = std::move(view.image);
      fp.depth.levels[l - 1] = std::move(view.depth);
      fp.features.intrinsics[l - 1] = fp.image.intrinsics[l - 1] =
          fp.depth.intrinsics[l - 1] = level_scene.K;
    }
    out.push_back(std::move(fp));
  }
  return out;
}

/// Replaces a seeded fraction of pixel sites (all channels) with uniform noise
/// in [-magnitude, magnitude].
inline Grid corrupt(const Grid& g, double fraction, double magnitude, uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ShapeMismatch("corrupt: fraction must lie in [0,1]");
  Grid out = g;
  const int N = g.height() * g.width();
  const int count = static_cast<int>(std::lround(fraction * N));
  if (count == 0) return out;
  Rng rng(seed);
  std::vector<int> sites(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) sites[i] = i;
  for (int i = N - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(sites[i], sites[j]);
  }
  for (int i = 0; i < count; ++i) {
    const int y = sites[i] / g.width(), x = sites[i] % g.width();
    for (int c = 0; c < g.channels(); ++c)
      out.at(y, x, c) = rng.uniform_range(-magnitude, magnitude);
  }
  return out;
}

namespace synth {

/// Random band-limited field: offset plus `count` sinusoids with wavenumber
/// magnitudes in [0.2, 1] * max_freq and the given amplitude budget.
inline ScalarField random_field(Rng& rng, int count, double max_freq, double amp_budget,
                                double offset) {
  ScalarField f;
  f.offset = offset;
  std::vector<double> amps(static_cast<size_t>(count));
  double total = 0.0;
  for (double& a : amps) {
    a = rng.uniform_range(0.3, 1.0);
    total += a;
  }
  for (int i = 0; i < count; ++i) {
    const double theta = rng.uniform_range(0.0, 2.0 * M_PI);
    const double k = max_freq * rng.uniform_range(0.2, 1.0);
    f.terms.push_back(
        {amp_budget * amps[i] / total, k * std::cos(theta), k * std::sin(theta),
         rng.uniform_range(0.0, 2.0 * M_PI)});
  }
  return f;
}

/// Wavenumber cap ensuring wavelengths of at least min_px pixels when the
/// surface sits near depth z: pixels per world unit there is fx / z.
inline double freq_cap(const Intrinsics& K, double z, double min_px) {
  return 2.0 * M_PI * K.fx / (z * min_px);
}

inline void fill_fields(Scene& s, int channels, uint64_t seed, double max_freq) {
  Rng rng(seed);
  s.features.clear();
  for (int c = 0; c < channels; ++c)
    s.features.push_back(random_field(rng, 6, max_freq, rng.uniform_range(0.8, 1.6),
                                      rng.uniform_range(-0.5, 0.5)));
  s.image_field = random_field(rng, 6, max_freq, 0.45, 0.5);
}

inline Scene fronto_plane(int height, int width, const Intrinsics& K, double z0,
                          int channels, uint64_t seed, double min_wavelength_px = 48.0) {
  Scene s;
  s.height = height;
  s.width = width;
  s.K = K;
  s.kind = Scene::Kind::Plane;
  s.normal = Vector3(0, 0, 1);
  s.plane_d = z0;
  fill_fields(s, channels, seed, freq_cap(K, z0, min_wavelength_px));
  return s;
}

inline Scene slanted_plane(int height, int width, const Intrinsics& K, const Vector3& normal,
                           double d, int channels, uint64_t seed,
                           double min_wavelength_px = 48.0) {
  Scene s;
  s.height = height;
  s.width = width;
  s.K = K;
  s.kind = Scene::Kind::Plane;
  s.normal = normal.normalized();
  s.plane_d = d / normal.norm();
  fill_fields(s, channels, seed, freq_cap(K, d / normal.norm(), min_wavelength_px));
  return s;
}

inline Scene harmonic_surface(int height, int width, const Intrinsics& K, double z0,
                              double amplitude, int channels, uint64_t seed,
                              double min_wavelength_px = 48.0) {
  Scene s;
  s.height = height;
  s.width = width;
  s.K = K;
  s.kind = Scene::Kind::HarmonicSurface;
  Rng rng(Rng::derive(seed, 1));
  // Gentle undulation: low spatial frequency relative to the viewing window.
  s.surface = random_field(rng, 4, 0.3 * freq_cap(K, z0, min_wavelength_px), amplitude, z0);
  fill_fields(s, channels, seed, freq_cap(K, z0, min_wavelength_px));
  return s;
}

}  // namespace synth

}  // namespace dfo
