#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dfo/grid.hpp"
#include "dfo/pyramid.hpp"
#include "dfo/rng.hpp"

using namespace dfo;

namespace {

Grid random_grid(int h, int w, int c, GridTag tag, uint64_t seed) {
  Grid g(h, w, c, tag);
  Rng rng(seed);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) g.at(y, x, ch) = rng.uniform_range(-2.0, 2.0);
  return g;
}

/// Independent 2D convolution with the 3x3 binomial kernel and replicate
/// borders, written directly from the definition.
Grid naive_smooth(const Grid& g) {
  const double k1d[3] = {0.25, 0.5, 0.25};
  Grid out(g.height(), g.width(), g.channels(), g.tag());
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      for (int c = 0; c < g.channels(); ++c) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, g.height() - 1);
            const int xx = std::clamp(x + dx, 0, g.width() - 1);
            acc += k1d[dy + 1] * k1d[dx + 1] * g.at(yy, xx, c);
          }
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("Grid construction and indexing", "[grids]") {
  SECTION("default grid is a 1x1x1 image") {
    Grid g;
    CHECK(g.height() == 1);
    CHECK(g.width() == 1);
    CHECK(g.channels() == 1);
    CHECK(g.tag() == GridTag::Image);
    CHECK(g.at(0, 0, 0) == 0.0);
  }
  SECTION("nonpositive dimensions are rejected") {
    CHECK_THROWS_AS(Grid(0, 3, 1, GridTag::Image), ShapeMismatch);
    CHECK_THROWS_AS(Grid(3, -1, 1, GridTag::Image), ShapeMismatch);
    CHECK_THROWS_AS(Grid(3, 3, 0, GridTag::Image), ShapeMismatch);
  }
  SECTION("storage is row-major with interleaved channels") {
    Grid g(2, 3, 2, GridTag::Feature);
    g.at(1, 2, 1) = 7.0;
    CHECK(g.data()[(1 * 3 + 2) * 2 + 1] == 7.0);
  }
}

TEST_CASE("gaussian_smooth matches a direct 2D convolution", "[grids]") {
  const Grid g = random_grid(9, 13, 3, GridTag::Feature, 21);
  const Grid got = gaussian_smooth(g);
  const Grid want = naive_smooth(g);
  double max_err = 0.0;
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x)
      for (int c = 0; c < g.channels(); ++c)
        max_err = std::max(max_err, std::abs(got.at(y, x, c) - want.at(y, x, c)));
  CHECK(max_err < 1e-12);

  SECTION("constant grids are fixed points") {
    Grid flat(5, 5, 1, GridTag::Image);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) flat.at(y, x, 0) = 3.25;
    const Grid s = gaussian_smooth(flat);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) CHECK(s.at(y, x, 0) == Catch::Approx(3.25).margin(1e-14));
  }
  SECTION("depth grids are rejected") {
    Grid d(4, 4, 1, GridTag::Depth);
    CHECK_THROWS_AS(gaussian_smooth(d), ShapeMismatch);
  }
}

TEST_CASE("decimate2 keeps even-index samples", "[grids]") {
  Grid g(5, 7, 1, GridTag::Depth);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) g.at(y, x, 0) = 10.0 * y + x;
  const Grid d = decimate2(g);
  CHECK(d.height() == 3);
  CHECK(d.width() == 4);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) CHECK(d.at(y, x, 0) == 10.0 * (2 * y) + 2 * x);
  SECTION("too-small grids are rejected") {
    CHECK_THROWS_AS(decimate2(Grid(1, 4, 1, GridTag::Depth)), ShapeMismatch);
  }
}

TEST_CASE("downsample2 is smooth-then-decimate", "[grids]") {
  const Grid g = random_grid(8, 10, 2, GridTag::Image, 31);
  const Grid got = downsample2(g);
  const Grid want = decimate2(naive_smooth(g));
  REQUIRE(got.height() == want.height());
  REQUIRE(got.width() == want.width());
  for (int y = 0; y < got.height(); ++y)
    for (int x = 0; x < got.width(); ++x)
      for (int c = 0; c < got.channels(); ++c)
        CHECK(got.at(y, x, c) == Catch::Approx(want.at(y, x, c)).margin(1e-12));
}

TEST_CASE("zscore_normalize", "[grids]") {
  SECTION("each channel ends with zero mean and unit variance") {
    Grid g = random_grid(12, 9, 4, GridTag::Feature, 41);
    const Grid n = zscore_normalize(g);
    const int count = 12 * 9;
    for (int c = 0; c < 4; ++c) {
      double mean = 0.0;
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 9; ++x) mean += n.at(y, x, c);
      mean /= count;
      double var = 0.0;
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 9; ++x) var += (n.at(y, x, c) - mean) * (n.at(y, x, c) - mean);
      var /= count;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("population variance is the divisor") {
    // Two samples 0 and 2: mean 1, population var 1, so values map to -1 and 1.
    Grid g(1, 2, 1, GridTag::Feature);
    g.at(0, 0, 0) = 0.0;
    g.at(0, 1, 0) = 2.0;
    const Grid n = zscore_normalize(g);
    CHECK(n.at(0, 0, 0) == Catch::Approx(-1.0).margin(1e-14));
    CHECK(n.at(0, 1, 0) == Catch::Approx(1.0).margin(1e-14));
  }
  SECTION("a flat channel is degenerate") {
    Grid g(3, 3, 2, GridTag::Feature);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        g.at(y, x, 0) = y + x;
        g.at(y, x, 1) = 5.0;
      }
    try {
      zscore_normalize(g);
      FAIL("expected DegenerateChannel");
    } catch (const DegenerateChannel& e) {
      CHECK(e.channel == 1);
    }
  }
  SECTION("only feature grids are accepted") {
    CHECK_THROWS_AS(zscore_normalize(Grid(3, 3, 1, GridTag::Image)), ShapeMismatch);
  }
}

TEST_CASE("bilinear_sample", "[grids]") {
  const Grid g = random_grid(10, 14, 2, GridTag::Feature, 51);
  SECTION("integer coordinates reproduce stored values") {
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 14; ++x) {
        const SampleResult s = bilinear_sample(g, Pixel{double(x), double(y)});
        REQUIRE(s.valid);
        CHECK(s.values[0] == Catch::Approx(g.at(y, x, 0)).margin(1e-14));
        CHECK(s.values[1] == Catch::Approx(g.at(y, x, 1)).margin(1e-14));
      }
  }
  SECTION("affine fields are interpolated exactly") {
    Grid a(6, 8, 1, GridTag::Image);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 8; ++x) a.at(y, x, 0) = 0.7 * x - 1.3 * y + 0.2;
    Rng rng(61);
    for (int i = 0; i < 200; ++i) {
      const double u = rng.uniform_range(0.0, 6.999);
      const double v = rng.uniform_range(0.0, 4.999);
      const SampleResult s = bilinear_sample(a, Pixel{u, v});
      REQUIRE(s.valid);
      CHECK(s.values[0] == Catch::Approx(0.7 * u - 1.3 * v + 0.2).margin(1e-12));
    }
  }
  SECTION("support is the closed rectangle [0,W-1] x [0,H-1]") {
    CHECK(bilinear_sample(g, Pixel{0.0, 0.0}).valid);
    CHECK(bilinear_sample(g, Pixel{12.9999, 8.9999}).valid);
    const SampleResult corner = bilinear_sample(g, Pixel{13.0, 9.0});
    REQUIRE(corner.valid);
    CHECK(corner.values[0] == g.at(9, 13, 0));
    CHECK_FALSE(bilinear_sample(g, Pixel{13.0 + 1e-9, 4.0}).valid);
    CHECK_FALSE(bilinear_sample(g, Pixel{4.0, 9.0 + 1e-9}).valid);
    CHECK_FALSE(bilinear_sample(g, Pixel{-1e-9, 4.0}).valid);
    const SampleResult s = bilinear_sample(g, Pixel{-5.0, -5.0});
    CHECK_FALSE(s.valid);
    CHECK(s.values.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("bilinear_gradient matches finite differences", "[grids]") {
  const Grid g = random_grid(10, 14, 3, GridTag::Feature, 71);
  Rng rng(81);
  const double h = 1e-5;
  for (int i = 0; i < 200; ++i) {
    // Stay inside one interpolation cell so the FD stencil sees a smooth patch.
    const double u = rng.uniform_range(1.0, 12.0);
    const double v = rng.uniform_range(1.0, 8.0);
    if (std::abs(u - std::round(u)) < 2 * h || std::abs(v - std::round(v)) < 2 * h) continue;
    const GradientResult gr = bilinear_gradient(g, Pixel{u, v});
    REQUIRE(gr.valid);
    for (int c = 0; c < 3; ++c) {
      const double fd_u = (bilinear_sample(g, Pixel{u + h, v}).values[c] -
                           bilinear_sample(g, Pixel{u - h, v}).values[c]) /
                          (2 * h);
      const double fd_v = (bilinear_sample(g, Pixel{u, v + h}).values[c] -
                           bilinear_sample(g, Pixel{u, v - h}).values[c]) /
                          (2 * h);
      CHECK(gr.grad(0, c) == Catch::Approx(fd_u).margin(1e-6));
      CHECK(gr.grad(1, c) == Catch::Approx(fd_v).margin(1e-6));
    }
  }
}

TEST_CASE("extract_patch", "[grids]") {
  const Grid g = random_grid(10, 14, 2, GridTag::Feature, 91);
  SECTION("k=1 at integer coordinates is exact") {
    const SampleResult p = extract_patch(g, Pixel{5.0, 4.0}, PatchSpec(1));
    REQUIRE(p.valid);
    REQUIRE(p.values.size() == 2);
    CHECK(p.values[0] == g.at(4, 5, 0));
    CHECK(p.values[1] == g.at(4, 5, 1));
  }
  SECTION("k=3 layout is channel-major then row-major offsets") {
    const Pixel c{6.25, 5.75};
    const SampleResult p = extract_patch(g, c, PatchSpec(3));
    REQUIRE(p.valid);
    REQUIRE(p.values.size() == 2 * 9);
    for (int ch = 0; ch < 2; ++ch)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const SampleResult s = bilinear_sample(g, Pixel{c.u + dx, c.v + dy});
          REQUIRE(s.valid);
          const int idx = ch * 9 + (dy + 1) * 3 + (dx + 1);
          CHECK(p.values[idx] == Catch::Approx(s.values[ch]).margin(1e-14));
        }
  }
  SECTION("a patch touching the border is wholly invalid") {
    const SampleResult p = extract_patch(g, Pixel{0.5, 4.0}, PatchSpec(3));
    CHECK_FALSE(p.valid);
    CHECK(p.values.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("even or nonpositive patch sizes are rejected") {
    CHECK_THROWS_AS(PatchSpec(2), ShapeMismatch);
    CHECK_THROWS_AS(PatchSpec(-1), ShapeMismatch);
    CHECK(PatchSpec(3).radius() == 1);
  }
}

TEST_CASE("pyramids", "[grids]") {
  SECTION("image pyramid halves dimensions per level") {
    const Grid base = random_grid(96, 128, 2, GridTag::Feature, 101);
    const Intrinsics K{200.0, 210.0, 63.5, 47.5};
    const Pyramid pyr = make_image_pyramid(base, K, default_level_configs());
    CHECK(pyr.level(1).height() == 96);
    CHECK(pyr.level(2).height() == 48);
    CHECK(pyr.level(3).width() == 32);
    CHECK(pyr.level(4).height() == 12);
    CHECK(pyr.level(4).width() == 16);
    CHECK(pyr.K(2).fx == Catch::Approx(100.0));
    CHECK(pyr.K(3).fx == Catch::Approx(50.0));
    // Level 2 content agrees with a direct downsample of the base.
    const Grid d = downsample2(base);
    for (int y = 0; y < d.height(); ++y)
      for (int x = 0; x < d.width(); ++x)
        CHECK(pyr.level(2).at(y, x, 0) == Catch::Approx(d.at(y, x, 0)).margin(1e-12));
    CHECK_THROWS_AS(pyr.level(0), InvalidLevel);
    CHECK_THROWS_AS(pyr.level(5), InvalidLevel);
  }
  SECTION("decimated pyramid skips smoothing") {
    Grid depth(8, 8, 1, GridTag::Depth);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) depth.at(y, x, 0) = 1.0 + y * 8 + x;
    const Intrinsics K{100.0, 100.0, 3.5, 3.5};
    const Pyramid pyr = make_decimated_pyramid(depth, K, default_level_configs());
    CHECK(pyr.level(2).at(1, 1, 0) == depth.at(2, 2, 0));
    CHECK(pyr.level(4).height() == 1);
  }
  SECTION("mean_depth averages all samples") {
    Grid depth(2, 2, 1, GridTag::Depth);
    depth.at(0, 0, 0) = 1.0;
    depth.at(0, 1, 0) = 2.0;
    depth.at(1, 0, 0) = 3.0;
    depth.at(1, 1, 0) = 6.0;
    CHECK(mean_depth(depth) == Catch::Approx(3.0));
  }
}
