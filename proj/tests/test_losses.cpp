#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dfo/losses.hpp"
#include "dfo/rng.hpp"

using namespace dfo;

namespace {

Grid random_image(int h, int w, int c, uint64_t seed) {
  Grid g(h, w, c, GridTag::Image);
  Rng rng(seed);
  for (double& v : g.data()) v = rng.uniform();
  return g;
}

/// Fronto-parallel plane at depth z0 textured with a field that is affine in
/// world (x, y); every level is rendered analytically from the same field, so
/// warping between views is exact under bilinear interpolation.
struct AffineScene {
  double z0 = 2.0;
  double a = 0.18, b = -0.11, c = 0.5;  // field(x, y) = a x + b y + c

  Grid render(int h, int w, const Intrinsics& K, const Vector3& cam_pos) const {
    Grid img(h, w, 1, GridTag::Image);
    const double z = z0 - cam_pos.z();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double wx = z * (x - K.cx) / K.fx + cam_pos.x();
        const double wy = z * (y - K.cy) / K.fy + cam_pos.y();
        img.at(y, x) = a * wx + b * wy + c;
      }
    return img;
  }

  SnippetFrame frame(int h, int w, const Intrinsics& K, const Vector3& cam_pos) const {
    SnippetFrame f;
    for (int l = 1; l <= kPyramidLevels; ++l) {
      const int hl = (h + (1 << (l - 1)) - 1) >> (l - 1);
      const int wl = (w + (1 << (l - 1)) - 1) >> (l - 1);
      const Intrinsics Kl = rescale_intrinsics(K, l);
      f.image.levels[l - 1] = render(hl, wl, Kl, cam_pos);
      f.image.intrinsics[l - 1] = Kl;
      f.depth.levels[l - 1] = Grid(hl, wl, 1, GridTag::Depth, z0 - cam_pos.z());
      f.depth.intrinsics[l - 1] = Kl;
    }
    f.pose.R = Matrix3::Identity();
    f.pose.t = -cam_pos;  // camera-from-world for an axis-aligned camera
    return f;
  }
};

}  // namespace

TEST_CASE("warp_image", "[losses]") {
  const Intrinsics K{60.0, 60.0, 31.5, 23.5};
  SECTION("identity transform reproduces the source") {
    const Grid img = random_image(48, 64, 2, 3);
    const Grid depth(48, 64, 1, GridTag::Depth, 2.0);
    const auto [warped, validity] = warp_image(img, depth, RigidTransform::identity(), K);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) {
        CHECK(validity.at(y, x) == 1.0);
        for (int c = 0; c < 2; ++c)
          CHECK(warped.at(y, x, c) == Catch::Approx(img.at(y, x, c)).margin(1e-12));
      }
  }
  SECTION("x-translation shifts a plane by the stereo disparity") {
    AffineScene scene;
    const Grid src = scene.render(48, 64, K, Vector3::Zero());
    const Grid depth(48, 64, 1, GridTag::Depth, scene.z0);
    RigidTransform T;
    T.t = Vector3(0.1, 0, 0);
    const double shift = K.fx * 0.1 / scene.z0;  // 3 px
    const auto [warped, validity] = warp_image(src, depth, T, K);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) {
        if (x + shift > 63.0) {
          CHECK(validity.at(y, x) == 0.0);
        } else {
          REQUIRE(validity.at(y, x) == 1.0);
          // The sampled location is u + shift on an affine texture.
          const double expect = scene.a * (scene.z0 * (x + shift - K.cx) / K.fx) +
                                scene.b * (scene.z0 * (y - K.cy) / K.fy) + scene.c;
          CHECK(warped.at(y, x) == Catch::Approx(expect).margin(1e-6));
        }
      }
  }
  SECTION("shape mismatches are rejected") {
    CHECK_THROWS_AS(warp_image(Grid(4, 4, 1, GridTag::Image), Grid(5, 4, 1, GridTag::Depth),
                               RigidTransform::identity(), K),
                    ShapeMismatch);
  }
}

TEST_CASE("ssim", "[losses]") {
  SECTION("an image against itself scores 1 everywhere") {
    const Grid img = random_image(12, 16, 3, 5);
    const Grid s = ssim(img, img);
    for (double v : s.data()) CHECK(v == 1.0);
  }
  SECTION("inverted checkerboard is anticorrelated") {
    Grid a(10, 10, 1, GridTag::Image);
    Grid b(10, 10, 1, GridTag::Image);
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) {
        a.at(y, x) = (x + y) % 2;
        b.at(y, x) = 1.0 - a.at(y, x);
      }
    const Grid s = ssim(a, b);
    for (int y = 2; y < 8; ++y)
      for (int x = 2; x < 8; ++x) CHECK(s.at(y, x) < 0.0);
  }
  SECTION("symmetry") {
    const Grid a = random_image(9, 11, 2, 7);
    const Grid b = random_image(9, 11, 2, 8);
    const Grid s1 = ssim(a, b);
    const Grid s2 = ssim(b, a);
    for (size_t i = 0; i < s1.data().size(); ++i)
      CHECK(s1.data()[i] == Catch::Approx(s2.data()[i]).margin(1e-12));
  }
  SECTION("constant images 0 and 1 score C1/(1+C1)") {
    const Grid zero(5, 5, 1, GridTag::Image, 0.0);
    const Grid one(5, 5, 1, GridTag::Image, 1.0);
    const Grid s = ssim(zero, one);
    const double expect = kSsimC1 / (1.0 + kSsimC1);
    for (double v : s.data()) CHECK(v == Catch::Approx(expect).margin(1e-15));
  }
  SECTION("values stay within [-1, 1]") {
    const Grid a = random_image(15, 15, 1, 11);
    const Grid b = random_image(15, 15, 1, 12);
    for (double v : ssim(a, b).data()) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("robust_clip", "[losses]") {
  CHECK(robust_clip(0.1, 0.15) == 0.1);
  CHECK(robust_clip(0.15, 0.15) == 0.15);  // exact at the knee
  CHECK(robust_clip(0.5, 0.3) == Catch::Approx(0.32).margin(1e-15));
  SECTION("continuous and monotone with slopes 1 then 0.1") {
    const double eps = 0.15;
    CHECK(robust_clip(eps + 1e-12, eps) - robust_clip(eps - 1e-12, eps) < 1e-11);
    CHECK(robust_clip(0.10 + 1e-6, eps) - robust_clip(0.10, eps) ==
          Catch::Approx(1e-6).epsilon(1e-6));
    CHECK(robust_clip(0.20 + 1e-6, eps) - robust_clip(0.20, eps) ==
          Catch::Approx(1e-7).epsilon(1e-6));
    double prev = -1.0;
    for (double x = 0.0; x < 1.0; x += 0.01) {
      const double y = robust_clip(x, eps);
      CHECK(y >= prev);
      prev = y;
    }
  }
}

TEST_CASE("appearance_loss", "[losses]") {
  const Grid valid_all(8, 8, 1, GridTag::Mask, 1.0);
  SECTION("identical images cost nothing") {
    const Grid img = random_image(8, 8, 1, 21);
    CHECK(appearance_loss(img, img, valid_all) == 0.0);
  }
  SECTION("constant black versus white hits both clipped branches") {
    const Grid zero(8, 8, 1, GridTag::Image, 0.0);
    const Grid one(8, 8, 1, GridTag::Image, 1.0);
    // DSSIM ~ 0.5, L1 = 1: 0.85 clip(0.5, 0.15) + 0.15 clip(1, 0.3) ~ 0.21275
    CHECK(appearance_loss(zero, one, valid_all) == Catch::Approx(0.21275).margin(1e-5));
  }
  SECTION("no valid pixels raises") {
    const Grid img = random_image(8, 8, 1, 22);
    const Grid none(8, 8, 1, GridTag::Mask, 0.0);
    CHECK_THROWS_AS(appearance_loss(img, img, none), NoValidPixels);
  }
  SECTION("pixels whose SSIM window touches invalid samples are excluded") {
    const Grid img = random_image(8, 8, 1, 23);
    Grid holed = img;
    holed.at(4, 4) = 9.0;  // corrupted where marked invalid
    Grid validity = valid_all;
    validity.at(4, 4) = 0.0;
    // All pixels within the 3x3 window of (4,4) are excluded, so the
    // corruption never reaches the mean.
    CHECK(appearance_loss(img, holed, validity) == 0.0);
  }
}

TEST_CASE("smoothness_loss", "[losses]") {
  SECTION("constant depth is perfectly smooth") {
    const Grid depth(6, 6, 1, GridTag::Depth, 3.0);
    const Grid img = random_image(6, 6, 1, 31);
    CHECK(smoothness_loss(depth, img) == 0.0);
  }
  SECTION("depth ramp against a flat image costs the slope") {
    Grid depth(6, 6, 1, GridTag::Depth);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) depth.at(y, x) = 0.25 * x;
    const Grid img(6, 6, 1, GridTag::Image, 0.5);
    CHECK(smoothness_loss(depth, img) == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("an aligned image edge discounts the depth gradient") {
    Grid depth(6, 6, 1, GridTag::Depth);
    Grid edge(6, 6, 1, GridTag::Image);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        depth.at(y, x) = x < 3 ? 1.0 : 2.0;
        edge.at(y, x) = x < 3 ? 0.0 : 1.0;
      }
    const Grid flat(6, 6, 1, GridTag::Image, 0.5);
    CHECK(smoothness_loss(depth, edge) < smoothness_loss(depth, flat));
  }
  SECTION("extent mismatch is rejected") {
    CHECK_THROWS_AS(
        smoothness_loss(Grid(4, 4, 1, GridTag::Depth), Grid(4, 5, 1, GridTag::Image)),
        ShapeMismatch);
  }
}

TEST_CASE("total_loss", "[losses]") {
  const Intrinsics K{60.0, 60.0, 31.5, 23.5};
  AffineScene scene;

  SECTION("identical static frames cost nothing") {
    std::vector<SnippetFrame> frames(2, scene.frame(48, 64, K, Vector3::Zero()));
    std::vector<std::array<SelectionMask, kPyramidLevels>> masks(2);
    for (auto& fm : masks)
      for (int l = 0; l < kPyramidLevels; ++l)
        fm[l] = SelectionMask{Grid(4, 4, 1, GridTag::Mask, 0.3), MaskMode::Soft, 1.0};
    const Grid g = random_image(6, 6, 1, 41);
    const LossBreakdown b =
        total_loss(frames, masks, LossWeights{}, {0.3, 0.3, 0.3, 0.3}, {{g, g}});
    CHECK(b.appearance == Catch::Approx(0.0).margin(1e-12));
    CHECK(b.smoothness == 0.0);
    CHECK(b.sparsity == Catch::Approx(0.0).margin(1e-12));
    CHECK(b.reconstruction == 0.0);
    CHECK(b.total == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("moving snippet with true poses and depths has tiny appearance error") {
    std::vector<SnippetFrame> frames = {
        scene.frame(48, 64, K, Vector3(0.0, 0.0, 0.0)),
        scene.frame(48, 64, K, Vector3(0.05, 0.02, 0.0)),
        scene.frame(48, 64, K, Vector3(0.1, -0.03, 0.0)),
    };
    const LossBreakdown b = total_loss(frames, {}, LossWeights{}, {0.3, 0.3, 0.3, 0.3}, {});
    CHECK(b.appearance_terms.size() == 6 * 4);
    CHECK(b.appearance < 1e-6);
  }

  SECTION("the total is linear in each lambda") {
    std::vector<SnippetFrame> frames = {scene.frame(32, 32, K, Vector3::Zero()),
                                        scene.frame(32, 32, K, Vector3(0.04, 0, 0))};
    // Perturb one depth level so smoothness is nonzero.
    frames[0].depth.levels[0].at(10, 10) += 0.5;
    std::vector<std::array<SelectionMask, kPyramidLevels>> masks(2);
    for (auto& fm : masks)
      for (int l = 0; l < kPyramidLevels; ++l)
        fm[l] = SelectionMask{Grid(4, 4, 1, GridTag::Mask, 0.6), MaskMode::Soft, 1.0};
    const Grid g1 = random_image(5, 5, 1, 51);
    const Grid g2 = random_image(5, 5, 1, 52);

    LossWeights w1;
    LossWeights w2;
    w2.lambda_sm = 0.7;
    w2.lambda_sp = 0.2;
    w2.lambda_ae = 0.05;
    const std::array<double, 4> rho = {0.3, 0.3, 0.5, 0.7};
    const LossBreakdown b1 = total_loss(frames, masks, w1, rho, {{g1, g2}});
    const LossBreakdown b2 = total_loss(frames, masks, w2, rho, {{g1, g2}});
    CHECK(b1.smoothness > 0.0);
    CHECK(b1.sparsity > 0.0);
    CHECK(b1.reconstruction > 0.0);
    CHECK(b1.appearance == b2.appearance);
    CHECK(b1.smoothness == b2.smoothness);
    CHECK(b1.total == Catch::Approx(b1.appearance + w1.lambda_sm * b1.smoothness +
                                    w1.lambda_sp * b1.sparsity +
                                    w1.lambda_ae * b1.reconstruction)
                          .margin(1e-10));
    CHECK(b2.total - b1.total ==
          Catch::Approx((w2.lambda_sm - w1.lambda_sm) * b1.smoothness +
                        (w2.lambda_sp - w1.lambda_sp) * b1.sparsity +
                        (w2.lambda_ae - w1.lambda_ae) * b1.reconstruction)
              .margin(1e-10));
  }

  SECTION("smoothness halves its weight per level") {
    std::vector<SnippetFrame> frames = {scene.frame(32, 32, K, Vector3::Zero()),
                                        scene.frame(32, 32, K, Vector3::Zero())};
    // Put the same depth ramp at levels 1 and 2 of frame 0 and compare their
    // contributions through the aggregate.
    for (int l : {1, 2}) {
      Grid& d = frames[0].depth.levels[l - 1];
      for (int y = 0; y < d.height(); ++y)
        for (int x = 0; x < d.width(); ++x) d.at(y, x) = scene.z0 + 0.1 * x;
    }
    const LossBreakdown b = total_loss(frames, {}, LossWeights{}, {0.3, 0.3, 0.3, 0.3}, {});
    double raw_l1 = 0, raw_l2 = 0;
    for (const auto& t : b.smoothness_terms) {
      if (t.frame == 0 && t.level == 1) raw_l1 = t.value;
      if (t.frame == 0 && t.level == 2) raw_l2 = t.value;
    }
    CHECK(raw_l1 > 0.0);
    CHECK(b.smoothness == Catch::Approx(raw_l1 + raw_l2 / 2.0).margin(1e-12));
  }
}

TEST_CASE("disparity_to_depth", "[losses]") {
  Grid disp(1, 3, 1, GridTag::Image);
  disp.at(0, 0) = 0.0;
  disp.at(0, 1) = 0.5;
  disp.at(0, 2) = 1.0;
  const Grid depth = disparity_to_depth(disp);
  CHECK(depth.tag() == GridTag::Depth);
  CHECK(depth.at(0, 0) == Catch::Approx(100.0));
  CHECK(depth.at(0, 1) == Catch::Approx(1.0 / 5.01));
  CHECK(depth.at(0, 2) == Catch::Approx(1.0 / 10.01));
}
