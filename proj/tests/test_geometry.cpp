#include <catch2/catch_amalgamated.hpp>

#include "dfo/geometry.hpp"
#include "dfo/rng.hpp"

using namespace dfo;

namespace {

Twist random_twist(Rng& rng, double max_norm) {
  Vector6 xi;
  for (int i = 0; i < 6; ++i) xi[i] = rng.uniform_range(-1.0, 1.0);
  const double n = xi.norm();
  if (n > 0) xi *= rng.uniform_range(0.0, max_norm) / n;
  return Twist(xi);
}

Eigen::Matrix4d homogeneous(const RigidTransform& T) {
  Eigen::Matrix4d M = Eigen::Matrix4d::Identity();
  M.topLeftCorner<3, 3>() = T.R;
  M.topRightCorner<3, 1>() = T.t;
  return M;
}

Eigen::Matrix4d hat(const Twist& xi) {
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  M.topLeftCorner<3, 3>() = skew(xi.w);
  M.topRightCorner<3, 1>() = xi.v;
  return M;
}

}  // namespace

TEST_CASE("exp_map basics", "[geometry]") {
  SECTION("zero twist gives the exact identity") {
    const RigidTransform T = exp_map(Twist{});
    CHECK(T.R == Matrix3::Identity());
    CHECK(T.t == Vector3::Zero());
  }
  SECTION("pure translation") {
    const RigidTransform T = exp_map(Twist(Vector3(1, 2, 3), Vector3::Zero()));
    CHECK(T.R.isApprox(Matrix3::Identity(), 1e-15));
    CHECK(T.t.isApprox(Vector3(1, 2, 3), 1e-15));
  }
  SECTION("rotation about z by 90 degrees") {
    const RigidTransform T = exp_map(Twist(Vector3::Zero(), Vector3(0, 0, M_PI / 2)));
    Matrix3 expected;
    expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    CHECK(T.R.isApprox(expected, 1e-12));
    CHECK(T.t.norm() < 1e-15);
  }
}

TEST_CASE("log_map", "[geometry]") {
  SECTION("identity maps to the zero twist") {
    const Twist xi = log_map(RigidTransform::identity());
    CHECK(xi.norm() == 0.0);
  }
  SECTION("roundtrip on random twists") {
    // Oracle: log is defined by exp o log = id; sample exp(xi) and recover xi.
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
      const Twist xi = random_twist(rng, 1.0);
      const Twist back = log_map(exp_map(xi));
      CHECK((back.vector() - xi.vector()).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SECTION("angle near pi is rejected") {
    const RigidTransform T =
        exp_map(Twist(Vector3::Zero(), Vector3(0, 0, M_PI - 1e-7)));
    CHECK_THROWS_AS(log_map(T), AngleNearPi);
  }
}

TEST_CASE("compose and inverse", "[geometry]") {
  Rng rng(11);
  const RigidTransform T = exp_map(random_twist(rng, 1.5));
  SECTION("identity is neutral") {
    const RigidTransform C = compose(T, RigidTransform::identity());
    CHECK(C.R.isApprox(T.R, 1e-15));
    CHECK(C.t.isApprox(T.t, 1e-15));
  }
  SECTION("T composed with its inverse") {
    const RigidTransform C = compose(T, inverse(T));
    CHECK((C.R - Matrix3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(C.t.cwiseAbs().maxCoeff() < 1e-9);
  }
  SECTION("two z-rotations by 45 degrees") {
    const RigidTransform R45 = exp_map(Twist(Vector3::Zero(), Vector3(0, 0, M_PI / 4)));
    const RigidTransform R90 = exp_map(Twist(Vector3::Zero(), Vector3(0, 0, M_PI / 2)));
    const RigidTransform C = compose(R45, R45);
    CHECK(C.R.isApprox(R90.R, 1e-12));
  }
  SECTION("associativity on random triples") {
    for (int i = 0; i < 100; ++i) {
      const RigidTransform a = exp_map(random_twist(rng, 1.0));
      const RigidTransform b = exp_map(random_twist(rng, 1.0));
      const RigidTransform c = exp_map(random_twist(rng, 1.0));
      const RigidTransform lhs = compose(compose(a, b), c);
      const RigidTransform rhs = compose(a, compose(b, c));
      CHECK((homogeneous(lhs) - homogeneous(rhs)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("exp_map group properties", "[geometry]") {
  Rng rng(13);
  SECTION("exp(-xi) is the inverse of exp(xi)") {
    for (int i = 0; i < 100; ++i) {
      const Twist xi = random_twist(rng, 2.0);
      Twist neg;
      neg.v = -xi.v;
      neg.w = -xi.w;
      const Eigen::Matrix4d lhs = homogeneous(exp_map(neg));
      const Eigen::Matrix4d rhs = homogeneous(inverse(exp_map(xi)));
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SECTION("second-order accuracy of the linearization") {
    // ||exp(xi) - (I + hat(xi))|| should shrink ~4x when xi is halved.
    for (int i = 0; i < 20; ++i) {
      const Twist xi = random_twist(rng, 0.5);
      if (xi.norm() < 1e-3) continue;
      auto err = [&](double s) {
        const Twist sx(s * xi.v, s * xi.w);
        return (homogeneous(exp_map(sx)) - (Eigen::Matrix4d::Identity() + hat(sx))).norm();
      };
      const double ratio = err(1.0) / err(0.5);
      CHECK(ratio > 3.0);
      CHECK(ratio < 5.0);
    }
  }
}

TEST_CASE("backproject and project", "[geometry]") {
  const Intrinsics K{100.0, 120.0, 64.0, 48.0};
  SECTION("principal ray") {
    const Vector3 X = backproject(Pixel{K.cx, K.cy}, 5.0, K);
    CHECK(X.isApprox(Vector3(0, 0, 5), 1e-15));
    const Pixel p = project(Vector3(0, 0, 5), K);
    CHECK(p.u == Catch::Approx(K.cx).margin(1e-12));
    CHECK(p.v == Catch::Approx(K.cy).margin(1e-12));
  }
  SECTION("unit tangent") {
    const Vector3 X = backproject(Pixel{K.cx + K.fx, K.cy}, 2.0, K);
    CHECK(X.isApprox(Vector3(2, 0, 2), 1e-15));
  }
  SECTION("roundtrip") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const Pixel p{rng.uniform_range(0, 128), rng.uniform_range(0, 96)};
      const double z = rng.uniform_range(0.5, 20.0);
      const Pixel back = project(backproject(p, z, K), K);
      CHECK(std::abs(back.u - p.u) < 1e-10);
      CHECK(std::abs(back.v - p.v) < 1e-10);
    }
  }
  SECTION("errors") {
    CHECK_THROWS_AS(backproject(Pixel{0, 0}, 0.0, K), NonPositiveDepth);
    CHECK_THROWS_AS(project(Vector3(1, 1, 0), K), PointBehindCamera);
  }
}

TEST_CASE("warp_point", "[geometry]") {
  const Intrinsics K{100.0, 120.0, 64.0, 48.0};
  SECTION("identity transform is the identity on pixels") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      const Pixel p{rng.uniform_range(0, 128), rng.uniform_range(0, 96)};
      const double z = rng.uniform_range(0.1, 50.0);
      const WarpedPoint w = warp_point(p, z, RigidTransform::identity(), K);
      CHECK(std::abs(w.pixel.u - p.u) < 1e-10);
      CHECK(std::abs(w.pixel.v - p.v) < 1e-10);
      CHECK(w.depth == Catch::Approx(z));
    }
  }
  SECTION("pure x-translation shifts by the stereo disparity") {
    const double b = 0.3, z = 4.0;
    RigidTransform T;
    T.t = Vector3(b, 0, 0);
    const Pixel p{30.0, 40.0};
    const WarpedPoint w = warp_point(p, z, T, K);
    CHECK(w.pixel.u == Catch::Approx(p.u + K.fx * b / z).margin(1e-12));
    CHECK(w.pixel.v == Catch::Approx(p.v).margin(1e-12));
  }
  SECTION("matches the composed projective chain") {
    // Oracle: raw matrix arithmetic, independent of the library ops.
    Rng rng(17);
    for (int i = 0; i < 100; ++i) {
      const Pixel p{rng.uniform_range(10, 110), rng.uniform_range(10, 90)};
      const double z = rng.uniform_range(1.0, 10.0);
      const RigidTransform T = exp_map(random_twist(rng, 0.3));
      Eigen::Matrix3d Km;
      Km << K.fx, 0, K.cx, 0, K.fy, K.cy, 0, 0, 1;
      const Vector3 X = T.R * (z * Km.inverse() * Vector3(p.u, p.v, 1.0)) + T.t;
      if (X.z() <= 1e-3) continue;
      const Vector3 h = Km * X;
      const WarpedPoint w = warp_point(p, z, T, K);
      CHECK(std::abs(w.pixel.u - h.x() / h.z()) < 1e-10);
      CHECK(std::abs(w.pixel.v - h.y() / h.z()) < 1e-10);
      CHECK(w.depth == Catch::Approx(X.z()).margin(1e-12));
    }
  }
}

TEST_CASE("rescale_intrinsics", "[geometry]") {
  const Intrinsics K{200.0, 210.0, 101.5, 63.5};
  SECTION("level 1 is unchanged") {
    const Intrinsics K1 = rescale_intrinsics(K, 1);
    CHECK(K1.fx == K.fx);
    CHECK(K1.cx == K.cx);
  }
  SECTION("level 2 halves the focal length") {
    const Intrinsics K2 = rescale_intrinsics(K, 2);
    CHECK(K2.fx == Catch::Approx(K.fx / 2));
    CHECK(K2.fy == Catch::Approx(K.fy / 2));
    CHECK(K2.cx == Catch::Approx((K.cx + 0.5) / 2 - 0.5));
  }
  SECTION("rescaling twice by one level equals level 3") {
    const Intrinsics two_steps = rescale_intrinsics(rescale_intrinsics(K, 2), 2);
    const Intrinsics K3 = rescale_intrinsics(K, 3);
    CHECK(two_steps.fx == Catch::Approx(K3.fx).margin(1e-12));
    CHECK(two_steps.cx == Catch::Approx(K3.cx).margin(1e-12));
    CHECK(two_steps.cy == Catch::Approx(K3.cy).margin(1e-12));
  }
  SECTION("invalid level") {
    CHECK_THROWS_AS(rescale_intrinsics(K, 5), InvalidLevel);
    CHECK_THROWS_AS(rescale_intrinsics(K, 0), InvalidLevel);
  }
}
