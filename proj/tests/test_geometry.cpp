#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rigidloc/geometry.hpp"
#include "support.hpp"

using namespace rigidloc;
using namespace testing;

namespace {

// Angle of the unit quaternion equivalent to R, computed from Eigen's quaternion
// conversion rather than the trace formula.
double quaternion_angle(const Mat3& R) {
    const Eigen::Quaterniond q(R);
    return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

}  // namespace

TEST_CASE("rotation construction validates orthonormality") {
    CHECK_NOTHROW(Rotation::from_matrix(Mat3::Identity()));
    Mat3 scaled = 2.0 * Mat3::Identity();
    CHECK_THROWS_AS(Rotation::from_matrix(scaled), std::invalid_argument);
    Mat3 reflect = Mat3::Identity();
    reflect(2, 2) = -1.0;
    CHECK_THROWS_AS(Rotation::from_matrix(reflect), std::invalid_argument);

    CounterRng rng(11);
    for (int i = 0; i < 200; ++i) {
        const Mat3 R = random_rotation(rng).matrix();
        CHECK(max_abs_diff(R * R.transpose(), Mat3::Identity()) < 1e-9);
        CHECK(std::abs(R.determinant() - 1.0) < 1e-9);
    }
}

TEST_CASE("compose: identity, inverse and a hand-computed case") {
    CounterRng rng(1);
    const Pose T = random_pose(rng);
    CHECK(pose_diff(compose(Pose::identity(), T), T) < 1e-15);
    CHECK(pose_diff(compose(T, inverse(T)), Pose::identity()) < 1e-12);

    const Pose a{rot_z(std::numbers::pi / 2), Vec3(1, 0, 0)};
    const Pose b{Rotation::identity(), Vec3(0, 1, 0)};
    const Pose ab = compose(a, b);
    CHECK(ab.translation.norm() < 1e-15);

    const Eigen::Matrix4d oracle = homogeneous(a) * homogeneous(b);
    CHECK((homogeneous(ab) - oracle).cwiseAbs().maxCoeff() < 1e-15);

    for (int i = 0; i < 100; ++i) {
        const Pose p = random_pose(rng);
        const Pose q = random_pose(rng);
        CHECK((homogeneous(compose(p, q)) - homogeneous(p) * homogeneous(q)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("inverse") {
    CHECK(pose_diff(inverse(Pose::identity()), Pose::identity()) == 0.0);
    const Pose t{Rotation::identity(), Vec3(1, 2, 3)};
    CHECK(pose_diff(inverse(t), Pose{Rotation::identity(), Vec3(-1, -2, -3)}) == 0.0);

    CounterRng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Pose T = random_pose(rng);
        CHECK(pose_diff(compose(inverse(T), T), Pose::identity()) < 1e-12);
        CHECK(pose_diff(inverse(inverse(T)), T) < 1e-9);
    }
}

TEST_CASE("relative_pose") {
    CounterRng rng(3);
    const Pose T = random_pose(rng);
    CHECK(pose_diff(relative_pose(T, T), Pose::identity()) < 1e-12);
    CHECK(pose_diff(relative_pose(Pose::identity(), T), T) < 1e-15);
    for (int i = 0; i < 1000; ++i) {
        const Pose Ti = random_pose(rng);
        const Pose Tj = random_pose(rng);
        CHECK(pose_diff(compose(Ti, relative_pose(Ti, Tj)), Tj) < 1e-12);
    }
}

TEST_CASE("rotation_angle_error") {
    CHECK(rotation_angle_error(Rotation::identity(), Rotation::identity()) == 0.0);
    const Rotation r90 = rot_z(std::numbers::pi / 2);
    CHECK(std::abs(rotation_angle_error(Rotation::identity(), r90) - std::numbers::pi / 2) < 1e-12);
    CHECK(std::abs(quaternion_angle(r90.matrix()) - std::numbers::pi / 2) < 1e-12);

    // R·Rᵀ of a random rotation is identity up to round-off; the trace can
    // exceed 3 and the clamp must keep the result finite.
    CounterRng rng(4);
    int overshoot = 0;
    for (int i = 0; i < 2000; ++i) {
        const Rotation R = random_rotation(rng);
        const Rotation RRt = Rotation::unchecked(R.matrix() * R.matrix().transpose());
        if ((RRt.matrix().trace() - 1.0) / 2.0 > 1.0) ++overshoot;
        const double e = rotation_angle_error(Rotation::identity(), RRt);
        CHECK(std::isfinite(e));
        CHECK(e < 1e-7);
    }
    MESSAGE("trace overshoots exercised: " << overshoot);

    Mat3 over = Mat3::Identity() * (1.0 + 1e-15);
    CHECK(rotation_angle_error(Rotation::identity(), Rotation::unchecked(over)) == 0.0);

    for (int i = 0; i < 1000; ++i) {
        const Rotation a = random_rotation(rng);
        const Rotation b = random_rotation(rng);
        const double e = rotation_angle_error(a, b);
        CHECK(std::abs(e - rotation_angle_error(b, a)) < 1e-12);
        CHECK(rotation_angle_error(a, a) < 1e-7);
        // Quaternion oracle; acos loses precision near 0 and π.
        const double q = quaternion_angle(a.matrix().transpose() * b.matrix());
        if (e > 1e-3 && e < std::numbers::pi - 1e-3) CHECK(std::abs(e - q) < 1e-9);
        CHECK(std::abs(rotation_angle_precise(a, b) - q) < 1e-12);
    }
}

TEST_CASE("precise angle resolves tiny rotations") {
    for (double angle : {1e-14, 1e-11, 1e-9, 1e-6}) {
        const Rotation r = Rotation::about_axis(Vec3(1, 2, 3), angle);
        CHECK(std::abs(rotation_angle_precise(Rotation::identity(), r) - angle) < 1e-3 * angle);
    }
    CHECK(std::abs(rotation_angle_precise(Rotation::identity(), rot_z(std::numbers::pi / 2)) - std::numbers::pi / 2) <
          1e-15);
}

TEST_CASE("translation_error") {
    CHECK(translation_error(Vec3::Zero(), Vec3::Zero()) == 0.0);
    CHECK(translation_error(Vec3(1, 0, 0), Vec3::Zero()) == 1.0);
    CHECK(translation_error(Vec3(1, 2, 2), Vec3::Zero()) == doctest::Approx(3.0).epsilon(1e-15));
    CounterRng rng(12);
    const Pose T = random_pose(rng);
    CHECK(translation_error(T.translation, T.translation) == 0.0);
    CHECK(rotation_angle_error(T.rotation, T.rotation) < 1e-7);
}

TEST_CASE("degree conversion") {
    CHECK(rad_to_deg(std::numbers::pi / 2) == doctest::Approx(90.0).epsilon(1e-15));
    CHECK(deg_to_rad(180.0) == doctest::Approx(std::numbers::pi).epsilon(1e-15));
}

TEST_CASE("intrinsics") {
    CHECK_THROWS_AS((Intrinsics{0.0, 1.0, 0.0, 0.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((Intrinsics{1.0, -1.0, 0.0, 0.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((Intrinsics{NAN, 1.0, 0.0, 0.0}.validate()), std::invalid_argument);
    const Intrinsics k{2.0, 3.0, 4.0, 5.0};
    const Vec3 u(7.0, 11.0, 1.0);
    CHECK((k.matrix() * k.unproject(u) - u).norm() < 1e-15);
}

TEST_CASE("backproject") {
    const PixelGrid one{1, 1};
    DepthMap d(1, 1);
    d.valid[0] = 1;

    SUBCASE("unit intrinsics at the origin pixel") {
        // Principal point at the first pixel center so u = (0.5, 0.5) maps to the axis.
        d.depth[0] = 1.0;
        const CameraPoints p = backproject(d, Intrinsics{1, 1, 0.5, 0.5}, one);
        REQUIRE(p.points.size() == 1);
        CHECK((p.points[0] - Vec3(0, 0, 1)).norm() < 1e-15);
    }
    SUBCASE("scaled ray") {
        // u = (2, 0, 1) with fx = 2: a 3-pixel-wide grid puts column 1's center at 1.5,
        // so cx = -0.5 places that center at u_x = 2 relative to the axis.
        const PixelGrid g{3, 1};
        DepthMap dm(3, 1);
        dm.valid[1] = 1;
        dm.depth[1] = 4.0;
        const CameraPoints p = backproject(dm, Intrinsics{2, 2, -0.5, 0.5}, g);
        REQUIRE(p.points.size() == 1);
        CHECK(p.pixels[0] == 1);
        CHECK((p.points[0] - Vec3(4, 0, 4)).norm() < 1e-15);
    }
    SUBCASE("zero depth collapses to the origin") {
        const PixelGrid g{4, 4};
        DepthMap dm(4, 4);
        std::fill(dm.valid.begin(), dm.valid.end(), 1);
        const CameraPoints p = backproject(dm, Intrinsics{3, 3, 2, 2}, g);
        CHECK(p.points.size() == 16);
        for (const Vec3& y : p.points) CHECK(y.norm() == 0.0);
    }
    SUBCASE("non-finite depth names the pixel") {
        d.depth[0] = NAN;
        try {
            backproject(d, Intrinsics{1, 1, 0, 0}, one);
            FAIL("expected domain_error");
        } catch (const std::domain_error& e) {
            CHECK(std::string(e.what()).find("col 0") != std::string::npos);
        }
    }
    SUBCASE("invalid pixels are skipped") {
        d.valid[0] = 0;
        d.depth[0] = NAN;
        CHECK(backproject(d, Intrinsics{1, 1, 0, 0}, one).points.empty());
    }
}

TEST_CASE("project_to_depth") {
    const Intrinsics k{1, 1, 0, 0};
    const PixelGrid g{2, 2};
    SUBCASE("single point on the axis") {
        const Vec3 x(0, 0, 1);
        const DepthMap d = project_to_depth(std::span<const Vec3>(&x, 1), Pose::identity(), k, g);
        CHECK(d.count_valid() == 1);
        CHECK(d.valid[g.index(0, 0)] == 1);
        CHECK(d.depth[g.index(0, 0)] == 1.0);
    }
    SUBCASE("behind the camera") {
        const Vec3 x(0, 0, -1);
        const DepthMap d = project_to_depth(std::span<const Vec3>(&x, 1), Pose::identity(), k, g);
        CHECK(d.count_valid() == 0);
    }
    SUBCASE("z-buffer keeps the nearest point") {
        const std::vector<Vec3> xs = {Vec3(0.2, 0.2, 2.0), Vec3(0.1, 0.1, 1.0), Vec3(0.3, 0.3, 3.0)};
        const DepthMap d = project_to_depth(xs, Pose::identity(), k, g);
        CHECK(d.count_valid() == 1);
        CHECK(d.depth[g.index(0, 0)] == 1.0);
    }
}

TEST_CASE("backproject and project round trip through a pose") {
    CounterRng rng(5);
    const PixelGrid g{8, 6};
    const Intrinsics k{7.0, 6.5, 4.0, 3.0};
    for (int trial = 0; trial < 20; ++trial) {
        const Pose T = random_pose(rng);
        DepthMap d(g.width, g.height);
        for (std::size_t i = 0; i < g.size(); ++i) {
            d.valid[i] = rng.uniform() < 0.8 ? 1 : 0;
            d.depth[i] = rng.uniform(0.5, 6.0);
        }
        const CameraPoints cam = backproject(d, k, g);
        std::vector<Vec3> world;
        for (const Vec3& y : cam.points) world.push_back(T.apply(y));

        const DepthMap re = project_to_depth(world, T, k, g);
        CHECK(re.valid == d.valid);
        const CameraPoints cam2 = backproject(re, k, g);
        REQUIRE(cam2.points.size() == world.size());
        for (std::size_t j = 0; j < world.size(); ++j) {
            CHECK((T.apply(cam2.points[j]) - world[j]).norm() < 1e-9);
        }
    }
}
