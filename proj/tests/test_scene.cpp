#include <doctest.h>

#include <chrono>
#include <cmath>

#include "rigidloc/scene.hpp"
#include "support.hpp"

using namespace rigidloc;
using namespace testing;

namespace {

void check_consistency(const RenderedFrame& f, const Intrinsics& k) {
    const FrameTarget& t = f.target;
    DepthMap d(t.width, t.height);
    d.depth = t.depth;
    d.valid = t.valid;
    const CameraPoints cam = backproject(d, k, t.grid());
    double worst = 0.0;
    for (std::size_t j = 0; j < cam.points.size(); ++j) {
        worst = std::max(worst, (t.pose.apply(cam.points[j]) - t.point_map[cam.pixels[j]]).norm());
    }
    CHECK(worst < 1e-9);
}

}  // namespace

TEST_CASE("default scene") {
    const auto start = std::chrono::steady_clock::now();
    const Dataset ds = generate_scene(default_scene_config());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(seconds < 5.0);
    REQUIRE(ds.num_sequences() == 2);
    REQUIRE(ds.frames_per_sequence() == 8);
    CHECK(ds.warnings.empty());
    CHECK(ds.scene.diameter() == doctest::Approx(10.0));
    for (const auto& seq : ds.sequences) {
        for (const RenderedFrame& f : seq) {
            CHECK(f.target.size() == 32 * 32);
            CHECK(f.target.count_valid() == f.target.size());
            check_consistency(f, ds.intrinsics);
        }
    }
    REQUIRE(ds.heldout.size() == 2);
    for (const auto& seq : ds.heldout) {
        CHECK(seq.size() == 7);
        for (const RenderedFrame& f : seq) check_consistency(f, ds.intrinsics);
    }
}

TEST_CASE("generation is deterministic") {
    const Dataset a = generate_scene(default_scene_config(3));
    const Dataset b = generate_scene(default_scene_config(3));
    const Dataset c = generate_scene(default_scene_config(4));
    bool differs = false;
    for (int k = 0; k < 2; ++k) {
        for (int n = 0; n < 8; ++n) {
            const FrameTarget& ta = a.sequences[k][n].target;
            const FrameTarget& tb = b.sequences[k][n].target;
            CHECK(ta.depth == tb.depth);
            CHECK(ta.valid == tb.valid);
            CHECK(ta.point_map == tb.point_map);
            differs = differs || ta.depth != c.sequences[k][n].target.depth;
        }
    }
    CHECK(differs);
}

TEST_CASE("ground-truth relative poses compose") {
    const Dataset ds = generate_scene(default_scene_config());
    for (const auto& seq : ds.sequences) {
        for (std::size_t i = 0; i + 2 < seq.size(); ++i) {
            const Pose& a = seq[i].target.pose;
            const Pose& b = seq[i + 1].target.pose;
            const Pose& c = seq[i + 2].target.pose;
            CHECK(pose_diff(compose(relative_pose(a, b), relative_pose(b, c)), relative_pose(a, c)) < 1e-12);
        }
    }
}

TEST_CASE("config validation") {
    SceneConfig cfg = default_scene_config();
    SUBCASE("no primitives") {
        cfg.primitives.clear();
        try {
            generate_scene(cfg);
            FAIL("expected invalid_argument");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("cameras face no geometry") != std::string::npos);
        }
    }
    SUBCASE("cameras looking away") {
        for (Trajectory& t : cfg.trajectories) t.start = look_at(t.start.translation, t.start.translation + Vec3(0, 0, 1), Vec3::UnitX());
        CHECK_THROWS_AS(generate_scene(cfg), std::invalid_argument);
    }
    SUBCASE("single frame sequences") {
        SceneLayout layout;
        layout.frames_per_sequence = 1;
        CHECK_THROWS_AS(generate_scene(default_scene_config(7, layout)), std::invalid_argument);
    }
    SUBCASE("single sequence warns") {
        SceneLayout layout;
        layout.num_sequences = 1;
        const Dataset ds = generate_scene(default_scene_config(7, layout));
        CHECK(ds.num_sequences() == 1);
        REQUIRE(ds.warnings.size() == 1);
        CHECK(ds.warnings[0].find("K >= 2") != std::string::npos);
    }
}

TEST_CASE("ray casting") {
    Scene scene;
    scene.primitives.push_back(Plane{Vec3::Zero(), Vec3::UnitZ(), 100.0});
    SUBCASE("camera facing the plane along its normal") {
        const Pose cam = look_at(Vec3(0, 0, 5), Vec3::Zero(), Vec3::UnitY());
        const PixelGrid g{3, 3};
        const Intrinsics k{1000.0, 1000.0, 1.5, 1.5};
        const RenderedFrame f = render_frame(scene, cam, k, g);
        CHECK(f.target.valid[g.index(1, 1)] == 1);
        CHECK(std::abs(f.target.depth[g.index(1, 1)] - 5.0) < 1e-12);
    }
    SUBCASE("ray parallel to the plane") {
        const Pose cam = look_at(Vec3(0, 0, 1), Vec3(1, 0, 1));
        const RenderedFrame f = render_frame(scene, cam, Intrinsics{10.0, 10.0, 0.5, 0.5}, PixelGrid{1, 1});
        CHECK(f.target.valid[0] == 0);
    }
    SUBCASE("sphere hit from outside") {
        Scene s;
        s.primitives.push_back(Sphere{Vec3(0, 0, 0), 1.0});
        const std::optional<double> hit = s.intersect(Vec3(0, 0, 5), Vec3(0, 0, -1));
        REQUIRE(hit);
        CHECK(std::abs(*hit - 4.0) < 1e-12);
        CHECK_FALSE(s.intersect(Vec3(0, 0, 5), Vec3(0, 0, 1)));
    }
}

TEST_CASE("trajectories interpolate at fractional times") {
    const SceneConfig cfg = default_scene_config();
    const Trajectory& t = cfg.trajectories[0];
    CHECK(pose_diff(t.at(0.0), t.start) < 1e-15);
    const Pose mid = t.at(0.5);
    const double a = rotation_angle_precise(t.at(0.0).rotation, mid.rotation);
    const double b = rotation_angle_precise(mid.rotation, t.at(1.0).rotation);
    CHECK(std::abs(a - b) < 1e-12);
    CHECK(std::abs(a - 0.5 * t.rotation_step) < 1e-12);
}

TEST_CASE("sparsify") {
    const Dataset ds = generate_scene(default_scene_config());
    const FrameTarget& t = ds.sequences[0][0].target;

    const SparsifyResult all = sparsify(t, 1.0, 5);
    CHECK(all.target.valid == t.valid);
    CHECK(all.kept == t.count_valid());

    const SparsifyResult a = sparsify(t, 0.01, 5);
    const SparsifyResult b = sparsify(t, 0.01, 5);
    const SparsifyResult c = sparsify(t, 0.01, 6);
    CHECK(a.target.valid == b.target.valid);
    CHECK(a.target.valid != c.target.valid);
    CHECK(a.kept == c.kept);
    CHECK(a.target.count_valid() == a.kept);
    CHECK(a.kept == 10);

    CHECK_THROWS_AS(sparsify(t, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(sparsify(t, 1.5, 1), std::invalid_argument);

    SUBCASE("0.53% of 6420 valid pixels keeps 34") {
        FrameTarget big;
        big.width = 80;
        big.height = 81;
        big.point_map.assign(6480, Vec3::Zero());
        big.depth.assign(6480, 1.0);
        big.valid.assign(6480, 1);
        for (int i = 0; i < 60; ++i) big.valid[static_cast<std::size_t>(i) * 100] = 0;
        REQUIRE(big.count_valid() == 6420);
        const SparsifyResult s = sparsify(big, 0.0053, 9);
        CHECK(s.kept == 34);
        CHECK(s.target.count_valid() == 34);
        for (std::size_t i = 0; i < big.size(); ++i) {
            if (!big.valid[i]) CHECK(s.target.valid[i] == 0);
        }
    }
    SUBCASE("tiny fractions can empty a frame") {
        const SparsifyResult e = sparsify(t, 1e-5, 1);
        CHECK(e.empty);
        CHECK(e.target.count_valid() == 0);
    }
}
