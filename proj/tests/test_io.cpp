#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rigidloc/io.hpp"
#include "support.hpp"

using namespace rigidloc;
using namespace testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rigidloc_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << bytes;
}

}  // namespace

TEST_CASE("binary map files round trip") {
    const fs::path dir = scratch("maps");
    CounterRng rng(1);
    std::vector<double> depth(12);
    std::vector<Vec3> pts(12);
    std::vector<std::uint8_t> mask(12);
    for (int i = 0; i < 12; ++i) {
        depth[i] = rng.normal();
        pts[i] = random_vec(rng);
        mask[i] = static_cast<std::uint8_t>(i % 2);
    }
    write_depth_file(dir / "d.bin", 4, 3, depth);
    write_point_file(dir / "p.bin", 4, 3, pts);
    write_mask_file(dir / "m.bin", 4, 3, mask);
    write_weight_file(dir / "w.bin", 4, 3, depth);

    const Image<double> d = read_depth_file(dir / "d.bin");
    CHECK(d.width == 4);
    CHECK(d.height == 3);
    CHECK(d.data == depth);
    CHECK(read_point_file(dir / "p.bin").data == pts);
    CHECK(read_mask_file(dir / "m.bin").data == mask);
    CHECK(read_weight_file(dir / "w.bin").data == depth);

    const std::string bytes = slurp(dir / "d.bin");
    CHECK(bytes.size() == 8 + 12 + 12 * 8);
    CHECK(bytes.substr(0, 8) == std::string(kDepthMagic, 8));
    CHECK(static_cast<unsigned char>(bytes[8]) == 1);  // little-endian version
    CHECK(static_cast<unsigned char>(bytes[12]) == 4);

    SUBCASE("wrong kind of file") { CHECK_THROWS_AS(read_point_file(dir / "d.bin"), ValidationError); }
    SUBCASE("truncated payload") {
        spit(dir / "t.bin", bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_depth_file(dir / "t.bin"), ValidationError);
    }
    SUBCASE("unsupported version") {
        std::string v = bytes;
        v[8] = 7;
        spit(dir / "v.bin", v);
        CHECK_THROWS_AS(read_depth_file(dir / "v.bin"), ValidationError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_depth_file(dir / "nope.bin"), ValidationError); }
    SUBCASE("size mismatch on write") {
        CHECK_THROWS(write_depth_file(dir / "x.bin", 5, 3, depth));
    }
}

TEST_CASE("pose text format") {
    CounterRng rng(2);
    for (int i = 0; i < 50; ++i) {
        const Pose T = random_pose(rng);
        const Pose back = parse_pose(format_pose(T));
        CHECK(back.rotation.matrix() == T.rotation.matrix());
        CHECK(back.translation == T.translation);
    }
    CHECK(parse_pose("1 0 0 5  0 1 0 6  0 0 1 7").translation == Vec3(5, 6, 7));
    CHECK_THROWS_AS(parse_pose("1 0 0 0 1 0"), ValidationError);
    CHECK_THROWS_AS(parse_pose("1 0 0 0 0 1 0 0 0 0 1 0 9"), ValidationError);
    CHECK_THROWS_AS(parse_pose("2 0 0 0 0 1 0 0 0 0 1 0"), ValidationError);
    CHECK_THROWS_AS(parse_pose("1 0 0 x 0 1 0 0 0 0 1 0"), ValidationError);

    const fs::path dir = scratch("pose");
    const Pose T = random_pose(rng);
    write_pose_file(dir / "p.txt", T);
    CHECK(pose_diff(read_pose_file(dir / "p.txt"), T) == 0.0);
}

TEST_CASE("config text format") {
    const ConfigMap c = parse_config("# comment\nepochs = 10\n\ndisable=l_pose  # trailing\ndisable = l_along\n");
    CHECK(c.at("epochs") == std::vector<std::string>{"10"});
    CHECK(c.at("disable") == std::vector<std::string>{"l_pose", "l_along"});
    try {
        parse_config("a=1\nbroken line\n", "cfg.txt");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("cfg.txt:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("=3"), ValidationError);
    CHECK_THROWS_AS(read_config_file("/nonexistent/file.cfg"), ValidationError);
}

TEST_CASE("dataset round trip") {
    SceneLayout layout;
    layout.width = 8;
    layout.height = 8;
    layout.frames_per_sequence = 3;
    const Dataset ds = generate_scene(default_scene_config(5, layout));
    const fs::path a = scratch("ds_a");
    const fs::path b = scratch("ds_b");
    save_dataset(ds, a);
    save_dataset(ds, b);
    for (const auto& e : fs::directory_iterator(a)) {
        CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    }

    const Dataset back = load_dataset(a);
    REQUIRE(back.num_sequences() == 2);
    REQUIRE(back.frames_per_sequence() == 3);
    CHECK(back.heldout.size() == 2);
    CHECK(back.scene.diameter() == doctest::Approx(ds.scene.diameter()));
    CHECK(back.grid.width == 8);
    CHECK(back.intrinsics.fx == ds.intrinsics.fx);
    for (int k = 0; k < 2; ++k) {
        for (int n = 0; n < 3; ++n) {
            const FrameTarget& t = back.sequences[k][n].target;
            const FrameTarget& o = ds.sequences[k][n].target;
            CHECK(t.depth == o.depth);
            CHECK(t.point_map == o.point_map);
            CHECK(t.valid == o.valid);
            CHECK(pose_diff(t.pose, o.pose) == 0.0);
            DepthMap d(t.width, t.height);
            d.depth = t.depth;
            d.valid = t.valid;
            const CameraPoints cam = backproject(d, back.intrinsics, back.grid);
            for (std::size_t j = 0; j < cam.points.size(); ++j) {
                CHECK((t.pose.apply(cam.points[j]) - t.point_map[cam.pixels[j]]).norm() < 1e-9);
            }
        }
    }
    CHECK_NOTHROW(load_dataset(a / "manifest.json"));

    SUBCASE("shape mismatch names the file") {
        write_depth_file(a / "train_s1_f2.depth.bin", 4, 4, std::vector<double>(16, 1.0));
        try {
            load_dataset(a);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("train_s1_f2.depth.bin") != std::string::npos);
        }
    }
    SUBCASE("missing manifest") { CHECK_THROWS_AS(load_dataset(scratch("empty")), ValidationError); }
    SUBCASE("corrupt manifest") {
        spit(a / "manifest.json", "{ not json");
        CHECK_THROWS_AS(load_dataset(a), ValidationError);
    }
}

TEST_CASE("checkpoint round trip") {
    SceneLayout layout;
    layout.width = 4;
    layout.height = 4;
    layout.frames_per_sequence = 2;
    const TrainingSet set = make_training_set(generate_scene(default_scene_config(5, layout)), 1.0, 1);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.frames_per_sequence = 2;
    cfg.predictor.hidden = {4};
    cfg.toggles.l_across = false;
    cfg.sparsity = 0.5;
    cfg.adam.lr = 3e-3;
    const TrainResult r = train(set, cfg);
    const Checkpoint c{cfg, r.params, r.adam};
    const fs::path dir = scratch("ckpt");
    save_checkpoint(dir / "c.json", c);
    const Checkpoint back = load_checkpoint(dir / "c.json");
    CHECK(back.params.values == c.params.values);
    CHECK(back.adam.m == c.adam.m);
    CHECK(back.adam.v == c.adam.v);
    CHECK(back.adam.step == c.adam.step);
    CHECK(back.params.frames == c.params.frames);
    CHECK(back.params.norm.point_scale == c.params.norm.point_scale);
    CHECK(back.config.toggles.l_across == false);
    CHECK(back.config.sparsity == 0.5);
    CHECK(back.config.adam.lr == 3e-3);
    CHECK(back.config.predictor.hidden == std::vector<int>{4});
    CHECK(checkpoint_json(back) == checkpoint_json(c));

    spit(dir / "bad.json", R"({"format":"something-else"})");
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.json"), ValidationError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), ValidationError);
}
