#include "rigidloc/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rigidloc {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b, 8);
}

std::uint32_t get_u32(const unsigned char* b) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(const unsigned char* b) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError(p.string() + ": cannot open for writing");
    return os;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw ValidationError(p.string() + ": cannot open for reading");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_header(std::ostream& os, const char (&magic)[8], int width, int height) {
    os.write(magic, 8);
    put_u32(os, kMapFormatVersion);
    put_u32(os, static_cast<std::uint32_t>(width));
    put_u32(os, static_cast<std::uint32_t>(height));
}

// Returns the payload after validating magic, version and size.
std::string read_map(const fs::path& p, const char (&magic)[8], std::size_t bytes_per_pixel, int& width, int& height) {
    std::string buf = slurp(p);
    if (buf.size() < 20 || std::memcmp(buf.data(), magic, 8) != 0) {
        throw ValidationError(p.string() + ": bad magic (expected a " + std::string(magic, 7) + " file)");
    }
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t version = get_u32(b + 8);
    if (version != kMapFormatVersion) throw ValidationError(p.string() + ": unsupported version " + std::to_string(version));
    width = static_cast<int>(get_u32(b + 12));
    height = static_cast<int>(get_u32(b + 16));
    const std::size_t expected = 20 + static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * bytes_per_pixel;
    if (buf.size() != expected) {
        throw ValidationError(p.string() + ": payload is " + std::to_string(buf.size()) + " bytes, expected " +
                              std::to_string(expected));
    }
    return buf.substr(20);
}

void check_size(std::size_t n, int width, int height, const fs::path& p) {
    if (n != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ValidationError(p.string() + ": data length does not match " + std::to_string(width) + "x" +
                              std::to_string(height));
    }
}

void write_scalars(const fs::path& p, const char (&magic)[8], int width, int height, const std::vector<double>& v) {
    check_size(v.size(), width, height, p);
    std::ofstream os = open_out(p);
    write_header(os, magic, width, height);
    for (double d : v) put_f64(os, d);
}

Image<double> read_scalars(const fs::path& p, const char (&magic)[8]) {
    Image<double> img;
    const std::string payload = read_map(p, magic, 8, img.width, img.height);
    const auto* b = reinterpret_cast<const unsigned char*>(payload.data());
    img.data.resize(payload.size() / 8);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = get_f64(b + 8 * i);
    return img;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_depth_file(const fs::path& p, int width, int height, const std::vector<double>& depth) {
    write_scalars(p, kDepthMagic, width, height, depth);
}

Image<double> read_depth_file(const fs::path& p) { return read_scalars(p, kDepthMagic); }

void write_weight_file(const fs::path& p, int width, int height, const std::vector<double>& weights) {
    write_scalars(p, kWeightMagic, width, height, weights);
}

Image<double> read_weight_file(const fs::path& p) { return read_scalars(p, kWeightMagic); }

void write_point_file(const fs::path& p, int width, int height, const std::vector<Vec3>& points) {
    check_size(points.size(), width, height, p);
    std::ofstream os = open_out(p);
    write_header(os, kPointMagic, width, height);
    for (const Vec3& x : points) {
        for (int a = 0; a < 3; ++a) put_f64(os, x(a));
    }
}

Image<Vec3> read_point_file(const fs::path& p) {
    Image<Vec3> img;
    const std::string payload = read_map(p, kPointMagic, 24, img.width, img.height);
    const auto* b = reinterpret_cast<const unsigned char*>(payload.data());
    img.data.resize(payload.size() / 24);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = Vec3(get_f64(b + 24 * i), get_f64(b + 24 * i + 8), get_f64(b + 24 * i + 16));
    }
    return img;
}

void write_mask_file(const fs::path& p, int width, int height, const std::vector<std::uint8_t>& mask) {
    check_size(mask.size(), width, height, p);
    std::ofstream os = open_out(p);
    write_header(os, kMaskMagic, width, height);
    os.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
}

Image<std::uint8_t> read_mask_file(const fs::path& p) {
    Image<std::uint8_t> img;
    const std::string payload = read_map(p, kMaskMagic, 1, img.width, img.height);
    img.data.assign(payload.begin(), payload.end());
    return img;
}

std::string format_pose(const Pose& T) {
    const Mat3& R = T.rotation.matrix();
    std::string s;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            if (!s.empty()) s += ' ';
            s += fmt17(c < 3 ? R(r, c) : T.translation(r));
        }
    }
    return s;
}

Pose parse_pose(const std::string& line) {
    std::istringstream is(line);
    double v[12];
    for (double& x : v) {
        if (!(is >> x)) throw ValidationError("pose: expected 12 numbers");
    }
    std::string extra;
    if (is >> extra) throw ValidationError("pose: trailing data after 12 numbers");
    Mat3 R;
    Vec3 t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) R(r, c) = v[4 * r + c];
        t(r) = v[4 * r + 3];
    }
    try {
        return Pose{Rotation::from_matrix(R, 1e-6), t};
    } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("pose: ") + e.what());
    }
}

void write_pose_file(const fs::path& p, const Pose& T) {
    std::ofstream os = open_out(p);
    os << format_pose(T) << '\n';
}

Pose read_pose_file(const fs::path& p) {
    const std::string text = slurp(p);
    try {
        return parse_pose(text);
    } catch (const ValidationError& e) {
        throw ValidationError(p.string() + ": " + e.what());
    }
}

ConfigMap parse_config(const std::string& text, const std::string& source) {
    ConfigMap out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(source + ":" + std::to_string(lineno) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ValidationError(source + ":" + std::to_string(lineno) + ": empty key");
        out[key].push_back(trim(line.substr(eq + 1)));
    }
    return out;
}

ConfigMap read_config_file(const fs::path& p) { return parse_config(slurp(p), p.string()); }

namespace {

json primitive_json(const Primitive& prim) {
    json j;
    if (const auto* p = std::get_if<Plane>(&prim)) {
        j["type"] = "plane";
        j["center"] = {p->center.x(), p->center.y(), p->center.z()};
        j["normal"] = {p->normal.x(), p->normal.y(), p->normal.z()};
        j["radius"] = p->radius;
    } else {
        const auto& s = std::get<Sphere>(prim);
        j["type"] = "sphere";
        j["center"] = {s.center.x(), s.center.y(), s.center.z()};
        j["radius"] = s.radius;
    }
    return j;
}

Vec3 vec3_from(const json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

Primitive primitive_from(const json& j) {
    if (j.at("type") == "plane") return Plane{vec3_from(j.at("center")), vec3_from(j.at("normal")), j.at("radius").get<double>()};
    if (j.at("type") == "sphere") return Sphere{vec3_from(j.at("center")), j.at("radius").get<double>()};
    throw ValidationError("manifest: unknown primitive type");
}

json write_frames(const std::vector<std::vector<RenderedFrame>>& seqs, const fs::path& dir, const std::string& prefix) {
    json out = json::array();
    for (const auto& seq : seqs) {
        json js = json::array();
        for (const RenderedFrame& f : seq) {
            const std::string stem = prefix + "_s" + std::to_string(f.id.sequence) + "_f" + std::to_string(f.id.index);
            json rec;
            rec["sequence"] = f.id.sequence;
            rec["index"] = f.id.index;
            rec["pose"] = stem + ".pose.txt";
            rec["depth"] = stem + ".depth.bin";
            rec["points"] = stem + ".points.bin";
            rec["mask"] = stem + ".mask.bin";
            const FrameTarget& t = f.target;
            write_pose_file(dir / rec["pose"].get<std::string>(), t.pose);
            write_depth_file(dir / rec["depth"].get<std::string>(), t.width, t.height, t.depth);
            write_point_file(dir / rec["points"].get<std::string>(), t.width, t.height, t.point_map);
            write_mask_file(dir / rec["mask"].get<std::string>(), t.width, t.height, t.valid);
            js.push_back(std::move(rec));
        }
        out.push_back(std::move(js));
    }
    return out;
}

std::vector<std::vector<RenderedFrame>> read_frames(const json& j, const fs::path& dir, const PixelGrid& grid) {
    std::vector<std::vector<RenderedFrame>> out;
    for (const json& js : j) {
        std::vector<RenderedFrame> seq;
        for (const json& rec : js) {
            RenderedFrame f;
            f.id = FrameId{rec.at("sequence").get<int>(), rec.at("index").get<int>()};
            FrameTarget& t = f.target;
            t.width = grid.width;
            t.height = grid.height;
            t.pose = read_pose_file(dir / rec.at("pose").get<std::string>());
            const fs::path dp = dir / rec.at("depth").get<std::string>();
            const fs::path pp = dir / rec.at("points").get<std::string>();
            const fs::path mp = dir / rec.at("mask").get<std::string>();
            Image<double> d = read_depth_file(dp);
            Image<Vec3> x = read_point_file(pp);
            Image<std::uint8_t> m = read_mask_file(mp);
            for (const auto& [path, w, h] : {std::tuple{dp, d.width, d.height}, std::tuple{pp, x.width, x.height},
                                              std::tuple{mp, m.width, m.height}}) {
                if (w != grid.width || h != grid.height) {
                    throw ValidationError(path.string() + ": shape " + std::to_string(w) + "x" + std::to_string(h) +
                                          " disagrees with manifest resolution");
                }
            }
            t.depth = std::move(d.data);
            t.point_map = std::move(x.data);
            t.valid = std::move(m.data);
            seq.push_back(std::move(f));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    json m;
    m["format"] = "rigidloc-dataset";
    m["version"] = 1;
    m["scene"] = name;
    m["units"] = "meters";
    m["width"] = ds.grid.width;
    m["height"] = ds.grid.height;
    m["intrinsics"] = {{"fx", ds.intrinsics.fx}, {"fy", ds.intrinsics.fy}, {"cx", ds.intrinsics.cx}, {"cy", ds.intrinsics.cy}};
    m["scene_diameter"] = ds.scene.diameter();
    json prims = json::array();
    for (const Primitive& p : ds.scene.primitives) prims.push_back(primitive_json(p));
    m["primitives"] = std::move(prims);
    m["sequences"] = write_frames(ds.sequences, dir, "train");
    m["heldout"] = write_frames(ds.heldout, dir, "heldout");
    std::ofstream os = open_out(dir / "manifest.json");
    os << m.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& manifest_or_dir) {
    const fs::path manifest = fs::is_directory(manifest_or_dir) ? manifest_or_dir / "manifest.json" : manifest_or_dir;
    const fs::path dir = manifest.parent_path();
    json m;
    try {
        m = json::parse(slurp(manifest));
    } catch (const json::exception& e) {
        throw ValidationError(manifest.string() + ": " + e.what());
    }
    try {
        if (m.at("format") != "rigidloc-dataset") throw ValidationError(manifest.string() + ": not a rigidloc dataset");
        Dataset ds;
        ds.grid = PixelGrid{m.at("width").get<int>(), m.at("height").get<int>()};
        const json& k = m.at("intrinsics");
        ds.intrinsics = Intrinsics{k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                                   k.at("cy").get<double>()};
        ds.intrinsics.validate();
        for (const json& p : m.at("primitives")) ds.scene.primitives.push_back(primitive_from(p));
        ds.sequences = read_frames(m.at("sequences"), dir, ds.grid);
        if (m.contains("heldout")) ds.heldout = read_frames(m.at("heldout"), dir, ds.grid);
        const std::size_t n = ds.sequences.empty() ? 0 : ds.sequences.front().size();
        for (const auto& seq : ds.sequences) {
            if (seq.size() != n) throw ValidationError(manifest.string() + ": sequences have unequal length");
        }
        if (ds.sequences.size() < 2) {
            ds.warnings.push_back("dataset has fewer than 2 sequences: across-sequence constraints have no terms");
        }
        return ds;
    } catch (const json::exception& e) {
        throw ValidationError(manifest.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw ValidationError(manifest.string() + ": " + e.what());
    }
}

namespace {

json config_json(const TrainConfig& c) {
    json j;
    j["epochs"] = c.epochs;
    j["sequences_per_batch"] = c.sequences_per_batch;
    j["frames_per_sequence"] = c.frames_per_sequence;
    j["sparsity"] = c.sparsity;
    j["seed"] = c.seed;
    j["toggles"] = {{"l3d", c.toggles.l3d}, {"l_depth", c.toggles.l_depth}, {"l_pose", c.toggles.l_pose},
                    {"l_along", c.toggles.l_along}, {"l_across", c.toggles.l_across}};
    j["adam"] = {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps},
                 {"weight_decay", c.adam.weight_decay}};
    j["clip_norm"] = c.clip_norm;
    j["predictor"] = {{"fourier_frequencies", c.predictor.fourier_frequencies},
                      {"embedding_dim", c.predictor.embedding_dim},
                      {"hidden", c.predictor.hidden},
                      {"activation", c.predictor.activation == Activation::relu ? "relu" : "tanh"},
                      {"head_init_scale", c.predictor.head_init_scale},
                      {"embedding_init_scale", c.predictor.embedding_init_scale}};
    return j;
}

TrainConfig config_from(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.sequences_per_batch = j.at("sequences_per_batch").get<int>();
    c.frames_per_sequence = j.at("frames_per_sequence").get<int>();
    c.sparsity = j.at("sparsity").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const json& t = j.at("toggles");
    c.toggles = LossToggles{t.at("l3d").get<bool>(), t.at("l_depth").get<bool>(), t.at("l_pose").get<bool>(),
                            t.at("l_along").get<bool>(), t.at("l_across").get<bool>()};
    const json& a = j.at("adam");
    c.adam = AdamConfig{a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                        a.at("eps").get<double>(), a.at("weight_decay").get<double>()};
    c.clip_norm = j.at("clip_norm").get<double>();
    const json& p = j.at("predictor");
    c.predictor.fourier_frequencies = p.at("fourier_frequencies").get<int>();
    c.predictor.embedding_dim = p.at("embedding_dim").get<int>();
    c.predictor.hidden = p.at("hidden").get<std::vector<int>>();
    c.predictor.activation = p.at("activation") == "relu" ? Activation::relu : Activation::tanh;
    c.predictor.head_init_scale = p.at("head_init_scale").get<double>();
    c.predictor.embedding_init_scale = p.at("embedding_init_scale").get<double>();
    return c;
}

}  // namespace

std::string checkpoint_json(const Checkpoint& c) {
    json j;
    j["format"] = "rigidloc-checkpoint";
    j["version"] = 1;
    j["config"] = config_json(c.config);
    json p;
    const PredictorParams& pp = c.params;
    TrainConfig holder;
    holder.predictor = pp.config;
    p["config"] = config_json(holder)["predictor"];
    p["grid"] = {pp.grid.width, pp.grid.height};
    p["norm"] = {{"mean_point", {pp.norm.mean_point.x(), pp.norm.mean_point.y(), pp.norm.mean_point.z()}},
                 {"point_scale", pp.norm.point_scale},
                 {"mean_depth", pp.norm.mean_depth},
                 {"depth_scale", pp.norm.depth_scale}};
    json frames = json::array();
    for (const FrameId& f : pp.frames) frames.push_back({f.sequence, f.index});
    p["frames"] = std::move(frames);
    json layout = json::array();
    for (const ParamBlock& b : pp.layout.blocks) {
        layout.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
    }
    p["layout"] = std::move(layout);
    p["values"] = pp.values;
    j["predictor"] = std::move(p);
    j["adam"] = {{"step", c.adam.step}, {"m", c.adam.m}, {"v", c.adam.v}};
    return j.dump();
}

void save_checkpoint(const fs::path& p, const Checkpoint& c) {
    std::ofstream os = open_out(p);
    os << checkpoint_json(c) << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
    try {
        const json j = json::parse(slurp(path));
        if (j.at("format") != "rigidloc-checkpoint") throw ValidationError(path.string() + ": not a rigidloc checkpoint");
        if (j.at("version") != 1) throw ValidationError(path.string() + ": unsupported checkpoint version");
        Checkpoint c;
        c.config = config_from(j.at("config"));
        const json& p = j.at("predictor");
        json wrapped = config_json(c.config);
        wrapped["predictor"] = p.at("config");
        c.params.config = config_from(wrapped).predictor;
        c.params.grid = PixelGrid{p.at("grid").at(0).get<int>(), p.at("grid").at(1).get<int>()};
        const json& n = p.at("norm");
        c.params.norm.mean_point = vec3_from(n.at("mean_point"));
        c.params.norm.point_scale = n.at("point_scale").get<double>();
        c.params.norm.mean_depth = n.at("mean_depth").get<double>();
        c.params.norm.depth_scale = n.at("depth_scale").get<double>();
        for (const json& f : p.at("frames")) c.params.frames.push_back(FrameId{f.at(0).get<int>(), f.at(1).get<int>()});
        for (const json& b : p.at("layout")) {
            c.params.layout.blocks.push_back(ParamBlock{b.at("name").get<std::string>(), b.at("offset").get<std::size_t>(),
                                                        b.at("rows").get<int>(), b.at("cols").get<int>()});
        }
        c.params.values = p.at("values").get<std::vector<double>>();
        if (c.params.values.size() != c.params.layout.total()) {
            throw ValidationError(path.string() + ": parameter count does not match layout");
        }
        const json& a = j.at("adam");
        c.adam.step = a.at("step").get<std::int64_t>();
        c.adam.m = a.at("m").get<std::vector<double>>();
        c.adam.v = a.at("v").get<std::vector<double>>();
        if (c.adam.m.size() != c.params.values.size() || c.adam.v.size() != c.params.values.size()) {
            throw ValidationError(path.string() + ": optimizer state does not match parameters");
        }
        return c;
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

}  // namespace rigidloc
