#include "rigidloc/cli.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "rigidloc/eval.hpp"

namespace rigidloc {

namespace fs = std::filesystem;

namespace {

const std::string* last(const ConfigMap& cfg, const std::string& key) {
    const auto it = cfg.find(key);
    if (it == cfg.end() || it->second.empty()) return nullptr;
    return &it->second.back();
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
    T v{};
    const char* b = s.data();
    const char* e = s.data() + s.size();
    const auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw ValidationError("config: '" + key + "' has invalid value '" + s + "'");
    return v;
}

template <typename T>
T get(const ConfigMap& cfg, const std::string& key, T def) {
    const std::string* s = last(cfg, key);
    if (!s) return def;
    if constexpr (std::is_same_v<T, std::string>) {
        return *s;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (*s == "1" || *s == "true" || *s == "yes" || *s == "on") return true;
        if (*s == "0" || *s == "false" || *s == "no" || *s == "off") return false;
        throw ValidationError("config: '" + key + "' expects a boolean, got '" + *s + "'");
    } else {
        return parse_number<T>(key, *s);
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void check_keys(const ConfigMap& cfg, const std::set<std::string>& allowed, const char* command) {
    for (const auto& [key, values] : cfg) {
        if (!allowed.count(key)) throw ValidationError(std::string(command) + ": unknown config key '" + key + "'");
    }
}

const std::set<std::string> kSynthKeys = {"config", "seed", "out", "name", "num_sequences", "frames_per_sequence",
                                          "width", "height", "focal", "sequence_separation_deg", "orbit_step_deg",
                                          "orbit_radius", "camera_height", "heldout", "min_hit_fraction"};
const std::set<std::string> kTrainKeys = {"config", "dataset", "out", "epochs", "sequences_per_batch",
                                          "frames_per_sequence", "sparsity", "seed", "disable", "lr", "beta1",
                                          "beta2", "eps", "weight_decay", "clip_norm", "hidden", "embedding_dim",
                                          "fourier_frequencies", "activation", "head_init_scale",
                                          "embedding_init_scale", "threads"};
const std::set<std::string> kEvalKeys = {"config", "checkpoint", "dataset", "split", "weights", "corrupt",
                                         "corrupt_seed", "out"};
const std::set<std::string> kAlignKeys = {"config", "points", "depth", "weights", "mask", "fx", "fy", "cx", "cy"};

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const AlignmentError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::domain_error& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ConfigMap merge_config(ConfigMap base, const ConfigMap& overrides) {
    for (const auto& [key, values] : overrides) base[key] = values;
    return base;
}

SceneConfig scene_config_from(const ConfigMap& cfg) {
    check_keys(cfg, kSynthKeys, "synth");
    SceneLayout layout;
    layout.num_sequences = get<int>(cfg, "num_sequences", layout.num_sequences);
    layout.frames_per_sequence = get<int>(cfg, "frames_per_sequence", layout.frames_per_sequence);
    layout.width = get<int>(cfg, "width", layout.width);
    layout.height = get<int>(cfg, "height", layout.height);
    layout.focal_32 = get<double>(cfg, "focal", layout.focal_32 * layout.width / 32.0) * 32.0 / layout.width;
    layout.sequence_separation_deg = get<double>(cfg, "sequence_separation_deg", layout.sequence_separation_deg);
    layout.orbit_step_deg = get<double>(cfg, "orbit_step_deg", layout.orbit_step_deg);
    layout.orbit_radius = get<double>(cfg, "orbit_radius", layout.orbit_radius);
    layout.camera_height = get<double>(cfg, "camera_height", layout.camera_height);
    if (layout.width <= 0 || layout.height <= 0) throw ValidationError("synth: resolution must be positive");
    SceneConfig sc = default_scene_config(get<std::uint64_t>(cfg, "seed", 7), layout);
    sc.heldout = get<bool>(cfg, "heldout", sc.heldout);
    sc.min_hit_fraction = get<double>(cfg, "min_hit_fraction", sc.min_hit_fraction);
    return sc;
}

TrainConfig train_config_from(const ConfigMap& cfg) {
    check_keys(cfg, kTrainKeys, "train");
    TrainConfig c;
    c.epochs = get<int>(cfg, "epochs", c.epochs);
    c.sequences_per_batch = get<int>(cfg, "sequences_per_batch", c.sequences_per_batch);
    c.frames_per_sequence = get<int>(cfg, "frames_per_sequence", c.frames_per_sequence);
    c.sparsity = get<double>(cfg, "sparsity", c.sparsity);
    c.seed = get<std::uint64_t>(cfg, "seed", c.seed);
    if (const auto it = cfg.find("disable"); it != cfg.end()) {
        for (const std::string& v : it->second) {
            for (const std::string& term : split_list(v)) c.toggles.disable(term);
        }
    }
    c.adam.lr = get<double>(cfg, "lr", c.adam.lr);
    c.adam.beta1 = get<double>(cfg, "beta1", c.adam.beta1);
    c.adam.beta2 = get<double>(cfg, "beta2", c.adam.beta2);
    c.adam.eps = get<double>(cfg, "eps", c.adam.eps);
    c.adam.weight_decay = get<double>(cfg, "weight_decay", c.adam.weight_decay);
    c.clip_norm = get<double>(cfg, "clip_norm", c.clip_norm);
    if (const std::string* h = last(cfg, "hidden")) {
        c.predictor.hidden.clear();
        for (const std::string& w : split_list(*h)) c.predictor.hidden.push_back(parse_number<int>("hidden", w));
    }
    c.predictor.embedding_dim = get<int>(cfg, "embedding_dim", c.predictor.embedding_dim);
    c.predictor.fourier_frequencies = get<int>(cfg, "fourier_frequencies", c.predictor.fourier_frequencies);
    const std::string act = get<std::string>(cfg, "activation", c.predictor.activation == Activation::relu ? "relu" : "tanh");
    if (act != "relu" && act != "tanh") throw ValidationError("train: activation must be relu or tanh");
    c.predictor.activation = act == "relu" ? Activation::relu : Activation::tanh;
    c.predictor.head_init_scale = get<double>(cfg, "head_init_scale", c.predictor.head_init_scale);
    c.predictor.embedding_init_scale = get<double>(cfg, "embedding_init_scale", c.predictor.embedding_init_scale);
    c.threads = get<int>(cfg, "threads", c.threads);
    if (!(c.sparsity > 0.0 && c.sparsity <= 1.0)) throw ValidationError("train: sparsity must lie in (0, 1]");
    if (c.epochs < 0) throw ValidationError("train: epochs must be >= 0");
    if (c.predictor.hidden.empty()) throw ValidationError("train: hidden must list at least one layer width");
    return c;
}

int cmd_synth(const ConfigMap& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const SceneConfig sc = scene_config_from(cfg);
        const fs::path dir = get<std::string>(cfg, "out", "dataset");
        const Dataset ds = generate_scene(sc);
        for (const std::string& w : ds.warnings) err << "warning: " << w << '\n';
        save_dataset(ds, dir, get<std::string>(cfg, "name", "synthetic"));
        std::size_t frames = 0;
        for (const auto& s : ds.sequences) frames += s.size();
        out << "wrote " << frames << " training frames (" << ds.num_sequences() << " sequences x "
            << ds.frames_per_sequence() << ") at " << ds.grid.width << "x" << ds.grid.height << " to " << dir.string()
            << "\nscene diameter " << ds.scene.diameter() << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_train(const ConfigMap& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const TrainConfig tc = train_config_from(cfg);
        const std::string* dataset = last(cfg, "dataset");
        if (!dataset) throw ValidationError("train: --dataset is required");
        const Dataset ds = load_dataset(*dataset);
        for (const std::string& w : ds.warnings) err << "warning: " << w << '\n';
        int empty = 0;
        const TrainingSet set = make_training_set(ds, tc.sparsity, tc.seed, &empty);
        if (empty > 0) err << "warning: " << empty << " frames have no GT pixels after sparsification\n";

        const std::string* outdir = last(cfg, "out");
        std::ofstream metrics_file;
        if (outdir) {
            fs::create_directories(*outdir);
            metrics_file.open(fs::path(*outdir) / "metrics.jsonl", std::ios::trunc);
            if (!metrics_file) throw ValidationError(*outdir + ": cannot write metrics.jsonl");
        }
        std::ostream& metrics = outdir ? static_cast<std::ostream&>(metrics_file) : out;
        const TrainResult r = train(set, tc, [&](const std::string& line) { metrics << line << '\n'; });
        const fs::path ckpt = outdir ? fs::path(*outdir) / "checkpoint.json" : fs::path("checkpoint.json");
        save_checkpoint(ckpt, Checkpoint{tc, r.params, r.adam});
        if (r.diverged) {
            err << "training diverged: " << r.failure << " (last finite checkpoint written to " << ckpt.string()
                << ")\n";
            return static_cast<int>(kExitNumerical);
        }
        err << "trained " << r.steps << " steps; total loss " << r.first.total << " -> " << r.last.total
            << "; checkpoint " << ckpt.string() << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_eval(const ConfigMap& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        check_keys(cfg, kEvalKeys, "eval");
        const std::string* ck = last(cfg, "checkpoint");
        const std::string* dataset = last(cfg, "dataset");
        if (!ck || !dataset) throw ValidationError("eval: --checkpoint and --dataset are required");
        const Checkpoint c = load_checkpoint(*ck);
        const Dataset ds = load_dataset(*dataset);
        const Split split = parse_split(get<std::string>(cfg, "split", "train"));
        EvalOptions opts;
        const std::string mode = get<std::string>(cfg, "weights", "learned");
        if (mode != "learned" && mode != "uniform") throw ValidationError("eval: weights must be learned or uniform");
        opts.mode = mode == "learned" ? WeightMode::learned : WeightMode::uniform;
        opts.corrupt_fraction = get<double>(cfg, "corrupt", 0.0);
        opts.corrupt_seed = get<std::uint64_t>(cfg, "corrupt_seed", 0);
        const Predictor model(c.params);
        const EvalReport r = evaluate_split(model, ds, split, opts);
        out << eval_report_table(r);
        const std::string j = eval_report_json(r);
        if (const std::string* o = last(cfg, "out")) {
            std::ofstream os(*o, std::ios::trunc);
            if (!os) throw ValidationError(*o + ": cannot open for writing");
            os << j << '\n';
        } else {
            out << j << '\n';
        }
        return static_cast<int>(kExitOk);
    });
}

int cmd_align(const ConfigMap& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        check_keys(cfg, kAlignKeys, "align");
        const std::string* pts = last(cfg, "points");
        const std::string* dep = last(cfg, "depth");
        if (!pts || !dep) throw ValidationError("align: --points and --depth are required");
        const Intrinsics k{get<double>(cfg, "fx", 0.0), get<double>(cfg, "fy", 0.0), get<double>(cfg, "cx", 0.0),
                           get<double>(cfg, "cy", 0.0)};
        k.validate();
        const Image<Vec3> x = read_point_file(*pts);
        const Image<double> d = read_depth_file(*dep);
        if (x.width != d.width || x.height != d.height) throw ValidationError("align: point map and depth shapes differ");
        const PixelGrid grid{x.width, x.height};
        std::vector<std::uint8_t> mask(grid.size(), 1);
        if (const std::string* m = last(cfg, "mask")) {
            Image<std::uint8_t> mi = read_mask_file(*m);
            if (mi.width != grid.width || mi.height != grid.height) throw ValidationError("align: mask shape differs");
            mask = std::move(mi.data);
        }
        std::vector<double> wfull(grid.size(), 1.0);
        if (const std::string* w = last(cfg, "weights")) {
            Image<double> wi = read_weight_file(*w);
            if (wi.width != grid.width || wi.height != grid.height) throw ValidationError("align: weight shape differs");
            wfull = std::move(wi.data);
        }
        DepthMap dm(grid.width, grid.height);
        dm.depth = d.data;
        dm.valid = mask;
        const CameraPoints cam = backproject(dm, k, grid);
        CorrespondenceSet c;
        c.camera = cam.points;
        for (std::size_t i : cam.pixels) {
            c.global.push_back(x.data[i]);
            c.weights.push_back(wfull[i]);
        }
        const Pose T = weighted_kabsch(c);
        const Mat3& R = T.rotation.matrix();
        for (int r = 0; r < 3; ++r) {
            out << fmt(R(r, 0)) << ' ' << fmt(R(r, 1)) << ' ' << fmt(R(r, 2)) << ' ' << fmt(T.translation(r)) << '\n';
        }
        out << "correspondences " << c.size() << '\n';
        out << "cost " << fmt(alignment_cost(c, T)) << '\n';
        out << "cost_sq " << fmt(alignment_cost_sq(c, T)) << '\n';
        return static_cast<int>(kExitOk);
    });
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"rigidloc: camera relocalization by weighted rigid alignment"};
    app.require_subcommand(1);
    ConfigMap flags;
    std::string config_file;

    auto opt = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
        sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = {v}; }, help);
    };

    auto* synth = app.add_subcommand("synth", "render a synthetic multi-sequence dataset");
    auto* trainc = app.add_subcommand("train", "train the predictor on a dataset");
    auto* evalc = app.add_subcommand("eval", "localize every frame of a split and report median errors");
    auto* align = app.add_subcommand("align", "weighted rigid alignment of a point map and a depth map");
    for (auto* sub : {synth, trainc, evalc, align}) sub->add_option("--config", config_file, "key=value config file");

    opt(synth, "--seed", "seed", "scene seed");
    opt(synth, "--out", "out", "output directory");
    opt(synth, "--sequences", "num_sequences", "number of sequences");
    opt(synth, "--frames", "frames_per_sequence", "frames per sequence");

    opt(trainc, "--dataset", "dataset", "dataset directory or manifest");
    opt(trainc, "--seed", "seed", "training seed");
    opt(trainc, "--sparsity", "sparsity", "fraction of GT pixels kept");
    opt(trainc, "--epochs", "epochs", "number of epochs");
    opt(trainc, "--out", "out", "output directory for checkpoint.json and metrics.jsonl");
    opt(trainc, "--lr", "lr", "Adam learning rate");
    std::vector<std::string> disabled;
    trainc->add_option("--disable", disabled, "disable a loss term (repeatable): l3d l_depth l_pose l_along l_across");

    opt(evalc, "--checkpoint", "checkpoint", "checkpoint file");
    opt(evalc, "--dataset", "dataset", "dataset directory or manifest");
    opt(evalc, "--split", "split", "train or heldout");
    opt(evalc, "--weights", "weights", "learned or uniform");
    opt(evalc, "--corrupt", "corrupt", "fraction of predicted depths to corrupt");
    opt(evalc, "--out", "out", "write the JSON report here instead of stdout");

    opt(align, "--points", "points", "point-map file");
    opt(align, "--depth", "depth", "depth file");
    opt(align, "--weights", "weights", "weight file (uniform if omitted)");
    opt(align, "--mask", "mask", "mask file (all pixels if omitted)");
    opt(align, "--fx", "fx", "focal length x");
    opt(align, "--fy", "fy", "focal length y");
    opt(align, "--cx", "cx", "principal point x");
    opt(align, "--cy", "cy", "principal point y");

    std::vector<std::string> argv_store = args;
    std::vector<char*> argv;
    for (std::string& s : argv_store) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? static_cast<int>(kExitOk) : static_cast<int>(kExitValidation);
    }
    if (!disabled.empty()) flags["disable"] = disabled;

    ConfigMap file;
    if (!config_file.empty()) {
        try {
            file = read_config_file(config_file);
        } catch (const ValidationError& e) {
            err << "error: " << e.what() << '\n';
            return kExitValidation;
        }
    }
    const ConfigMap merged = merge_config(std::move(file), flags);
    if (synth->parsed()) return cmd_synth(merged, out, err);
    if (trainc->parsed()) return cmd_train(merged, out, err);
    if (evalc->parsed()) return cmd_eval(merged, out, err);
    return cmd_align(merged, out, err);
}

}  // namespace rigidloc
