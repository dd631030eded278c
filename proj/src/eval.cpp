#include "rigidloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace rigidloc {

double lower_median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty set");
    const std::size_t mid = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    return values[mid];
}

EvalReport summarize(std::vector<FrameError> frames) {
    EvalReport r;
    std::vector<double> t;
    std::vector<double> rot;
    for (const FrameError& f : frames) {
        if (!f.ok) {
            ++r.failure_count;
            continue;
        }
        t.push_back(f.translation);
        rot.push_back(f.rotation_deg);
    }
    r.frame_count = static_cast<int>(frames.size());
    r.frames = std::move(frames);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.median_translation = t.empty() ? nan : lower_median(t);
    r.median_rotation_deg = rot.empty() ? nan : lower_median(rot);
    return r;
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "heldout") return Split::heldout;
    throw std::invalid_argument("split must be 'train' or 'heldout', got '" + s + "'");
}

EvalReport evaluate_split(const Predictor& model, const Dataset& ds, Split split, const EvalOptions& opts) {
    const std::vector<Vec3> rays = pixel_rays(ds.intrinsics, model.params().grid);
    const auto& frames = split == Split::train ? ds.sequences : ds.heldout;
    std::vector<FrameError> errors;
    std::uint64_t counter = 0;
    for (const auto& seq : frames) {
        for (const RenderedFrame& f : seq) {
            FrameError e;
            e.id = f.id;
            std::vector<double> embedding;
            try {
                embedding = split == Split::train
                                ? model.params().embedding(f.id)
                                : model.params().interpolated_embedding(f.id, FrameId{f.id.sequence, f.id.index + 1}, 0.5);
            } catch (const std::out_of_range& ex) {
                e.failure = std::string("missing frame: ") + ex.what();
                errors.push_back(e);
                continue;
            }
            PredictorOutput out = model.forward(embedding);
            if (opts.corrupt_fraction > 0.0) {
                corrupt_depth(out.depth, opts.corrupt_fraction, opts.corrupt_seed + counter);
            }
            ++counter;
            const AlignmentResult a = align_output(out, rays, opts.mode);
            if (!a.ok()) {
                e.failure = to_string(a.status);
            } else {
                e.ok = true;
                e.translation = translation_error(f.target.pose.translation, a.pose.translation);
                e.rotation_deg = rad_to_deg(rotation_angle_error(f.target.pose.rotation, a.pose.rotation));
            }
            errors.push_back(e);
        }
    }
    return summarize(std::move(errors));
}

std::string eval_report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
    j["median_translation"] = num(r.median_translation);
    j["median_rotation_deg"] = num(r.median_rotation_deg);
    j["frame_count"] = r.frame_count;
    j["failure_count"] = r.failure_count;
    nlohmann::ordered_json frames = nlohmann::ordered_json::array();
    for (const FrameError& f : r.frames) {
        nlohmann::ordered_json e;
        e["sequence"] = f.id.sequence;
        e["index"] = f.id.index;
        e["ok"] = f.ok;
        if (f.ok) {
            e["translation"] = f.translation;
            e["rotation_deg"] = f.rotation_deg;
        } else {
            e["failure"] = f.failure;
        }
        frames.push_back(std::move(e));
    }
    j["frames"] = std::move(frames);
    return j.dump();
}

std::string eval_report_table(const EvalReport& r) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-5s %-5s %14s %14s\n", "seq", "idx", "trans_err", "rot_err_deg");
    os << line;
    for (const FrameError& f : r.frames) {
        if (f.ok) {
            std::snprintf(line, sizeof line, "%-5d %-5d %14.6f %14.6f\n", f.id.sequence, f.id.index, f.translation,
                          f.rotation_deg);
        } else {
            std::snprintf(line, sizeof line, "%-5d %-5d %s\n", f.id.sequence, f.id.index, f.failure.c_str());
        }
        os << line;
    }
    std::snprintf(line, sizeof line, "median translation %.6f  median rotation %.6f deg  (%d frames, %d failed)\n",
                  r.median_translation, r.median_rotation_deg, r.frame_count, r.failure_count);
    os << line;
    return os.str();
}

}  // namespace rigidloc
