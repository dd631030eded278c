#include "rigidloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "rigidloc/eval.hpp"
#include "rigidloc/rng.hpp"

namespace rigidloc {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must write
// only its own output slot so results do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
}

std::uint64_t frame_seed(std::uint64_t seed, const FrameId& id) {
    return CounterRng(seed).split(static_cast<std::uint64_t>(id.sequence)).split(static_cast<std::uint64_t>(id.index)).next_u64();
}

}  // namespace

int resolve_threads(int requested) {
    int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("RIGIDLOC_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return std::max(1, n);
}

std::vector<FrameId> TrainingSet::frame_ids() const {
    std::vector<FrameId> ids;
    for (int k = 0; k < num_sequences(); ++k) {
        for (int n = 0; n < static_cast<int>(sequences[k].size()); ++n) ids.push_back(FrameId{k, n});
    }
    return ids;
}

TrainingSet make_training_set(const Dataset& ds, double sparsity, std::uint64_t seed, int* empty_frames) {
    TrainingSet set;
    set.intrinsics = ds.intrinsics;
    set.grid = ds.grid;
    set.scene_diameter = ds.scene.diameter();
    int empty = 0;
    for (const auto& seq : ds.sequences) {
        std::vector<FrameTarget> targets;
        for (const RenderedFrame& f : seq) {
            if (sparsity >= 1.0) {
                targets.push_back(f.target);
                continue;
            }
            SparsifyResult s = sparsify(f.target, sparsity, frame_seed(seed, f.id));
            if (s.empty) ++empty;
            targets.push_back(std::move(s.target));
        }
        set.sequences.push_back(std::move(targets));
    }
    if (empty_frames) *empty_frames = empty;
    return set;
}

BatchIds sample_batch(const TrainingSet& set, int sequences, int frames, std::uint64_t seed, std::int64_t step) {
    if (sequences < 1 || sequences > set.num_sequences()) {
        throw std::invalid_argument("batch: requested " + std::to_string(sequences) + " sequences but the set has " +
                                    std::to_string(set.num_sequences()));
    }
    CounterRng rng = CounterRng(seed).split(0x6261746368ULL).split(static_cast<std::uint64_t>(step));
    std::vector<int> order(static_cast<std::size_t>(set.num_sequences()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < static_cast<std::size_t>(sequences); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(order.size() - i));
        std::swap(order[i], order[j]);
    }
    BatchIds ids;
    for (int s = 0; s < sequences; ++s) {
        const int k = order[static_cast<std::size_t>(s)];
        const int len = static_cast<int>(set.sequences[k].size());
        if (frames < 1 || frames > len) {
            throw std::invalid_argument("batch: sequence " + std::to_string(k) + " has " + std::to_string(len) +
                                        " frames, fewer than the requested " + std::to_string(frames));
        }
        const int start = static_cast<int>(rng.index(static_cast<std::uint64_t>(len - frames + 1)));
        std::vector<FrameId> seq;
        for (int n = 0; n < frames; ++n) seq.push_back(FrameId{k, start + n});
        ids.push_back(std::move(seq));
    }
    return ids;
}

std::vector<Vec3> pixel_rays(const Intrinsics& k, const PixelGrid& grid) {
    std::vector<Vec3> rays(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) rays[i] = k.unproject(grid.homogeneous(i));
    return rays;
}

AlignmentResult align_output(const PredictorOutput& out, const std::vector<Vec3>& rays, WeightMode mode) {
    std::vector<Vec3> cam(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) cam[i] = out.depth[i] * rays[i];
    if (mode == WeightMode::learned) return solve_weighted_alignment(CorrespondenceView(out.point_map, cam, out.weights));
    const std::vector<double> ones(rays.size(), 1.0);
    return solve_weighted_alignment(CorrespondenceView(out.point_map, cam, ones));
}

FrameForward predict_frame(const Predictor& model, std::span<const double> embedding, const std::vector<Vec3>& rays,
                           bool require_gradient) {
    FrameForward f;
    PredictorOutput out = model.forward(embedding, &f.cache);
    f.camera_points.resize(rays.size());
    for (std::size_t i = 0; i < rays.size(); ++i) f.camera_points[i] = out.depth[i] * rays[i];
    f.alignment = solve_weighted_alignment(CorrespondenceView(out.point_map, f.camera_points, out.weights));
    if (f.alignment.ok() && require_gradient && !gradient_well_conditioned(f.alignment.internals)) {
        f.alignment.status = AlignmentStatus::ill_conditioned_gradient;
    }
    f.prediction.point_map = std::move(out.point_map);
    f.prediction.depth = std::move(out.depth);
    f.prediction.weights = std::move(out.weights);
    if (f.alignment.ok()) f.prediction.pose_hat = f.alignment.pose;
    return f;
}

FramePrediction predict_frame(const Predictor& model, const FrameId& id, const Intrinsics& k) {
    const std::vector<Vec3> rays = pixel_rays(k, model.params().grid);
    return predict_frame(model, model.params().embedding(id), rays).prediction;
}

AlignmentResult localize(const Predictor& model, std::span<const double> embedding, const Intrinsics& k,
                         WeightMode mode) {
    return align_output(model.forward(embedding), pixel_rays(k, model.params().grid), mode);
}

BatchEvaluation evaluate_batch(const Predictor& model, const TrainingSet& set, const BatchIds& ids,
                               const LossToggles& toggles, bool with_gradient, int threads) {
    const std::vector<Vec3> rays = pixel_rays(set.intrinsics, set.grid);
    SequenceBatch batch;
    std::vector<FrameId> flat;
    for (const auto& seq : ids) {
        std::vector<FrameTarget> targets;
        for (const FrameId& id : seq) {
            targets.push_back(set.target(id));
            flat.push_back(id);
        }
        batch.frames.push_back(std::move(targets));
    }
    batch.validate();
    const std::size_t per_seq = ids.empty() ? 0 : ids.front().size();

    std::vector<std::vector<double>> embeddings(flat.size());
    std::vector<FrameForward> fwd(flat.size());
    parallel_for(flat.size(), threads, [&](std::size_t f) {
        embeddings[f] = model.params().embedding(flat[f]);
        fwd[f] = predict_frame(model, embeddings[f], rays, true);
    });

    BatchEvaluation ev;
    ev.predictions.resize(ids.size());
    for (std::size_t f = 0; f < flat.size(); ++f) {
        if (fwd[f].alignment.status == AlignmentStatus::ill_conditioned_gradient) ++ev.ill_conditioned;
        ev.predictions[f / per_seq].push_back(fwd[f].prediction);
    }

    BatchLossGradient lg;
    ev.report = total_loss(batch, ev.predictions, toggles, with_gradient ? &lg : nullptr);
    if (!with_gradient) return ev;

    const std::size_t nparams = model.values().size();
    std::vector<std::vector<double>> frame_grads(flat.size());
    parallel_for(flat.size(), threads, [&](std::size_t f) {
        FrameLossGradient& g = lg[f / per_seq][f % per_seq];
        const FrameForward& ff = fwd[f];
        std::vector<double> dw(rays.size(), 0.0);
        if (ff.prediction.pose_hat && !g.pose.is_zero()) {
            const CorrespondenceView view(ff.prediction.point_map, ff.camera_points, ff.prediction.weights);
            const CorrespondenceGradient kg = kabsch_gradient(view, ff.alignment, g.pose);
            for (std::size_t i = 0; i < rays.size(); ++i) {
                g.point_map[i] += kg.global[i];
                g.depth[i] += kg.camera[i].dot(rays[i]);
                dw[i] = kg.weights[i];
            }
        }
        frame_grads[f].assign(nparams, 0.0);
        model.backward(embeddings[f], model.params().embedding_column(flat[f]), ff.cache,
                       OutputGradient{g.point_map, g.depth, dw}, frame_grads[f]);
    });

    ev.gradient.assign(nparams, 0.0);
    for (const auto& fg : frame_grads) {
        for (std::size_t i = 0; i < nparams; ++i) ev.gradient[i] += fg[i];
    }
    return ev;
}

PredictorParams initial_params(const TrainingSet& set, const TrainConfig& cfg) {
    std::vector<const FrameTarget*> targets;
    for (const auto& seq : set.sequences) {
        for (const FrameTarget& t : seq) targets.push_back(&t);
    }
    return init_predictor(cfg.predictor, set.grid, set.frame_ids(), normalization_from(targets), cfg.seed);
}

TrainResult train(const TrainingSet& set, const TrainConfig& cfg, const MetricsSink& sink) {
    PredictorParams p = initial_params(set, cfg);
    AdamState s = AdamState::zeros(p.values.size());
    return train(set, cfg, std::move(p), std::move(s), sink);
}

namespace {

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string step_record(std::int64_t step, const LossReport& r, double grad_norm, bool clipped) {
    nlohmann::ordered_json j;
    j["type"] = "step";
    j["step"] = step;
    j["l3d"] = r.l3d;
    j["l_depth"] = r.l_depth;
    j["l_pose"] = r.l_pose;
    j["l_along"] = r.l_along;
    j["l_across"] = r.l_across;
    j["total"] = r.total;
    j["skipped_frames"] = r.skipped_frames;
    j["grad_norm"] = grad_norm;
    j["clipped"] = clipped;
    return j.dump();
}

std::string eval_record(int epoch, const TrainingSet& set, const BatchIds& ids, const BatchPredictions& preds) {
    std::vector<FrameError> errors;
    std::vector<int> hist(10, 0);
    for (std::size_t k = 0; k < ids.size(); ++k) {
        for (std::size_t n = 0; n < ids[k].size(); ++n) {
            const FramePrediction& p = preds[k][n];
            FrameError e;
            e.id = ids[k][n];
            if (p.pose_hat) {
                const Pose& gt = set.target(e.id).pose;
                e.ok = true;
                e.translation = translation_error(gt.translation, p.pose_hat->translation);
                e.rotation_deg = rad_to_deg(rotation_angle_error(gt.rotation, p.pose_hat->rotation));
            } else {
                e.failure = "alignment failed";
            }
            errors.push_back(e);
            for (double w : p.weights) ++hist[static_cast<std::size_t>(std::clamp(static_cast<int>(w * 10.0), 0, 9))];
        }
    }
    const EvalReport r = summarize(std::move(errors));
    nlohmann::ordered_json j;
    j["type"] = "eval";
    j["epoch"] = epoch;
    j["median_translation"] = r.failure_count == r.frame_count ? nlohmann::ordered_json(nullptr)
                                                               : nlohmann::ordered_json(r.median_translation);
    j["median_rotation_deg"] = r.failure_count == r.frame_count ? nlohmann::ordered_json(nullptr)
                                                                : nlohmann::ordered_json(r.median_rotation_deg);
    j["frames"] = r.frame_count;
    j["failures"] = r.failure_count;
    j["weight_hist"] = hist;
    return j.dump();
}

}  // namespace

TrainResult train(const TrainingSet& set, const TrainConfig& cfg, PredictorParams params, AdamState adam,
                  const MetricsSink& sink) {
    if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (adam.m.size() != params.values.size()) throw std::invalid_argument("train: optimizer state does not match parameters");
    const int threads = resolve_threads(cfg.threads);
    if (cfg.sequences_per_batch < 2 && cfg.toggles.l_across && sink) {
        sink(R"({"type":"warning","message":"across-sequence constraints need at least 2 sequences per batch"})");
    }

    std::size_t total_frames = 0;
    for (const auto& seq : set.sequences) total_frames += seq.size();
    const std::size_t batch_frames = static_cast<std::size_t>(cfg.sequences_per_batch) * cfg.frames_per_sequence;
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>(std::max<std::size_t>(1, (total_frames + batch_frames - 1) / batch_frames));

    Predictor model(std::move(params));
    TrainResult result;
    std::vector<double> values(model.values().begin(), model.values().end());
    const bool active = cfg.toggles.any();

    for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        BatchIds ids;
        BatchEvaluation ev;
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            const std::int64_t step = adam.step + 1;
            ids = sample_batch(set, cfg.sequences_per_batch, cfg.frames_per_sequence, cfg.seed, step);
            try {
                ev = evaluate_batch(model, set, ids, cfg.toggles, active, threads);
            } catch (const std::invalid_argument& e) {
                // Non-finite network outputs are rejected by the solver.
                result.diverged = true;
                result.failure = "non-finite predictions at step " + std::to_string(step) + ": " + e.what();
                break;
            }
            if (!std::isfinite(ev.report.total) || !all_finite(ev.gradient)) {
                result.diverged = true;
                result.failure = "non-finite loss or gradient at step " + std::to_string(step);
                break;
            }
            if (result.steps == 0) result.first = ev.report;
            result.last = ev.report;

            double norm = 0.0;
            for (double g : ev.gradient) norm += g * g;
            norm = std::sqrt(norm);
            const bool clipped = norm > cfg.clip_norm;
            if (clipped) {
                const double scale = cfg.clip_norm / norm;
                for (double& g : ev.gradient) g *= scale;
                ++result.clipped_steps;
            }
            if (active) {
                adam_step(values, ev.gradient, adam, cfg.adam, &model.params().layout);
                if (!all_finite(values)) {
                    result.diverged = true;
                    result.failure = "non-finite parameters after step " + std::to_string(step);
                    break;
                }
                model.set_values(values);
            } else {
                ++adam.step;
            }
            ++result.steps;
            if (sink) sink(step_record(step, ev.report, norm, clipped));
        }
        if (!result.diverged && sink) sink(eval_record(epoch, set, ids, ev.predictions));
    }
    result.params = model.params();
    result.adam = std::move(adam);
    return result;
}

void corrupt_depth(std::vector<double>& depth, double fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(depth.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(depth.size())));
    CounterRng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
        std::swap(idx[i], idx[j]);
        depth[idx[i]] *= rng.uniform(2.0, 4.0);
    }
}

}  // namespace rigidloc
