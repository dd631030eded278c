#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rigidloc/adam.hpp"
#include "rigidloc/alignment.hpp"
#include "rigidloc/losses.hpp"
#include "rigidloc/predictor.hpp"
#include "rigidloc/scene.hpp"

namespace rigidloc {

struct TrainConfig {
    int epochs = 1500;
    int sequences_per_batch = 2;
    int frames_per_sequence = 8;
    /// Fraction of valid GT pixels kept per frame, in (0, 1].
    double sparsity = 1.0;
    LossToggles toggles;
    std::uint64_t seed = 1;
    AdamConfig adam;
    PredictorConfig predictor;
    double clip_norm = 10.0;
    /// 0: RIGIDLOC_THREADS or the hardware concurrency.
    int threads = 0;
};

/// Sparsified training targets, grouped by sequence.
struct TrainingSet {
    Intrinsics intrinsics;
    PixelGrid grid;
    std::vector<std::vector<FrameTarget>> sequences;
    double scene_diameter = 0.0;

    int num_sequences() const { return static_cast<int>(sequences.size()); }
    std::vector<FrameId> frame_ids() const;
    const FrameTarget& target(const FrameId& id) const { return sequences.at(id.sequence).at(id.index); }
};

/// Applies sparsify() to every training frame with a per-frame seed derived
/// from `seed`. `empty_frames`, when given, receives the number of frames
/// left without any GT pixel.
TrainingSet make_training_set(const Dataset& ds, double sparsity, std::uint64_t seed, int* empty_frames = nullptr);

using BatchIds = std::vector<std::vector<FrameId>>;

/// Random distinct sequences, each with a random window of consecutive frames.
BatchIds sample_batch(const TrainingSet& set, int sequences, int frames, std::uint64_t seed, std::int64_t step);

/// Unit-z camera rays k⁻¹·u_i for every pixel.
std::vector<Vec3> pixel_rays(const Intrinsics& k, const PixelGrid& grid);

enum class WeightMode { learned, uniform };

/// One forward pass plus a weighted alignment over all pixels. The pose is
/// absent (and `alignment.status` says why) when the solve is degenerate, or,
/// with `require_gradient`, when the SVD gradient would be ill-conditioned.
struct FrameForward {
    FramePrediction prediction;
    AlignmentResult alignment;
    std::vector<Vec3> camera_points;
    ForwardCache cache;
};

FrameForward predict_frame(const Predictor& model, std::span<const double> embedding, const std::vector<Vec3>& rays,
                           bool require_gradient = false);
FramePrediction predict_frame(const Predictor& model, const FrameId& id, const Intrinsics& k);

/// Aligns the predicted global map to the back-projected predicted depth.
AlignmentResult align_output(const PredictorOutput& out, const std::vector<Vec3>& rays, WeightMode mode);

/// Single forward pass and one alignment; no refinement.
AlignmentResult localize(const Predictor& model, std::span<const double> embedding, const Intrinsics& k,
                         WeightMode mode = WeightMode::learned);

struct BatchEvaluation {
    LossReport report;
    std::vector<double> gradient;  // empty unless requested
    BatchPredictions predictions;
    int ill_conditioned = 0;
};

/// total_loss over the batch and, optionally, its gradient with respect to
/// every predictor parameter (MLP backprop chained through kabsch_gradient).
BatchEvaluation evaluate_batch(const Predictor& model, const TrainingSet& set, const BatchIds& ids,
                               const LossToggles& toggles, bool with_gradient, int threads = 1);

struct TrainResult {
    PredictorParams params;
    AdamState adam;
    std::int64_t steps = 0;
    bool diverged = false;
    std::string failure;
    LossReport first;
    LossReport last;
    int clipped_steps = 0;
};

using MetricsSink = std::function<void(const std::string& json_line)>;

/// Builds a fresh predictor for `set` (output normalization from the available GT).
PredictorParams initial_params(const TrainingSet& set, const TrainConfig& cfg);

/// Adam training loop. One epoch is ceil(frames / batch frames) steps. Emits a
/// step record per iteration and an eval record per epoch. On a non-finite
/// loss, stops and returns the last finite parameters with diverged = true.
TrainResult train(const TrainingSet& set, const TrainConfig& cfg, const MetricsSink& sink = {});
/// Continues from `params`/`adam` (used for resuming and by tests).
TrainResult train(const TrainingSet& set, const TrainConfig& cfg, PredictorParams params, AdamState adam,
                  const MetricsSink& sink = {});

int resolve_threads(int requested);

/// Replaces the depth of round(fraction·pixels) random pixels with values
/// scaled by a random factor in [2, 4] (outlier injection for ablations).
void corrupt_depth(std::vector<double>& depth, double fraction, std::uint64_t seed);

}  // namespace rigidloc
