#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rigidloc/alignment.hpp"
#include "rigidloc/geometry.hpp"

namespace rigidloc {

/// Ground truth for one frame. Entries with valid[i] == 0 are never read by a loss.
struct FrameTarget {
    int width = 0;
    int height = 0;
    std::vector<Vec3> point_map;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;
    Pose pose;

    PixelGrid grid() const { return {width, height}; }
    std::size_t size() const { return point_map.size(); }
    std::size_t count_valid() const;
};

/// Per-pixel network outputs for one frame plus the pose aligned from them.
/// `pose_hat` is empty when the alignment was degenerate or its gradient
/// ill-conditioned; such frames contribute no pose-dependent terms.
struct FramePrediction {
    std::vector<Vec3> point_map;
    std::vector<double> depth;
    std::vector<double> weights;
    std::optional<Pose> pose_hat;
};

/// K sequences × N temporally consecutive frames.
struct SequenceBatch {
    std::vector<std::vector<FrameTarget>> frames;

    int num_sequences() const { return static_cast<int>(frames.size()); }
    int frames_per_sequence() const { return frames.empty() ? 0 : static_cast<int>(frames.front().size()); }
    /// Throws std::invalid_argument when sequences have unequal length.
    void validate() const;
};

using BatchPredictions = std::vector<std::vector<FramePrediction>>;

struct LossToggles {
    bool l3d = true;
    bool l_depth = true;
    bool l_pose = true;
    bool l_along = true;
    bool l_across = true;

    bool any() const { return l3d || l_depth || l_pose || l_along || l_across; }
    static LossToggles all_off() { return {false, false, false, false, false}; }
    /// Accepts l3d, l_depth, l_pose, l_along, l_across. Throws std::invalid_argument otherwise.
    void disable(const std::string& name);
};

struct LossReport {
    double l3d = 0.0;
    double l_depth = 0.0;
    double l_pose = 0.0;
    double l_along = 0.0;
    double l_across = 0.0;
    double total = 0.0;
    int skipped_frames = 0;
    int along_terms = 0;
    int across_terms = 0;
};

/// Mean over valid pixels of ‖x̂_i − x_i‖₂; 0 when the mask is empty.
double l3d(const FramePrediction& pred, const FrameTarget& tgt);
/// Mean over valid pixels of |d̂_i − d_i|; 0 when the mask is empty.
double l_depth(const FramePrediction& pred, const FrameTarget& tgt);
/// translation_error + rotation_angle_error.
double pose_loss(const Pose& T, const Pose& That);
double relpose_loss(const Pose& Ti, const Pose& Tj, const Pose& Tihat, const Pose& Tjhat);

/// ∂ pose_loss / ∂ That, with R̂ treated as a free matrix.
PoseGradient pose_loss_gradient(const Pose& T, const Pose& That);
/// ∂ relpose_loss / ∂ (Tihat, Tjhat).
std::pair<PoseGradient, PoseGradient> relpose_loss_gradient(const Pose& Ti, const Pose& Tj, const Pose& Tihat,
                                                            const Pose& Tjhat);

struct LossTermCount {
    double value = 0.0;
    int terms = 0;
};

/// Σ_k Σ_{i<N} relpose between frames (i, i+1) of sequence k.
LossTermCount along_loss(const SequenceBatch& batch, const BatchPredictions& preds);
/// Σ_i Σ_{k<K} relpose between frame i of sequences k and k+1.
LossTermCount across_loss(const SequenceBatch& batch, const BatchPredictions& preds);

/// Gradient of LossReport.total with respect to every prediction in the batch.
struct FrameLossGradient {
    std::vector<Vec3> point_map;
    std::vector<double> depth;
    PoseGradient pose;
};
using BatchLossGradient = std::vector<std::vector<FrameLossGradient>>;

/// All components with unit weights; toggled-off components are reported as 0.
/// When `grad` is non-null it receives ∂total/∂(predictions).
LossReport total_loss(const SequenceBatch& batch, const BatchPredictions& preds, const LossToggles& toggles = {},
                      BatchLossGradient* grad = nullptr);

}  // namespace rigidloc
