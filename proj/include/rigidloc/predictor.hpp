#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rigidloc/geometry.hpp"
#include "rigidloc/losses.hpp"
#include "rigidloc/scene.hpp"

namespace rigidloc {

/// Named slice of a flat parameter vector; matrices are column-major.
struct ParamBlock {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct ParamLayout {
    std::vector<ParamBlock> blocks;

    std::size_t total() const { return blocks.empty() ? 0 : blocks.back().offset + blocks.back().size(); }
    const ParamBlock& find(const std::string& name) const;
    /// Block containing flat index `i`.
    const ParamBlock& block_of(std::size_t i) const;
};

enum class Activation { relu, tanh };

struct PredictorConfig {
    int fourier_frequencies = 6;
    int embedding_dim = 16;
    std::vector<int> hidden = {64, 64};
    Activation activation = Activation::tanh;
    /// Std-dev of the output layer at init; 0 gives the dataset-mean start.
    double head_init_scale = 0.0;
    double embedding_init_scale = 0.5;
};

/// The predictor outputs are de-normalized as
///   x̂ = mean_point + point_scale·out[0:3], d̂ = mean_depth + depth_scale·out[3], w = σ(out[4]).
struct OutputNormalization {
    Vec3 mean_point = Vec3::Zero();
    double point_scale = 1.0;
    double mean_depth = 0.0;
    double depth_scale = 1.0;
};

/// Mean / std-dev statistics over the valid pixels of the given targets.
OutputNormalization normalization_from(std::span<const FrameTarget* const> targets);

struct PredictorParams {
    PredictorConfig config;
    PixelGrid grid;
    OutputNormalization norm;
    /// Embedding column order.
    std::vector<FrameId> frames;
    ParamLayout layout;
    std::vector<double> values;

    int embedding_column(const FrameId& id) const;  // throws std::out_of_range
    std::vector<double> embedding(const FrameId& id) const;
    /// (1 − t)·e(a) + t·e(b).
    std::vector<double> interpolated_embedding(const FrameId& a, const FrameId& b, double t) const;
};

PredictorParams init_predictor(const PredictorConfig& cfg, const PixelGrid& grid, std::vector<FrameId> frames,
                               const OutputNormalization& norm, std::uint64_t seed);

/// Per-pixel network outputs (row-major pixels).
struct PredictorOutput {
    std::vector<Vec3> point_map;
    std::vector<double> depth;
    std::vector<double> weights;
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> pre;
    std::vector<Eigen::MatrixXd> post;
    Eigen::MatrixXd out;
};

/// Gradients of a scalar loss with respect to the de-normalized outputs.
struct OutputGradient {
    std::span<const Vec3> point_map;
    std::span<const double> depth;
    std::span<const double> weights;
};

/// MLP over Fourier features of normalized pixel coordinates concatenated with
/// a per-frame embedding. Immutable once built; forward/backward are const.
class Predictor {
public:
    explicit Predictor(PredictorParams params);

    const PredictorParams& params() const { return params_; }
    std::span<const double> values() const { return params_.values; }
    void set_values(std::span<const double> v);

    PredictorOutput forward(std::span<const double> embedding, ForwardCache* cache = nullptr) const;

    /// Accumulates ∂L/∂params into `grad` (flat, same layout). The embedding
    /// gradient lands in column `embedding_column`; pass -1 to drop it.
    void backward(std::span<const double> embedding, int embedding_column, const ForwardCache& cache,
                  const OutputGradient& dout, std::span<double> grad) const;

    const Eigen::MatrixXd& features() const { return features_; }

private:
    PredictorParams params_;
    Eigen::MatrixXd features_;  // feature_dim × pixels
};

int feature_dim(int fourier_frequencies);
/// [a, b, sin(2^l π a), cos(2^l π a), sin(2^l π b), cos(2^l π b)]_l with a, b in (−1, 1).
Eigen::MatrixXd pixel_features(const PixelGrid& grid, int fourier_frequencies);

}  // namespace rigidloc
