#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rigidloc/geometry.hpp"

namespace rigidloc {

/// Owning set of explicit 3D–3D correspondences x_i ↔ y_i with weights w_i.
/// `global` holds the world-frame side, `camera` the camera-frame side.
struct CorrespondenceSet {
    std::vector<Vec3> global;
    std::vector<Vec3> camera;
    std::vector<double> weights;

    std::size_t size() const { return global.size(); }
};

/// Non-owning view; what the solver actually consumes.
struct CorrespondenceView {
    std::span<const Vec3> global;
    std::span<const Vec3> camera;
    std::span<const double> weights;

    CorrespondenceView() = default;
    CorrespondenceView(std::span<const Vec3> x, std::span<const Vec3> y, std::span<const double> w)
        : global(x), camera(y), weights(w) {}
    CorrespondenceView(const CorrespondenceSet& c)  // NOLINT(google-explicit-constructor)
        : global(c.global), camera(c.camera), weights(c.weights) {}

    std::size_t size() const { return global.size(); }
};

struct Svd3 {
    Mat3 U;
    Vec3 S;  // non-increasing, non-negative
    Mat3 V;
};

/// A = U·diag(S)·Vᵀ.
Svd3 svd3(const Mat3& A);

enum class AlignmentStatus {
    ok,
    no_effective_correspondences,
    degenerate_configuration,
    ill_conditioned_gradient,
};

const char* to_string(AlignmentStatus s);

class AlignmentError : public std::runtime_error {
public:
    explicit AlignmentError(AlignmentStatus status)
        : std::runtime_error(to_string(status)), status_(status) {}
    AlignmentStatus status() const { return status_; }

private:
    AlignmentStatus status_;
};

struct AlignmentInternals {
    Vec3 mu_x = Vec3::Zero();
    Vec3 mu_y = Vec3::Zero();
    Mat3 H = Mat3::Zero();  // Ȳᵀ·W·X̄
    Svd3 svd{Mat3::Identity(), Vec3::Zero(), Mat3::Identity()};
    double sign = 1.0;  // det(V·Uᵀ)
    double weight_sum = 0.0;
};

struct AlignmentResult {
    AlignmentStatus status = AlignmentStatus::ok;
    Pose pose;
    AlignmentInternals internals;

    bool ok() const { return status == AlignmentStatus::ok; }
};

/// Guard on Σw before dividing by it.
inline constexpr double kMinWeightSum = 1e-12;
/// Rank-2 test: S₁ must exceed this fraction of S₀.
inline constexpr double kDegenerateRatio = 1e-10;
/// Minimum singular-value gap, relative to S₀, for a valid gradient.
inline constexpr double kGradientGapRatio = 1e-8;

/// Non-throwing solve. Throws std::invalid_argument only for malformed input
/// (length mismatch, negative or non-finite weights, non-finite points).
AlignmentResult solve_weighted_alignment(const CorrespondenceView& c);

/// Closed-form minimizer of Σ w_i‖x_i − R·y_i − t‖². Throws AlignmentError.
Pose weighted_kabsch(const CorrespondenceView& c);

/// weighted_kabsch with unit weights.
Pose kabsch(std::span<const Vec3> global, std::span<const Vec3> camera);

/// Σ w_i‖x_i − R·y_i − t‖₂ (non-squared, for reporting).
double alignment_cost(const CorrespondenceView& c, const Pose& T);
/// Σ w_i‖x_i − R·y_i − t‖₂², the quantity the solver minimizes.
double alignment_cost_sq(const CorrespondenceView& c, const Pose& T);

/// Gradient of a scalar loss with respect to a pose (R as a free 3×3 matrix).
struct PoseGradient {
    Mat3 rotation = Mat3::Zero();
    Vec3 translation = Vec3::Zero();

    PoseGradient& operator+=(const PoseGradient& o) {
        rotation += o.rotation;
        translation += o.translation;
        return *this;
    }
    bool is_zero() const { return rotation.isZero(0.0) && translation.isZero(0.0); }
};

struct CorrespondenceGradient {
    std::vector<Vec3> global;
    std::vector<Vec3> camera;
    std::vector<double> weights;
};

/// True when all pairwise singular-value gaps exceed kGradientGapRatio·S₀.
bool gradient_well_conditioned(const AlignmentInternals& a);

/// Back-propagates `upstream` (∂L/∂R, ∂L/∂t) through the solver to the inputs.
/// `solved` must be the successful result of solve_weighted_alignment(c).
/// Throws AlignmentError(ill_conditioned_gradient) when singular values are
/// too close to differentiate through.
CorrespondenceGradient kabsch_gradient(const CorrespondenceView& c, const AlignmentResult& solved,
                                       const PoseGradient& upstream);
/// Solves then back-propagates.
CorrespondenceGradient kabsch_gradient(const CorrespondenceView& c, const PoseGradient& upstream);

/// Central differences (f(p + h·e_i) − f(p − h·e_i)) / 2h. Throws std::domain_error
/// if any evaluation is non-finite.
std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> p, double h);

}  // namespace rigidloc
