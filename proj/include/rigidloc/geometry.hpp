#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace rigidloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Proper rotation matrix (orthonormal, det = +1).
class Rotation {
public:
    Rotation() : m_(Mat3::Identity()) {}

    static Rotation identity() { return Rotation(); }

    /// Checked construction; throws std::invalid_argument if `m` is not a
    /// rotation within `tol` (elementwise on m·mᵀ − I and on det − 1).
    static Rotation from_matrix(const Mat3& m, double tol = 1e-9);

    /// No validation. For matrices that are rotations by construction
    /// (products of rotations, SVD outputs).
    static Rotation unchecked(const Mat3& m) { return Rotation(m); }

    /// Right-handed rotation of `angle` radians about `axis` (normalized internally).
    static Rotation about_axis(const Vec3& axis, double angle);

    const Mat3& matrix() const { return m_; }
    Rotation transpose() const { return Rotation(m_.transpose()); }
    Vec3 operator*(const Vec3& v) const { return m_ * v; }
    Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }

private:
    explicit Rotation(const Mat3& m) : m_(m) {}
    Mat3 m_;
};

/// Camera-to-world rigid transform: x_world = R·y_cam + t.
struct Pose {
    Rotation rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return Pose{}; }
    Vec3 apply(const Vec3& y) const { return rotation * y + translation; }
    Vec3 apply_inverse(const Vec3& x) const { return rotation.transpose() * (x - translation); }
};

/// Applies `b` then `a`.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& T);
/// inverse(Ti)·Tj: pose of camera j in camera i's frame.
Pose relative_pose(const Pose& Ti, const Pose& Tj);

/// Geodesic angle acos(clamp((tr(R̂·Rᵀ) − 1)/2)) in radians, within [0, π].
double rotation_angle_error(const Rotation& R, const Rotation& Rhat);
double translation_error(const Vec3& t, const Vec3& that);
/// Same angle as rotation_angle_error for proper rotations, computed as
/// atan2(‖skew(R̂·Rᵀ)‖, (tr − 1)/2). Resolves angles far below the ~1e-8 rad
/// floor of the acos form; used where tiny errors must be measured.
double rotation_angle_precise(const Rotation& R, const Rotation& Rhat);

double rad_to_deg(double rad);
double deg_to_rad(double deg);

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    /// Throws std::invalid_argument unless fx, fy are finite and positive.
    void validate() const;
    Mat3 matrix() const;
    /// k⁻¹·u for a homogeneous pixel coordinate u.
    Vec3 unproject(const Vec3& u) const;
};

/// Row-major pixel enumeration with centers at (col + 0.5, row + 0.5).
struct PixelGrid {
    int width = 0;
    int height = 0;

    std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    int col(std::size_t i) const { return static_cast<int>(i % static_cast<std::size_t>(width)); }
    int row(std::size_t i) const { return static_cast<int>(i / static_cast<std::size_t>(width)); }
    std::size_t index(int col, int row) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col);
    }
    /// Homogeneous pixel coordinate u_i = (col + 0.5, row + 0.5, 1).
    Vec3 homogeneous(std::size_t i) const {
        return {col(i) + 0.5, row(i) + 0.5, 1.0};
    }
};

/// Per-pixel depth along the optical axis together with a validity mask.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(int w, int h)
        : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.0),
          valid(static_cast<std::size_t>(w) * h, 0) {}

    PixelGrid grid() const { return {width, height}; }
    std::size_t count_valid() const;
};

/// Back-projected camera-frame points of the valid pixels, with their pixel indices.
struct CameraPoints {
    std::vector<Vec3> points;
    std::vector<std::size_t> pixels;
};

/// y_i = d_i · k⁻¹ · u_i at every valid pixel. Throws std::domain_error naming
/// the pixel when a valid depth is not finite.
CameraPoints backproject(const DepthMap& depth, const Intrinsics& k, const PixelGrid& grid);

/// Projects global points through camera pose T into a z-buffered depth map.
/// Points behind the camera or outside the grid are dropped.
DepthMap project_to_depth(std::span<const Vec3> points, const Pose& T, const Intrinsics& k,
                          const PixelGrid& grid);

}  // namespace rigidloc
