#include "rigidloc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace rigidloc {

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
    if (!m.allFinite()) {
        throw std::invalid_argument("rotation matrix has non-finite entries");
    }
    const Mat3 gram = m * m.transpose() - Mat3::Identity();
    if (gram.cwiseAbs().maxCoeff() > tol) {
        throw std::invalid_argument("rotation matrix is not orthonormal");
    }
    if (std::abs(m.determinant() - 1.0) > tol) {
        throw std::invalid_argument("rotation matrix determinant is not +1");
    }
    return Rotation(m);
}

Rotation Rotation::about_axis(const Vec3& axis, double angle) {
    return Rotation(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
}

Pose compose(const Pose& a, const Pose& b) {
    return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose inverse(const Pose& T) {
    const Rotation rt = T.rotation.transpose();
    return Pose{rt, -(rt * T.translation)};
}

Pose relative_pose(const Pose& Ti, const Pose& Tj) {
    return compose(inverse(Ti), Tj);
}

double rotation_angle_error(const Rotation& R, const Rotation& Rhat) {
    const double c = 0.5 * ((Rhat.matrix() * R.matrix().transpose()).trace() - 1.0);
    return std::acos(std::clamp(c, -1.0, 1.0));
}

double rotation_angle_precise(const Rotation& R, const Rotation& Rhat) {
    const Mat3 M = Rhat.matrix() * R.matrix().transpose();
    const Vec3 skew(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
    return std::atan2(0.5 * skew.norm(), 0.5 * (M.trace() - 1.0));
}

double translation_error(const Vec3& t, const Vec3& that) {
    return (t - that).norm();
}

double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }
double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

void Intrinsics::validate() const {
    if (!(std::isfinite(fx) && fx > 0.0 && std::isfinite(fy) && fy > 0.0)) {
        throw std::invalid_argument("intrinsics: focal lengths must be finite and positive");
    }
    if (!(std::isfinite(cx) && std::isfinite(cy))) {
        throw std::invalid_argument("intrinsics: principal point must be finite");
    }
}

Mat3 Intrinsics::matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

Vec3 Intrinsics::unproject(const Vec3& u) const {
    // Closed-form inverse of the upper-triangular k.
    return {(u.x() - cx * u.z()) / fx, (u.y() - cy * u.z()) / fy, u.z()};
}

std::size_t DepthMap::count_valid() const {
    return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }));
}

CameraPoints backproject(const DepthMap& depth, const Intrinsics& k, const PixelGrid& grid) {
    if (depth.width != grid.width || depth.height != grid.height || depth.depth.size() != grid.size() ||
        depth.valid.size() != grid.size()) {
        throw std::invalid_argument("backproject: depth map dimensions do not match the pixel grid");
    }
    CameraPoints out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!depth.valid[i]) continue;
        const double d = depth.depth[i];
        if (!std::isfinite(d)) {
            throw std::domain_error("backproject: non-finite depth at pixel (col " + std::to_string(grid.col(i)) +
                                    ", row " + std::to_string(grid.row(i)) + ")");
        }
        out.points.push_back(d * k.unproject(grid.homogeneous(i)));
        out.pixels.push_back(i);
    }
    return out;
}

DepthMap project_to_depth(std::span<const Vec3> points, const Pose& T, const Intrinsics& k,
                          const PixelGrid& grid) {
    DepthMap out(grid.width, grid.height);
    for (const Vec3& x : points) {
        const Vec3 y = T.apply_inverse(x);
        if (!(y.z() > 0.0) || !y.allFinite()) continue;
        const double u = k.fx * y.x() / y.z() + k.cx;
        const double v = k.fy * y.y() / y.z() + k.cy;
        // Pixel (c, r) covers [c, c+1) × [r, r+1); its center is the nearest one.
        const double cu = std::floor(u);
        const double cv = std::floor(v);
        if (cu < 0.0 || cv < 0.0 || cu >= grid.width || cv >= grid.height) continue;
        const std::size_t i = grid.index(static_cast<int>(cu), static_cast<int>(cv));
        if (!out.valid[i] || y.z() < out.depth[i]) {
            out.depth[i] = y.z();
            out.valid[i] = 1;
        }
    }
    return out;
}

}  // namespace rigidloc
