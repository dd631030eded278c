#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Geometry>

#include "rigidloc/geometry.hpp"
#include "rigidloc/rng.hpp"

namespace testing {

using rigidloc::CounterRng;
using rigidloc::Mat3;
using rigidloc::Pose;
using rigidloc::Rotation;
using rigidloc::Vec3;

inline Vec3 random_vec(CounterRng& rng, double scale = 1.0) {
    return {scale * rng.normal(), scale * rng.normal(), scale * rng.normal()};
}

// Uniform over SO(3) via a normalized Gaussian quaternion.
inline Rotation random_rotation(CounterRng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return Rotation::unchecked(q.toRotationMatrix());
}

inline Pose random_pose(CounterRng& rng, double tscale = 2.0) {
    return Pose{random_rotation(rng), random_vec(rng, tscale)};
}

inline Rotation rot_z(double angle) { return Rotation::about_axis(Vec3::UnitZ(), angle); }

inline double max_abs_diff(const Mat3& a, const Mat3& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline double pose_diff(const Pose& a, const Pose& b) {
    return std::max(max_abs_diff(a.rotation.matrix(), b.rotation.matrix()),
                    (a.translation - b.translation).cwiseAbs().maxCoeff());
}

inline Eigen::Matrix4d homogeneous(const Pose& T) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = T.rotation.matrix();
    m.topRightCorner<3, 1>() = T.translation;
    return m;
}

inline double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& ref) {
    double num = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - ref[i]) * (a[i] - ref[i]);
    return std::sqrt(num) / std::max(norm(ref), 1e-300);
}

}  // namespace testing
