#include "rigidloc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Geometry>

#include "rigidloc/rng.hpp"

namespace rigidloc {

namespace {

constexpr double kRayEpsilon = 1e-9;

std::optional<double> intersect_plane(const Plane& p, const Vec3& o, const Vec3& d) {
    const double denom = p.normal.dot(d);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double s = p.normal.dot(p.center - o) / denom;
    if (!(s > kRayEpsilon)) return std::nullopt;
    if ((o + s * d - p.center).norm() > p.radius) return std::nullopt;
    return s;
}

std::optional<double> intersect_sphere(const Sphere& sp, const Vec3& o, const Vec3& d) {
    const Vec3 oc = o - sp.center;
    const double a = d.squaredNorm();
    const double b = oc.dot(d);
    const double c = oc.squaredNorm() - sp.radius * sp.radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double root = std::sqrt(disc);
    double s = (-b - root) / a;
    if (!(s > kRayEpsilon)) s = (-b + root) / a;
    if (!(s > kRayEpsilon)) return std::nullopt;
    return s;
}

void extend_bounds(const Primitive& prim, Vec3& lo, Vec3& hi) {
    if (const auto* p = std::get_if<Plane>(&prim)) {
        const Vec3 n = p->normal.normalized();
        for (int a = 0; a < 3; ++a) {
            const double e = p->radius * std::sqrt(std::max(0.0, 1.0 - n(a) * n(a)));
            lo(a) = std::min(lo(a), p->center(a) - e);
            hi(a) = std::max(hi(a), p->center(a) + e);
        }
    } else {
        const auto& s = std::get<Sphere>(prim);
        lo = lo.cwiseMin(s.center - Vec3::Constant(s.radius));
        hi = hi.cwiseMax(s.center + Vec3::Constant(s.radius));
    }
}

}  // namespace

Pose Trajectory::at(double n) const {
    const Rotation orbit = Rotation::about_axis(Vec3::UnitZ(), n * rotation_step);
    return Pose{orbit * start.rotation, orbit * start.translation + n * translation_step};
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(up).normalized();
    const Vec3 y = z.cross(x);
    Mat3 R;
    R.col(0) = x;
    R.col(1) = y;
    R.col(2) = z;
    return Pose{Rotation::unchecked(R), eye};
}

SceneConfig default_scene_config(std::uint64_t seed, const SceneLayout& layout) {
    SceneConfig cfg;
    cfg.seed = seed;
    cfg.num_sequences = layout.num_sequences;
    cfg.frames_per_sequence = layout.frames_per_sequence;
    cfg.width = layout.width;
    cfg.height = layout.height;
    cfg.primitives.push_back(Plane{Vec3::Zero(), Vec3::UnitZ(), 5.0});

    CounterRng rng = CounterRng(seed).split(1);
    constexpr int kSpheres = 5;
    for (int i = 0; i < kSpheres; ++i) {
        const double radius = rng.uniform(0.35, 0.8);
        const double angle = 2.0 * std::numbers::pi * (i + rng.uniform(0.0, 0.6)) / kSpheres;
        const double dist = rng.uniform(0.6, 2.2);
        cfg.primitives.push_back(Sphere{Vec3(dist * std::cos(angle), dist * std::sin(angle), radius), radius});
    }

    const double f = layout.focal_32 * cfg.width / 32.0;
    cfg.intrinsics = Intrinsics{f, f, cfg.width / 2.0, cfg.height / 2.0};
    const double sep = deg_to_rad(layout.sequence_separation_deg);
    for (int k = 0; k < cfg.num_sequences; ++k) {
        const double az = 0.3 + k * sep;
        const Vec3 eye(layout.orbit_radius * std::cos(az), layout.orbit_radius * std::sin(az),
                       layout.camera_height + 0.2 * k);
        Trajectory traj;
        traj.start = look_at(eye, Vec3(0.0, 0.0, 0.3));
        traj.rotation_step = deg_to_rad(layout.orbit_step_deg);
        traj.translation_step = Vec3(0.0, 0.0, -0.04);
        cfg.trajectories.push_back(traj);
    }
    return cfg;
}

std::optional<double> Scene::intersect(const Vec3& origin, const Vec3& dir) const {
    std::optional<double> best;
    for (const Primitive& prim : primitives) {
        const std::optional<double> s = std::holds_alternative<Plane>(prim)
                                            ? intersect_plane(std::get<Plane>(prim), origin, dir)
                                            : intersect_sphere(std::get<Sphere>(prim), origin, dir);
        if (s && (!best || *s < *best)) best = s;
    }
    return best;
}

double Scene::diameter() const {
    if (primitives.empty()) return 0.0;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const Primitive& p : primitives) extend_bounds(p, lo, hi);
    return (hi - lo).maxCoeff();
}

RenderedFrame render_frame(const Scene& scene, const Pose& pose, const Intrinsics& k, const PixelGrid& grid,
                           FrameId id) {
    RenderedFrame f;
    f.id = id;
    FrameTarget& t = f.target;
    t.width = grid.width;
    t.height = grid.height;
    t.pose = pose;
    t.point_map.assign(grid.size(), Vec3::Zero());
    t.depth.assign(grid.size(), 0.0);
    t.valid.assign(grid.size(), 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        // Camera-frame direction with unit z, so the ray parameter is the depth.
        const Vec3 ray_cam = k.unproject(grid.homogeneous(i));
        const std::optional<double> s = scene.intersect(pose.translation, pose.rotation * ray_cam);
        if (!s) continue;
        t.depth[i] = *s;
        t.point_map[i] = pose.apply(*s * ray_cam);
        t.valid[i] = 1;
    }
    return f;
}

Dataset generate_scene(const SceneConfig& cfg) {
    if (cfg.primitives.empty()) throw std::invalid_argument("scene config: cameras face no geometry");
    if (cfg.num_sequences < 1) throw std::invalid_argument("scene config: num_sequences must be >= 1");
    if (cfg.frames_per_sequence < 2) throw std::invalid_argument("scene config: frames_per_sequence must be >= 2");
    if (cfg.width <= 0 || cfg.height <= 0) throw std::invalid_argument("scene config: resolution must be positive");
    if (static_cast<int>(cfg.trajectories.size()) != cfg.num_sequences) {
        throw std::invalid_argument("scene config: need exactly one trajectory per sequence");
    }
    cfg.intrinsics.validate();
    for (const Primitive& p : cfg.primitives) {
        const double r = std::holds_alternative<Plane>(p) ? std::get<Plane>(p).radius : std::get<Sphere>(p).radius;
        if (!(r > 0.0)) throw std::invalid_argument("scene config: primitive sizes must be positive");
    }

    Dataset ds;
    ds.scene.primitives = cfg.primitives;
    ds.intrinsics = cfg.intrinsics;
    ds.grid = PixelGrid{cfg.width, cfg.height};
    if (cfg.num_sequences < 2) {
        ds.warnings.push_back("num_sequences = 1: across-sequence constraints have no terms (need K >= 2)");
    }

    auto check_hits = [&](const RenderedFrame& f, const char* kind) {
        const double frac = static_cast<double>(f.target.count_valid()) / static_cast<double>(ds.grid.size());
        if (frac < cfg.min_hit_fraction) {
            std::ostringstream os;
            os << "scene config: " << kind << " frame (sequence " << f.id.sequence << ", index " << f.id.index
               << ") hits geometry at only " << frac * 100.0 << "% of pixels";
            throw std::invalid_argument(os.str());
        }
    };

    ds.sequences.resize(static_cast<std::size_t>(cfg.num_sequences));
    if (cfg.heldout) ds.heldout.resize(static_cast<std::size_t>(cfg.num_sequences));
    for (int k = 0; k < cfg.num_sequences; ++k) {
        const Trajectory& traj = cfg.trajectories[k];
        for (int n = 0; n < cfg.frames_per_sequence; ++n) {
            RenderedFrame f = render_frame(ds.scene, traj.at(n), ds.intrinsics, ds.grid, FrameId{k, n});
            check_hits(f, "training");
            ds.sequences[k].push_back(std::move(f));
            if (cfg.heldout && n + 1 < cfg.frames_per_sequence) {
                RenderedFrame h = render_frame(ds.scene, traj.at(n + 0.5), ds.intrinsics, ds.grid, FrameId{k, n});
                check_hits(h, "held-out");
                ds.heldout[k].push_back(std::move(h));
            }
        }
    }
    return ds;
}

SparsifyResult sparsify(const FrameTarget& frame, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("sparsify: fraction must lie in (0, 1]");
    }
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < frame.valid.size(); ++i) {
        if (frame.valid[i]) valid.push_back(i);
    }
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(valid.size())));

    // Partial Fisher–Yates: the first `keep` slots become a uniform subset.
    CounterRng rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(valid.size() - i));
        std::swap(valid[i], valid[j]);
    }

    SparsifyResult out;
    out.target = frame;
    std::fill(out.target.valid.begin(), out.target.valid.end(), std::uint8_t{0});
    for (std::size_t i = 0; i < keep; ++i) out.target.valid[valid[i]] = 1;
    out.kept = keep;
    out.empty = keep == 0;
    return out;
}

}  // namespace rigidloc
