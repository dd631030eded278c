#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rigidloc/geometry.hpp"
#include "rigidloc/losses.hpp"

namespace rigidloc {

/// Planar disc: points p with n·(p − center) = 0 and ‖p − center‖ ≤ radius.
struct Plane {
    Vec3 center = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    double radius = 1.0;
};

struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
};

using Primitive = std::variant<Plane, Sphere>;

/// Pose at time n: the start pose rotated about the world z axis (through the
/// origin) by n·rotation_step, then shifted by n·translation_step.
/// Fractional n gives in-between poses.
struct Trajectory {
    Pose start;
    Vec3 translation_step = Vec3::Zero();
    double rotation_step = 0.0;

    Pose at(double n) const;
};

struct SceneConfig {
    std::uint64_t seed = 0;
    std::vector<Primitive> primitives;
    int num_sequences = 2;
    int frames_per_sequence = 8;
    int width = 32;
    int height = 32;
    Intrinsics intrinsics;
    std::vector<Trajectory> trajectories;
    double min_hit_fraction = 0.5;
    /// Also render one held-out frame halfway between each consecutive pair.
    bool heldout = true;
};

struct SceneLayout {
    int num_sequences = 2;
    int frames_per_sequence = 8;
    int width = 32;
    int height = 32;
    /// Focal length in pixels for a 32-pixel-wide image; scaled with width.
    double focal_32 = 40.0;
    /// Azimuth between consecutive sequence starts, degrees. Smaller values
    /// give more overlap between the sequences' views.
    double sequence_separation_deg = 120.0;
    double orbit_step_deg = 4.0;
    double orbit_radius = 2.0;
    double camera_height = 3.6;
};

/// Desk-scale default: floor disc of diameter 10 with seeded spheres; K=2, N=8, 32×32 unless overridden.
SceneConfig default_scene_config(std::uint64_t seed = 7, const SceneLayout& layout = {});

/// Camera-to-world pose at `eye` looking at `target`, world z up (x right, y down, z forward).
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

struct Scene {
    std::vector<Primitive> primitives;

    /// Nearest hit along o + s·d with s > 0, as the parameter s.
    std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const;
    /// Largest edge of the primitives' axis-aligned bounding box.
    double diameter() const;
};

struct FrameId {
    int sequence = 0;
    int index = 0;

    bool operator==(const FrameId&) const = default;
};

struct RenderedFrame {
    FrameId id;
    FrameTarget target;
};

struct Dataset {
    Scene scene;
    Intrinsics intrinsics;
    PixelGrid grid;
    std::vector<std::vector<RenderedFrame>> sequences;
    /// heldout[k][n] lies halfway between sequences[k][n] and sequences[k][n+1].
    std::vector<std::vector<RenderedFrame>> heldout;
    std::vector<std::string> warnings;

    int num_sequences() const { return static_cast<int>(sequences.size()); }
    int frames_per_sequence() const { return sequences.empty() ? 0 : static_cast<int>(sequences.front().size()); }
};

/// Validates `cfg` and renders every sequence. Throws std::invalid_argument on
/// an invalid config (with a descriptive message).
Dataset generate_scene(const SceneConfig& cfg);

/// Ray casts through every pixel center; misses are invalid.
RenderedFrame render_frame(const Scene& scene, const Pose& pose, const Intrinsics& k, const PixelGrid& grid,
                           FrameId id = {});

struct SparsifyResult {
    FrameTarget target;
    std::size_t kept = 0;
    bool empty = false;
};

/// Keeps a uniformly random subset of round(fraction · valid) valid pixels.
SparsifyResult sparsify(const FrameTarget& frame, double fraction, std::uint64_t seed);

}  // namespace rigidloc
