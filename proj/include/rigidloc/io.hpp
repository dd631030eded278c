#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rigidloc/adam.hpp"
#include "rigidloc/geometry.hpp"
#include "rigidloc/predictor.hpp"
#include "rigidloc/scene.hpp"
#include "rigidloc/trainer.hpp"

namespace rigidloc {

/// Malformed files, configs or manifests (CLI exit code 1).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Binary map files: 8-byte magic, then little-endian uint32 version, width,
// height, then row-major pixel data (float64, or uint8 for masks).
inline constexpr std::uint32_t kMapFormatVersion = 1;
inline constexpr char kDepthMagic[8] = {'R', 'L', 'D', 'E', 'P', 'T', 'H', '\0'};
inline constexpr char kPointMagic[8] = {'R', 'L', 'P', 'O', 'I', 'N', 'T', '\0'};
inline constexpr char kMaskMagic[8] = {'R', 'L', 'M', 'A', 'S', 'K', '\0', '\0'};
inline constexpr char kWeightMagic[8] = {'R', 'L', 'W', 'E', 'I', 'G', 'H', 'T'};

template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;
};

void write_depth_file(const std::filesystem::path& p, int width, int height, const std::vector<double>& depth);
Image<double> read_depth_file(const std::filesystem::path& p);
void write_point_file(const std::filesystem::path& p, int width, int height, const std::vector<Vec3>& points);
Image<Vec3> read_point_file(const std::filesystem::path& p);
void write_mask_file(const std::filesystem::path& p, int width, int height, const std::vector<std::uint8_t>& mask);
Image<std::uint8_t> read_mask_file(const std::filesystem::path& p);
void write_weight_file(const std::filesystem::path& p, int width, int height, const std::vector<double>& weights);
Image<double> read_weight_file(const std::filesystem::path& p);

/// One line of 12 numbers: the row-major 3×4 camera-to-world matrix [R | t].
std::string format_pose(const Pose& T);
Pose parse_pose(const std::string& line);
void write_pose_file(const std::filesystem::path& p, const Pose& T);
Pose read_pose_file(const std::filesystem::path& p);

/// Flat key=value text; '#' starts a comment; repeated keys accumulate.
using ConfigMap = std::map<std::string, std::vector<std::string>>;
ConfigMap parse_config(const std::string& text, const std::string& source = "<config>");
ConfigMap read_config_file(const std::filesystem::path& p);

/// Writes manifest.json plus per-frame files under `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& name = "synthetic");
/// Throws ValidationError naming the offending file.
Dataset load_dataset(const std::filesystem::path& manifest_or_dir);

struct Checkpoint {
    TrainConfig config;
    PredictorParams params;
    AdamState adam;
};

void save_checkpoint(const std::filesystem::path& p, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& p);
std::string checkpoint_json(const Checkpoint& c);

}  // namespace rigidloc
