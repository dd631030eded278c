#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rigidloc/predictor.hpp"
#include "rigidloc/scene.hpp"
#include "rigidloc/trainer.hpp"

namespace rigidloc {

struct FrameError {
    FrameId id;
    bool ok = false;
    std::string failure;
    double translation = 0.0;    // scene length units
    double rotation_deg = 0.0;
};

/// Medians are taken over successful frames only.
struct EvalReport {
    std::vector<FrameError> frames;
    double median_translation = 0.0;
    double median_rotation_deg = 0.0;
    int frame_count = 0;
    int failure_count = 0;
};

/// Lower of the two middle values for even counts. Throws std::invalid_argument when empty.
double lower_median(std::vector<double> values);

/// Fills the medians and counts from `frames`. With no successful frames the
/// medians are NaN.
EvalReport summarize(std::vector<FrameError> frames);

enum class Split { train, heldout };

/// Throws std::invalid_argument for anything but "train" / "heldout".
Split parse_split(const std::string& s);

struct EvalOptions {
    WeightMode mode = WeightMode::learned;
    /// Fraction of pixels whose predicted depth is corrupted before alignment.
    double corrupt_fraction = 0.0;
    std::uint64_t corrupt_seed = 0;
};

/// Localizes every frame of the split against its GT pose. Training frames use
/// their learned embedding; held-out frames the midpoint of their two
/// neighbours' embeddings. Frames without embeddings are reported as failures.
EvalReport evaluate_split(const Predictor& model, const Dataset& ds, Split split, const EvalOptions& opts = {});

std::string eval_report_json(const EvalReport& r);
std::string eval_report_table(const EvalReport& r);

}  // namespace rigidloc
