#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rigidloc/io.hpp"
#include "rigidloc/scene.hpp"
#include "rigidloc/trainer.hpp"

namespace rigidloc {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2 };

/// Later keys replace earlier ones wholesale (flags win over file values).
ConfigMap merge_config(ConfigMap base, const ConfigMap& overrides);

/// Throws ValidationError on unknown keys or unparsable values.
SceneConfig scene_config_from(const ConfigMap& cfg);
TrainConfig train_config_from(const ConfigMap& cfg);

// Each command reads its options from the merged config. Human-readable output
// goes to `out`, diagnostics to `err`; the return value is the exit code.
int cmd_synth(const ConfigMap& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const ConfigMap& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const ConfigMap& cfg, std::ostream& out, std::ostream& err);
int cmd_align(const ConfigMap& cfg, std::ostream& out, std::ostream& err);

/// Full command-line entry point: `rigidloc <synth|train|eval|align> [flags]`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rigidloc
