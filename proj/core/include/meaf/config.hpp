#pragma once

#include <filesystem>
#include <string>

#include "meaf/dataset.hpp"
#include "meaf/trainer.hpp"

namespace meaf {

/// Everything a run needs, stored as a flat `key = value` text file.
/// Lists are comma separated; `#` starts a comment; missing keys keep their
/// defaults; unknown keys are an error.
struct RunConfig {
  TrainConfig train;
  SynthSpec synth;
  EvalOptions eval;

  void validate() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

/// Throws ArgumentError naming the offending line.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes every key, so the output doubles as documentation of the defaults.
std::string serialize_run_config(const RunConfig& config);

/// Only the synth.* section is read; other keys are still validated.
SynthSpec load_synth_spec(const std::filesystem::path& path);

}  // namespace meaf
