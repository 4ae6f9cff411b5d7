#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpunet/network.hpp"
#include "cpunet/synth.hpp"
#include "cpunet/train.hpp"

namespace cpunet {

struct Paths {
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string checkpoint;
    std::string image;
};

/// Everything a CLI command needs. On disk this is a flat `key = value` file
/// with `[model]`, `[train]`, `[synth]` and `[paths]` sections; on the
/// command line the same keys are addressed as `section.key`.
struct RunConfig {
    CpUnetConfig model;
    train::TrainConfig train;
    synth::SynthSpec synth;
    std::uint64_t synth_seed = 1;
    Paths paths;
};

/// Applies one `section.key = value`. Unknown keys and malformed values are
/// ConfigErrors.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Applies a config file's text on top of `config`.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::string& path);

/// Parses `section.key=value`.
void apply_override(RunConfig& config, const std::string& assignment);

/// Every key of one section with its current value, in schema order.
std::vector<std::pair<std::string, std::string>> section_values(const RunConfig& config, const std::string& section);

/// Full config in file syntax.
std::string render_config(const RunConfig& config);

/// All recognised keys as `section.key`.
std::vector<std::string> config_keys();

}  // namespace cpunet
