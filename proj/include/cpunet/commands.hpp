#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cpunet/losses.hpp"
#include "cpunet/run_config.hpp"
#include "cpunet/synth.hpp"

// Implementations of the command-line subcommands. Each returns the process
// exit status on success and throws cpunet::Error subclasses otherwise.
namespace cpunet::cli {

constexpr const char* kOutDirEnv = "CPUNET_OUT_DIR";
constexpr const char* kManifestName = "manifest.txt";

/// paths.out_dir, or the CPUNET_OUT_DIR environment variable when set.
std::filesystem::path resolve_out_dir(const RunConfig& config);

struct ManifestEntry {
    std::string image;
    std::string mask;
    std::uint64_t seed = 0;
    std::size_t index = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

struct Dataset {
    std::vector<synth::Sample> samples;
    std::vector<std::string> names;
};

/// Loads every pair listed in the directory's manifest. Masks must be 0/255.
Dataset load_dataset(const std::filesystem::path& dir);

struct ScoreTable {
    std::vector<loss::Metrics> rows;
    double mean_iou = 0.0;
    double mean_dice = 0.0;
};

/// Per-sample and mean IoU/Dice of binary predictions against the dataset.
ScoreTable score_predictions(std::span<const std::vector<std::uint8_t>> predictions,
                             std::span<const synth::Sample> samples);

/// Writes img_%05d.pgm, msk_%05d.pgm and the manifest into paths.data_dir.
int cmd_synth(const RunConfig& config, std::ostream& out);

/// Trains on paths.data_dir and writes model.ckpt, best.ckpt and train.log
/// into the output directory. A non-empty paths.checkpoint resumes from it.
int cmd_train(const RunConfig& config, std::ostream& out);

/// Scores paths.checkpoint on paths.data_dir; writes eval.tsv.
int cmd_eval(const RunConfig& config, std::ostream& out);

/// Segments paths.image with paths.checkpoint; writes <stem>_mask.pgm and
/// <stem>_overlay.pgm.
int cmd_predict(const RunConfig& config, std::ostream& out);

/// Runs the gradient-check suite on the [model] config (L <= 2, sides <= 16).
/// Returns 4 when any block exceeds 1e-4.
int cmd_gradcheck(const RunConfig& config, std::ostream& out, bool inject_fault = false);

}  // namespace cpunet::cli
