#pragma once

#include "cseg/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>

namespace cseg::app {

// Writes the configured synthetic sequence to dir.
void cmd_synth(const PipelineConfig& cfg, const std::filesystem::path& dir, std::ostream& log);

// Two-stage training on cfg.data. The checkpoint is rewritten after every
// epoch; metrics.log / metrics.jsonl in cfg.out get one line per epoch. With
// resume, training continues from the stage and epoch stored in the checkpoint.
// max_epochs >= 0 stops after that many epochs in this call. A non-finite loss
// leaves nan_dump.ckpt and nan_dump.txt in cfg.out and rethrows.
void cmd_train(const PipelineConfig& cfg, bool resume, std::ostream& log, int max_epochs = -1);

// Sequential inference over every frame of cfg.data. Writes
// cfg.out/predictions/NNNNNN.label and cfg.out/timing.json.
void cmd_infer(const PipelineConfig& cfg, std::ostream& log);

struct EvalRequest {
    std::filesystem::path predictions;
    std::filesystem::path ground_truth;
    std::filesystem::path out;
    int begin = 0;
    int end = -1;  // -1: last frame
    std::optional<std::filesystem::path> baseline;  // second prediction set, reported side by side
};

// Writes report.txt and report.json to out and echoes the text to log.
void cmd_eval(const EvalRequest& req, std::ostream& log);

// Per frame: coarse prior and cluster id of every raw current point, as
// cfg.out/coarse/NNNNNN.coarse and cfg.out/clusters/NNNNNN.cluster (int32).
// Without a checkpoint the priors must come from ground truth (oracle_history).
void cmd_cluster_labels(const PipelineConfig& cfg, bool have_checkpoint, std::ostream& log);

// Full command line: parses argv, runs one subcommand and returns the exit
// code (0 ok, 1 config/usage, 2 data, 3 numeric). Messages go to out/err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cseg::app
