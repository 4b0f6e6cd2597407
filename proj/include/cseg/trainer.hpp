#pragma once

#include "cseg/pipeline.hpp"
#include "cseg/training.hpp"

#include <filesystem>
#include <functional>
#include <optional>

namespace cseg {

struct TrainConfig {
    int epochs_stage1 = 30;
    int epochs_stage2 = 25;
    AdamWConfig adam;
    int train_begin = 0;
    int train_end = 32;
    int val_begin = 32;
    int val_end = 40;
    int val_warmup = 2;  // unscored frames run before val_begin to fill history
    // Stage-1 augmentation: small yaw, x/y mirrors and scale of the stacked cloud.
    bool augment = true;
    double yaw_jitter = 0.1;  // radians
    double scale_jitter = 0.05;
    std::uint64_t seed = 1;
};

// Per-frame predictions on the raw points of frames [begin, end).
struct SequenceRun {
    int begin = 0;
    std::vector<std::vector<int>> sem;
    std::vector<std::vector<int>> mov;
    std::vector<double> network_ms;
    std::vector<double> cluster_ms;
};

// Sequential closed-loop inference from a fresh state.
SequenceRun infer_sequence(const ParamStore& store, std::span<const LabeledFrame> seq, const ModelConfig& cfg, int begin,
                           int end);

struct EvalResult {
    IouResult sem;
    IouResult mov;
    double iou_moving = 0.0;
    std::optional<double> consistency;
    std::int64_t points = 0;
};

// Scores frames [begin, end) of a run against ground truth. Consistency
// counts every (frame, instance) pair separately.
EvalResult evaluate_run(std::span<const LabeledFrame> seq, const SequenceRun& run, int begin, int end);

struct EpochRecord {
    int stage = 1;
    int epoch = 0;  // 1-based within the stage
    double loss = 0.0;
    LossReport mean_terms;
    double val_miou = 0.0;
    double val_iou_moving = 0.0;
    double seconds = 0.0;
};

// Two-stage schedule. Stage 1 trains backbone and point heads on the point
// branch alone; stage 2 freezes the backbone and trains the rest on the fused
// output. Progress is kept in store metadata ("train.stage", "train.epoch"),
// so a store saved after any epoch resumes where it stopped.
class Trainer {
public:
    Trainer(ModelConfig model, TrainConfig train, std::span<const LabeledFrame> seq);

    using EpochCallback = std::function<void(const EpochRecord&, const ParamStore&)>;
    // Runs until both stages are done or max_epochs epochs have run in this call
    // (negative = no limit). Returns the number of epochs run.
    int run(ParamStore& store, const EpochCallback& on_epoch = {}, int max_epochs = -1);

    ModelConfig stage_model(int stage) const;

private:
    EpochRecord run_epoch(ParamStore& store, int stage, int epoch);
    const PreparedFrame& prepared(int t);

    ModelConfig model_;
    TrainConfig train_;
    std::span<const LabeledFrame> seq_;
    std::vector<std::optional<PreparedFrame>> cache_;
    std::vector<std::optional<Tensor>> backbone_cache_;
    std::uint64_t backbone_checksum_ = 0;
};

// Copy of pf with every stacked point mirrored (x -> -x, y -> -y as asked),
// rotated by yaw about z and scaled; geometry is rebuilt, targets are unchanged.
PreparedFrame augment_frame(const PreparedFrame& pf, double yaw, bool flip_x, bool flip_y, double scale,
                            const ModelConfig& cfg);

std::size_t peak_rss_kb();

}  // namespace cseg
