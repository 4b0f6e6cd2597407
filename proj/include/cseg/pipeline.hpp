#pragma once

#include "cseg/backbone.hpp"
#include "cseg/cluster_branch.hpp"
#include "cseg/fusion_heads.hpp"
#include "cseg/label_transfer.hpp"
#include "cseg/mtf.hpp"
#include "cseg/synth.hpp"

#include <map>
#include <optional>
#include <span>
#include <vector>

namespace cseg {

struct ModelConfig {
    BackboneConfig backbone;
    MtfConfig mtf;
    AttentionConfig tce;
    int c_sem = kNumSemantic;
    int c_mov = kNumMotion;
    int history = 2;  // past scans stacked with the current one
    int stride = 1;   // frame step between stacked scans
    double voxel = 0.1;
    TransferConfig transfer;
    double dbscan_eps = 0.7;
    int dbscan_min_pts = 10;
    bool use_mtf = true;
    bool use_cluster = true;
    bool oracle_history = false;  // label transfer from ground truth instead of predictions
};

void init_model(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);
// Throws DataError if the checkpoint's recorded sizes differ from cfg.
void check_compatible(const ParamStore& store, const ModelConfig& cfg);

// Everything about frame t that does not depend on parameters.
struct PreparedFrame {
    int t = 0;
    Downsampled ds;
    std::vector<Eigen::Vector3d> coords;  // downsampled, frame t
    BackboneGeometry geo;
    std::vector<int> sem_target;  // training indices per downsampled point
    std::vector<int> mov_target;
    std::int64_t current_begin = 0;  // stacked index of the first current-frame point
    std::size_t raw_count = 0;
    Pose to_prev;  // maps frame t-1 coordinates into frame t
};

PreparedFrame prepare_frame(std::span<const LabeledFrame> seq, int t, const ModelConfig& cfg);

// Carried from frame to frame, all detached values.
struct SequenceState {
    TemporalFeatureState features;
    StoredClusters clusters;
    std::map<int, std::vector<std::uint32_t>> predictions;  // frame -> raw class per raw point
    void reset() { *this = SequenceState{}; }
};

struct FrameResult {
    Var sem;  // final logits per downsampled point
    Var mov;
    Var sem_point;
    Var mov_point;
    Var sem_cluster;  // set only when the cluster branch runs
    Var mov_cluster;
    Confidence confidence;
    ClusterSet clusters;
    std::vector<CoarseLabel> coarse;
    std::vector<int> sem_pred;  // per raw current point, training indices
    std::vector<int> mov_pred;
    double network_ms = 0.0;
    double cluster_ms = 0.0;
};

// Cluster priors for the downsampled cloud: current points via label
// transfer from frame t-1, older points from their own frame's predictions.
std::vector<CoarseLabel> cluster_priors(const PreparedFrame& pf, std::span<const LabeledFrame> seq,
                                        const SequenceState& state, const ModelConfig& cfg, const ClassMap& map);
ClusterSet cluster_frame(const PreparedFrame& pf, std::span<const CoarseLabel> coarse, const ModelConfig& cfg);

// Runs frame t and advances state. When backbone_cache is given it replaces
// the backbone output (frozen backbone).
FrameResult run_frame(ParamBinder& p, const PreparedFrame& pf, std::span<const LabeledFrame> seq,
                      SequenceState& state, const ModelConfig& cfg, const Tensor* backbone_cache = nullptr);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace cseg
