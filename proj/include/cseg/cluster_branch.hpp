#pragma once

#include "cseg/cluster_gen.hpp"
#include "cseg/params.hpp"

#include <vector>

namespace cseg {

// Cluster features U [N_c x D] on a tape and their centers G.
struct ClusterFeatures {
    Var u;
    std::vector<Eigen::Vector3d> centers;
    std::int64_t size() const { return static_cast<std::int64_t>(centers.size()); }
};

// Detached cluster features kept from the previous frame, centers in that frame.
struct StoredClusters {
    Tensor u;
    std::vector<Eigen::Vector3d> centers;
    bool valid = false;
};

struct AttentionConfig {
    int k_nn = 4;
    int groups = 4;
};

void init_tce(ParamStore& store, std::int64_t d, const AttentionConfig& cfg, Rng& rng);

// Mean feature and mean coordinate of every cluster. Empty clusters throw DataError.
ClusterFeatures aggregate_instance(Tape& t, Var h, const ClusterSet& clusters, std::span<const Eigen::Vector3d> coords);

// Current clusters followed by the previous ones moved into the current frame.
ClusterFeatures merge_temporal_clusters(Tape& t, const ClusterFeatures& current, const StoredClusters& prev,
                                        const Pose& to_current);

// k_nn nearest pool entries per query center, ordered by (distance, index),
// k clamped to the pool size. Row i holds the neighbours of query i.
std::vector<std::vector<int>> cluster_neighbours(std::span<const Eigen::Vector3d> queries,
                                                 std::span<const Eigen::Vector3d> pool, int k_nn);

struct AttentionTrace {
    std::vector<std::vector<int>> neighbours;
    Tensor weights;  // [(N_c*k) x h], normalised over each cluster's k neighbours
    int k = 0;
};

// Grouped vector attention of each current cluster over its nearest pool
// clusters: w_ij = omega(k_j - q_i + pos(g_j - g_i)), softmax over j per
// group, output sum_j weight(j, group) * v_j[group channels].
Var tce_attention(ParamBinder& p, const ClusterFeatures& current, const ClusterFeatures& pool,
                  const AttentionConfig& cfg, AttentionTrace* trace = nullptr);

// Row p = cluster feature of point p's cluster, zero for unclustered points.
Var scatter_cluster_feats(Tape& t, Var u, const ClusterSet& clusters);

}  // namespace cseg
