#include "cseg/cluster_branch.hpp"

#include "cseg/errors.hpp"
#include "cseg/layers.hpp"
#include "cseg/ops.hpp"

#include <algorithm>
#include <numeric>

namespace cseg {

void init_tce(ParamStore& store, std::int64_t d, const AttentionConfig& cfg, Rng& rng) {
    if (cfg.groups < 1 || cfg.groups > d || d % cfg.groups != 0) {
        throw ConfigError("attention groups " + std::to_string(cfg.groups) + " must divide D = " + std::to_string(d));
    }
    if (cfg.k_nn < 1) throw ConfigError("k_nn must be >= 1");
    add_linear(store, "tce.q", d, d, rng);
    add_linear(store, "tce.k", d, d, rng);
    add_linear(store, "tce.v", d, d, rng);
    add_mlp2(store, "tce.pos", 3, d, d, rng);
    add_linear(store, "tce.omega", d, cfg.groups, rng);
}

ClusterFeatures aggregate_instance(Tape& t, Var h, const ClusterSet& clusters, std::span<const Eigen::Vector3d> coords) {
    if (static_cast<std::int64_t>(clusters.num_points()) != t.value(h).dim(0) || coords.size() != clusters.num_points()) {
        throw ShapeError("aggregate_instance: cluster assignment covers " + std::to_string(clusters.num_points()) +
                         " points, features " + to_string(t.value(h).shape()));
    }
    for (int c = 0; c < clusters.num_clusters(); ++c) {
        if (clusters.members[c].empty()) throw DataError("aggregate_instance: cluster " + std::to_string(c) + " is empty");
    }
    std::vector<std::int64_t> seg(clusters.assignment.begin(), clusters.assignment.end());
    ClusterFeatures out;
    out.u = ops::segment_mean(t, h, seg, clusters.num_clusters());
    out.centers = cluster_centers(clusters, coords);
    return out;
}

ClusterFeatures merge_temporal_clusters(Tape& t, const ClusterFeatures& current, const StoredClusters& prev,
                                        const Pose& to_current) {
    if (!prev.valid || prev.centers.empty()) return current;
    ClusterFeatures out;
    out.u = ops::concat_rows(t, current.u, t.constant(prev.u));
    out.centers = current.centers;
    for (const auto& g : prev.centers) out.centers.push_back(to_current.apply(g));
    return out;
}

std::vector<std::vector<int>> cluster_neighbours(std::span<const Eigen::Vector3d> queries,
                                                 std::span<const Eigen::Vector3d> pool, int k_nn) {
    if (pool.empty()) throw DataError("cluster_neighbours: empty pool");
    if (k_nn < 1) throw ConfigError("k_nn must be >= 1");
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(k_nn), pool.size());
    std::vector<std::vector<int>> out(queries.size());
    std::vector<int> idx(pool.size());
    std::vector<double> d2(pool.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        for (std::size_t j = 0; j < pool.size(); ++j) d2[j] = (pool[j] - queries[i]).squaredNorm();
        std::iota(idx.begin(), idx.end(), 0);
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                          [&](int a, int b) { return d2[a] < d2[b] || (d2[a] == d2[b] && a < b); });
        out[i].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

Var tce_attention(ParamBinder& p, const ClusterFeatures& current, const ClusterFeatures& pool,
                  const AttentionConfig& cfg, AttentionTrace* trace) {
    Tape& t = p.tape();
    const auto d = t.value(current.u).dim(1);
    const auto h = t.value(p("tce.omega.b")).dim(0);
    if (h < 1 || d % h != 0) throw ConfigError("attention groups " + std::to_string(h) + " must divide D = " + std::to_string(d));
    const auto nbrs = cluster_neighbours(current.centers, pool.centers, cfg.k_nn);
    const auto nc = current.size();
    const auto k = static_cast<std::int64_t>(nbrs.empty() ? 0 : nbrs[0].size());

    std::vector<std::int64_t> qi, kj;
    Tensor rel({nc * k, 3});
    for (std::int64_t i = 0; i < nc; ++i) {
        for (std::int64_t j = 0; j < k; ++j) {
            const int n = nbrs[i][j];
            qi.push_back(i);
            kj.push_back(n);
            const Eigen::Vector3d r = pool.centers[n] - current.centers[i];
            for (int a = 0; a < 3; ++a) rel[(i * k + j) * 3 + a] = r[a];
        }
    }
    const Var q = ops::gather_rows(t, linear_layer(p, "tce.q", current.u), qi);
    const Var kk = ops::gather_rows(t, linear_layer(p, "tce.k", pool.u), kj);
    const Var v = ops::gather_rows(t, linear_layer(p, "tce.v", pool.u), kj);
    const Var pos = mlp2(p, "tce.pos", t.constant(rel));
    const Var logits = linear_layer(p, "tce.omega", ops::add(t, ops::sub(t, kk, q), pos));
    const Var w = ops::reshape(t, ops::softmax(t, ops::reshape(t, logits, {nc, k, h}), 1), {nc * k, h});
    if (trace) {
        trace->neighbours = nbrs;
        trace->weights = t.value(w);
        trace->k = static_cast<int>(k);
    }
    return ops::grouped_weighted_sum(t, w, v, k);
}

Var scatter_cluster_feats(Tape& t, Var u, const ClusterSet& clusters) {
    const auto nc = t.value(u).dim(0);
    std::vector<std::int64_t> idx(clusters.assignment.begin(), clusters.assignment.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < -1 || idx[i] >= nc) {
            throw DataError("scatter_cluster_feats: point " + std::to_string(i) + " has cluster id " +
                            std::to_string(idx[i]) + " but only " + std::to_string(nc) + " clusters exist");
        }
    }
    return ops::gather_rows(t, u, idx);
}

}  // namespace cseg
