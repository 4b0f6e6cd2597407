#include "cseg/pipeline.hpp"

#include "cseg/errors.hpp"
#include "cseg/fusion_heads.hpp"
#include "cseg/ops.hpp"

#include <chrono>

namespace cseg {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

void init_model(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const auto d = cfg.backbone.d;
    init_backbone(store, cfg.backbone, rng);
    init_head(store, "head.point_sem", d, cfg.c_sem, rng);
    init_head(store, "head.point_mov", d, cfg.c_mov, rng);
    init_mtf(store, d, rng, true);
    init_tce(store, d, cfg.tce, rng);
    init_head(store, "head.cluster_sem", d, cfg.c_sem, rng);
    init_head(store, "head.cluster_mov", d, cfg.c_mov, rng);
    init_confidence(store, d, rng);
    store.set_meta("model.d", d);
    store.set_meta("model.layers", cfg.backbone.layers);
    store.set_meta("model.c_sem", cfg.c_sem);
    store.set_meta("model.c_mov", cfg.c_mov);
    store.set_meta("model.groups", cfg.tce.groups);
}

void check_compatible(const ParamStore& store, const ModelConfig& cfg) {
    const std::pair<const char*, std::int64_t> want[] = {{"model.d", cfg.backbone.d},
                                                         {"model.layers", cfg.backbone.layers},
                                                         {"model.c_sem", cfg.c_sem},
                                                         {"model.c_mov", cfg.c_mov},
                                                         {"model.groups", cfg.tce.groups}};
    for (const auto& [key, v] : want) {
        const auto got = store.meta(key, -1);
        if (got != v) {
            throw DataError(std::string("checkpoint incompatible with configuration: ") + key + " is " +
                            std::to_string(got) + ", configuration expects " + std::to_string(v));
        }
    }
}

PreparedFrame prepare_frame(std::span<const LabeledFrame> seq, int t, const ModelConfig& cfg) {
    if (t < 0 || t >= static_cast<int>(seq.size())) throw UsageError("frame " + std::to_string(t) + " out of range");
    PreparedFrame pf;
    pf.t = t;
    const Pose world_to_t = seq[t].pose.inverse();
    std::vector<Scan> scans;
    std::vector<Pose> poses;
    for (int h = cfg.history; h >= 0; --h) {
        const int k = t - h * cfg.stride;
        if (k < 0) continue;
        scans.push_back(seq[k].scan);
        poses.push_back(world_to_t * seq[k].pose);
    }
    const StackedCloud stacked = stack_scans(scans, poses, t);
    pf.raw_count = seq[t].scan.points.size();
    pf.current_begin = static_cast<std::int64_t>(stacked.size() - pf.raw_count);
    pf.ds = voxel_downsample_with_map(stacked, cfg.voxel);
    pf.coords = coordinates(pf.ds.cloud.points);
    pf.geo = prepare_backbone(pf.ds.cloud, cfg.backbone);
    for (std::size_t i = 0; i < pf.ds.cloud.size(); ++i) {
        const auto& src = seq[t - pf.ds.cloud.source_offset[i]];
        const auto j = pf.ds.cloud.source_index[i];
        const int sem = train_index(src.semantic[j]);
        if (sem < 0) throw DataError("frame " + std::to_string(src.scan.frame_index) + ": class " +
                                     std::to_string(src.semantic[j]) + " outside the training roster");
        pf.sem_target.push_back(sem);
        pf.mov_target.push_back(static_cast<int>(src.motion[j]));
    }
    pf.to_prev = t > 0 ? world_to_t * seq[t - 1].pose : Pose::identity();
    return pf;
}

std::vector<CoarseLabel> cluster_priors(const PreparedFrame& pf, std::span<const LabeledFrame> seq,
                                        const SequenceState& state, const ModelConfig& cfg, const ClassMap& map) {
    const auto& cloud = pf.ds.cloud;
    std::vector<CoarseLabel> out(cloud.size(), CoarseLabel::Unlabeled);
    const auto labels_of = [&](int frame) -> const std::vector<std::uint32_t>* {
        if (frame < 0) return nullptr;
        if (cfg.oracle_history) return &seq[frame].semantic;
        auto it = state.predictions.find(frame);
        return it == state.predictions.end() ? nullptr : &it->second;
    };

    std::vector<Point5> current;
    std::vector<std::size_t> current_idx;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.source_offset[i] == 0) {
            current.push_back(cloud.points[i]);
            current_idx.push_back(i);
            continue;
        }
        const int frame = pf.t - cloud.source_offset[i];
        if (const auto* lab = labels_of(frame)) out[i] = map.at((*lab)[cloud.source_index[i]]);
    }
    if (const auto* prev = labels_of(pf.t - 1)) {
        const HistoryPredictions hist{seq[pf.t - 1].scan.points, *prev, pf.to_prev};
        const auto transferred = transfer_labels(current, std::span(&hist, 1), map, cfg.transfer);
        for (std::size_t k = 0; k < current_idx.size(); ++k) out[current_idx[k]] = transferred[k];
    }
    return out;
}

ClusterSet cluster_frame(const PreparedFrame& pf, std::span<const CoarseLabel> coarse, const ModelConfig& cfg) {
    const auto cand = clustering_candidates(coarse);
    std::vector<Eigen::Vector3d> pts;
    std::vector<CoarseLabel> lab;
    for (int i : cand) {
        pts.push_back(pf.coords[i]);
        lab.push_back(coarse[i]);
    }
    const ClusterSet local = filter_foreground(dbscan(pts, cfg.dbscan_eps, cfg.dbscan_min_pts), lab);
    std::vector<int> assignment(pf.coords.size(), -1);
    for (std::size_t k = 0; k < cand.size(); ++k) assignment[cand[k]] = local.assignment[k];
    return ClusterSet::from_assignment(std::move(assignment));
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const auto n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (std::int64_t j = 1; j < c; ++j) {
            if (logits[i * c + j] > logits[i * c + best]) best = static_cast<int>(j);
        }
        out[i] = best;
    }
    return out;
}

FrameResult run_frame(ParamBinder& p, const PreparedFrame& pf, std::span<const LabeledFrame> seq,
                      SequenceState& state, const ModelConfig& cfg, const Tensor* backbone_cache) {
    Tape& t = p.tape();
    FrameResult r;
    auto t0 = Clock::now();

    const Var f = backbone_cache ? t.constant(*backbone_cache) : backbone_forward(p, pf.geo);
    const Var h = cfg.use_mtf ? mtf_forward(p, f, pf.coords, state.features, pf.to_prev, cfg.mtf) : f;
    r.sem_point = prediction_head(p, "head.point_sem", h);
    r.mov_point = prediction_head(p, "head.point_mov", h);
    r.sem = r.sem_point;
    r.mov = r.mov_point;
    r.network_ms += ms_since(t0);

    StoredClusters next_clusters;
    if (cfg.use_cluster) {
        t0 = Clock::now();
        static const ClassMap map = ClassMap::semantic_kitti_default();
        r.coarse = cluster_priors(pf, seq, state, cfg, map);
        r.clusters = cluster_frame(pf, r.coarse, cfg);
        r.cluster_ms = ms_since(t0);

        t0 = Clock::now();
        const auto d = t.value(h).dim(1);
        Var hc;
        if (r.clusters.num_clusters() == 0) {
            hc = t.constant(Tensor({static_cast<std::int64_t>(pf.coords.size()), d}));
        } else {
            const ClusterFeatures cur = aggregate_instance(t, h, r.clusters, pf.coords);
            const ClusterFeatures pool = merge_temporal_clusters(t, cur, state.clusters, pf.to_prev);
            const Var enhanced = tce_attention(p, cur, pool, cfg.tce);
            hc = scatter_cluster_feats(t, enhanced, r.clusters);
            next_clusters = {t.value(cur.u), cur.centers, true};
        }
        r.sem_cluster = prediction_head(p, "head.cluster_sem", hc);
        r.mov_cluster = prediction_head(p, "head.cluster_mov", hc);
        r.confidence = confidence(p, h, hc);
        r.sem = apf(p, r.sem_point, r.sem_cluster, r.confidence.sem);
        r.mov = apf(p, r.mov_point, r.mov_cluster, r.confidence.mov);
        r.network_ms += ms_since(t0);
    }

    const auto ds_sem = argmax_rows(t.value(r.sem));
    const auto ds_mov = argmax_rows(t.value(r.mov));
    std::vector<std::uint32_t> raw(pf.raw_count);
    r.sem_pred.resize(pf.raw_count);
    r.mov_pred.resize(pf.raw_count);
    for (std::size_t i = 0; i < pf.raw_count; ++i) {
        const auto rep = pf.ds.voxel_of[pf.current_begin + static_cast<std::int64_t>(i)];
        r.sem_pred[i] = ds_sem[rep];
        r.mov_pred[i] = ds_mov[rep];
        raw[i] = raw_class(ds_sem[rep]);
    }

    state.predictions[pf.t] = std::move(raw);
    state.predictions.erase(pf.t - cfg.history * cfg.stride - 1);
    if (cfg.use_mtf) state.features = {t.value(h), pf.coords, true};
    if (cfg.use_cluster) state.clusters = std::move(next_clusters);
    return r;
}

}  // namespace cseg
