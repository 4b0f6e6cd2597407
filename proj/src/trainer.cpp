#include "cseg/trainer.hpp"

#include "cseg/errors.hpp"

#include <chrono>
#include <cmath>
#include <sys/resource.h>

namespace cseg {
namespace {

void check_range(const char* what, int begin, int end, std::size_t n) {
    if (begin < 0 || end > static_cast<int>(n) || begin >= end) {
        throw ConfigError(std::string(what) + " frames [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") invalid for a sequence of " + std::to_string(n) + " frames");
    }
}

}  // namespace

std::size_t peak_rss_kb() {
    rusage ru{};
    getrusage(RUSAGE_SELF, &ru);
    return static_cast<std::size_t>(ru.ru_maxrss);
}

SequenceRun infer_sequence(const ParamStore& store, std::span<const LabeledFrame> seq, const ModelConfig& cfg, int begin,
                           int end) {
    check_range("inference", begin, end, seq.size());
    SequenceRun run;
    run.begin = begin;
    SequenceState state;
    for (int t = begin; t < end; ++t) {
        const PreparedFrame pf = prepare_frame(seq, t, cfg);
        Tape tape;
        ParamBinder binder(tape, store);
        FrameResult r = run_frame(binder, pf, seq, state, cfg);
        run.sem.push_back(std::move(r.sem_pred));
        run.mov.push_back(std::move(r.mov_pred));
        run.network_ms.push_back(r.network_ms);
        run.cluster_ms.push_back(r.cluster_ms);
    }
    return run;
}

EvalResult evaluate_run(std::span<const LabeledFrame> seq, const SequenceRun& run, int begin, int end) {
    const int run_end = run.begin + static_cast<int>(run.sem.size());
    if (begin < run.begin || end > run_end || begin >= end) {
        throw DataError("evaluation frames [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") not covered by predictions for [" + std::to_string(run.begin) + ", " +
                        std::to_string(run_end) + ")");
    }
    ConfusionMatrix sem(kNumSemantic);
    ConfusionMatrix mov(kNumMotion);
    std::vector<int> pred;
    std::vector<std::int64_t> inst;
    for (int t = begin; t < end; ++t) {
        const auto& f = seq[t];
        const auto& ps = run.sem[t - run.begin];
        const auto& pm = run.mov[t - run.begin];
        if (ps.size() != f.semantic.size() || pm.size() != f.semantic.size()) {
            throw DataError("frame " + std::to_string(t) + ": " + std::to_string(ps.size()) + " predictions for " +
                            std::to_string(f.semantic.size()) + " points");
        }
        for (std::size_t i = 0; i < ps.size(); ++i) {
            sem.add(train_index(f.semantic[i]), ps[i]);
            mov.add(static_cast<int>(f.motion[i]), pm[i]);
            pred.push_back(ps[i]);
            inst.push_back(f.instance[i] < 0 ? -1 : static_cast<std::int64_t>(t) * (1LL << 32) + f.instance[i]);
        }
    }
    EvalResult r;
    r.sem = compute_iou(sem);
    r.mov = compute_iou(mov);
    r.iou_moving = r.mov.per_class[1].value_or(0.0);
    r.consistency = consistency_metric(pred, inst);
    r.points = sem.total();
    return r;
}

Trainer::Trainer(ModelConfig model, TrainConfig train, std::span<const LabeledFrame> seq)
    : model_(std::move(model)), train_(train), seq_(seq), cache_(seq.size()), backbone_cache_(seq.size()) {
    check_range("training", train_.train_begin, train_.train_end, seq.size());
    check_range("validation", train_.val_begin, train_.val_end, seq.size());
    if (train_.epochs_stage1 < 0 || train_.epochs_stage2 < 0) throw ConfigError("epoch counts must be >= 0");
}

ModelConfig Trainer::stage_model(int stage) const {
    ModelConfig m = model_;
    if (stage == 1) {
        m.use_mtf = false;
        m.use_cluster = false;
    }
    return m;
}

const PreparedFrame& Trainer::prepared(int t) {
    if (!cache_[t]) cache_[t] = prepare_frame(seq_, t, model_);
    return *cache_[t];
}

PreparedFrame augment_frame(const PreparedFrame& pf, double yaw, bool flip_x, bool flip_y, double scale,
                            const ModelConfig& cfg) {
    PreparedFrame out = pf;
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double mx = flip_x ? -1.0 : 1.0, my = flip_y ? -1.0 : 1.0;
    for (auto& p : out.ds.cloud.points) {
        const double x = scale * (c * mx * p.x - s * my * p.y);
        const double y = scale * (s * mx * p.x + c * my * p.y);
        p = Point5::make(x, y, scale * p.z, p.intensity);
    }
    out.coords = coordinates(out.ds.cloud.points);
    out.geo = prepare_backbone(out.ds.cloud, cfg.backbone);
    return out;
}

EpochRecord Trainer::run_epoch(ParamStore& store, int stage, int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig cfg = stage_model(stage);
    if (stage == 2) {
        const auto sum = store.checksum("backbone.");
        if (sum != backbone_checksum_) {
            for (auto& c : backbone_cache_) c.reset();
            backbone_checksum_ = sum;
        }
    }
    EpochRecord rec;
    rec.stage = stage;
    SequenceState state;
    int frames = 0;
    for (int t = train_.train_begin; t < train_.train_end; ++t) {
        const PreparedFrame* pfp = &prepared(t);
        std::optional<PreparedFrame> aug;
        if (stage == 1 && train_.augment) {
            Rng rng(train_.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) * 7919 + t);
            const double yaw = rng.uniform(-train_.yaw_jitter, train_.yaw_jitter);
            const bool flip_x = rng.uniform() < 0.5;
            const bool flip_y = rng.uniform() < 0.5;
            const double scale = rng.uniform(1.0 - train_.scale_jitter, 1.0 + train_.scale_jitter);
            aug = augment_frame(*pfp, yaw, flip_x, flip_y, scale, model_);
            pfp = &*aug;
        }
        const PreparedFrame& pf = *pfp;
        const Tensor* cached = nullptr;
        if (stage == 2) {
            if (!backbone_cache_[t]) {
                Tape bt;
                ParamBinder bb(bt, store);
                backbone_cache_[t] = bt.value(backbone_forward(bb, pf.geo));
            }
            cached = &*backbone_cache_[t];
        }
        Tape tape;
        ParamBinder binder(tape, store);
        if (stage == 2) {
            binder.freeze_prefix("backbone.");
            binder.freeze_prefix("head.point_");
        }
        const FrameResult r = run_frame(binder, pf, seq_, state, cfg, cached);
        const Loss loss = total_loss(tape, r.sem, r.mov, pf.sem_target, pf.mov_target);
        if (!std::isfinite(loss.report.total)) {
            const auto& l = loss.report;
            throw NumericError("non-finite loss at stage " + std::to_string(stage) + " epoch " +
                               std::to_string(epoch + 1) + " frame " + std::to_string(t) + " (ce_sem " +
                               std::to_string(l.ce_sem) + ", ls_sem " + std::to_string(l.ls_sem) + ", ce_mov " +
                               std::to_string(l.ce_mov) + ", ls_mov " + std::to_string(l.ls_mov) + ")");
        }
        tape.backward(loss.total);
        optimizer_step(store, collect_grads(binder), train_.adam);
        rec.loss += loss.report.total;
        rec.mean_terms.ce_sem += loss.report.ce_sem;
        rec.mean_terms.ls_sem += loss.report.ls_sem;
        rec.mean_terms.ce_mov += loss.report.ce_mov;
        rec.mean_terms.ls_mov += loss.report.ls_mov;
        ++frames;
    }
    rec.loss /= frames;
    rec.mean_terms.ce_sem /= frames;
    rec.mean_terms.ls_sem /= frames;
    rec.mean_terms.ce_mov /= frames;
    rec.mean_terms.ls_mov /= frames;
    rec.mean_terms.total = rec.loss;

    const int vb = std::max(0, train_.val_begin - train_.val_warmup);
    const SequenceRun run = infer_sequence(store, seq_, cfg, vb, train_.val_end);
    const EvalResult ev = evaluate_run(seq_, run, train_.val_begin, train_.val_end);
    rec.val_miou = ev.sem.miou;
    rec.val_iou_moving = ev.iou_moving;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

int Trainer::run(ParamStore& store, const EpochCallback& on_epoch, int max_epochs) {
    int ran = 0;
    while (max_epochs < 0 || ran < max_epochs) {
        int stage = static_cast<int>(store.meta("train.stage", 1));
        int done = static_cast<int>(store.meta("train.epoch", 0));
        if (stage == 1 && done >= train_.epochs_stage1) {
            stage = 2;
            done = 0;
        }
        if (stage == 2 && done >= train_.epochs_stage2) break;
        EpochRecord rec = run_epoch(store, stage, done);
        rec.epoch = done + 1;
        store.set_meta("train.stage", stage);
        store.set_meta("train.epoch", done + 1);
        ++ran;
        if (on_epoch) on_epoch(rec, store);
    }
    return ran;
}

}  // namespace cseg
