#include "commands.hpp"

#include "cseg/errors.hpp"
#include "cseg/io.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace cseg::app {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", t);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::vector<LabeledFrame> load_data(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
    return read_dataset(dir);
}

ParamStore load_checkpoint(const PipelineConfig& cfg) {
    if (!fs::exists(cfg.checkpoint)) throw DataError("checkpoint " + cfg.checkpoint.string() + " does not exist");
    ParamStore store = ParamStore::load(cfg.checkpoint);
    check_compatible(store, cfg.model);
    return store;
}

std::string fixed(double v, int digits = 4) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// Reads predicted label files for frames [begin, end).
std::vector<std::vector<std::uint32_t>> read_predictions(const fs::path& dir, std::span<const LabeledFrame> gt,
                                                         int begin, int end) {
    std::vector<std::vector<std::uint32_t>> out;
    for (int t = begin; t < end; ++t) {
        const fs::path p = dir / (frame_name(t) + ".label");
        if (!fs::exists(p)) throw DataError("missing prediction file " + p.string());
        auto words = io::read_labels(p);
        if (words.size() != gt[t].semantic.size()) {
            throw DataError(p.string() + ": " + std::to_string(words.size()) + " predictions for " +
                            std::to_string(gt[t].semantic.size()) + " points");
        }
        out.push_back(std::move(words));
    }
    return out;
}

EvalResult score(std::span<const LabeledFrame> gt, const std::vector<std::vector<std::uint32_t>>& words, int begin) {
    SequenceRun run;
    run.begin = begin;
    for (std::size_t f = 0; f < words.size(); ++f) {
        std::vector<int> sem, mov;
        for (const auto w : words[f]) {
            const int s = train_index(io::semantic_of(w));
            const auto m = static_cast<int>(io::motion_of(w));
            if (s < 0 || m >= kNumMotion) {
                throw DataError("frame " + std::to_string(begin + f) + ": label word " + std::to_string(w) +
                                " outside the class roster");
            }
            sem.push_back(s);
            mov.push_back(m);
        }
        run.sem.push_back(std::move(sem));
        run.mov.push_back(std::move(mov));
    }
    return evaluate_run(gt, run, begin, begin + static_cast<int>(words.size()));
}

json result_json(const EvalResult& r) {
    const auto names = semantic_names();
    json j;
    j["semantic"] = to_json(r.sem, names);
    j["miou"] = r.sem.miou;
    j["iou_moving"] = r.iou_moving;
    j["consistency"] = r.consistency ? json(*r.consistency) : json(nullptr);
    j["points"] = r.points;
    return j;
}

std::string result_text(const std::string& title, const EvalResult& r) {
    const auto names = semantic_names();
    std::ostringstream s;
    s << title << "\n";
    for (std::size_t c = 0; c < names.size(); ++c) {
        const auto& iou = r.sem.per_class[c];
        s << "  " << names[c] << std::string(12 - std::min<std::size_t>(names[c].size(), 11), ' ')
          << (iou ? fixed(*iou) : std::string("absent")) << "\n";
    }
    s << "  mIoU        " << fixed(r.sem.miou) << "\n";
    s << "  IoU_M       " << fixed(r.iou_moving) << "\n";
    s << "  consistency " << (r.consistency ? fixed(*r.consistency) : std::string("absent")) << "\n";
    s << "  points      " << r.points << "\n";
    return s.str();
}

}  // namespace

void cmd_synth(const PipelineConfig& cfg, const fs::path& dir, std::ostream& log) {
    const auto frames = generate_sequence(cfg.scene());
    write_dataset(frames, dir);
    std::size_t points = 0, moving = 0;
    for (const auto& f : frames) {
        points += f.semantic.size();
        for (const auto m : f.motion) moving += m;
    }
    log << "wrote " << frames.size() << " frames, " << points << " points (" << moving << " moving) to "
        << dir.string() << "\n";
}

void cmd_train(const PipelineConfig& cfg, bool resume, std::ostream& log, int max_epochs) {
    const auto seq = load_data(cfg.data);
    fs::create_directories(cfg.out);
    ParamStore store;
    if (resume) {
        store = load_checkpoint(cfg);
        log << "resuming at stage " << store.meta("train.stage", 1) << ", " << store.meta("train.epoch", 0)
            << " epochs done\n";
    } else {
        init_model(store, cfg.model, cfg.model_seed);
    }
    const auto mode = resume ? std::ios::app : std::ios::trunc;
    std::ofstream text(cfg.out / "metrics.log", std::ios::out | mode);
    std::ofstream lines(cfg.out / "metrics.jsonl", std::ios::out | mode);
    if (!text || !lines) throw DataError("cannot write metrics in " + cfg.out.string());

    Trainer trainer(cfg.model, cfg.train, seq);
    try {
        trainer.run(store, [&](const EpochRecord& r, const ParamStore& s) {
            s.save(cfg.checkpoint);
            const auto& m = r.mean_terms;
            std::ostringstream line;
            line << "stage " << r.stage << " epoch " << r.epoch << " loss " << fixed(r.loss, 6) << " (ce_sem "
                 << fixed(m.ce_sem) << " ls_sem " << fixed(m.ls_sem) << " ce_mov " << fixed(m.ce_mov) << " ls_mov "
                 << fixed(m.ls_mov) << ") val_miou " << fixed(r.val_miou) << " val_iou_m "
                 << fixed(r.val_iou_moving) << " " << fixed(r.seconds, 1) << "s\n";
            text << line.str() << std::flush;
            log << line.str() << std::flush;
            json j{{"stage", r.stage},         {"epoch", r.epoch},   {"loss", r.loss},
                   {"ce_sem", m.ce_sem},       {"ls_sem", m.ls_sem}, {"ce_mov", m.ce_mov},
                   {"ls_mov", m.ls_mov},       {"val_miou", r.val_miou},
                   {"val_iou_moving", r.val_iou_moving}, {"seconds", r.seconds}};
            lines << j.dump() << "\n" << std::flush;
        }, max_epochs);
    } catch (const NumericError& e) {
        store.save(cfg.out / "nan_dump.ckpt");
        std::ostringstream d;
        d << e.what() << "\n"
          << "stage " << store.meta("train.stage", 1) << ", epochs done " << store.meta("train.epoch", 0)
          << ", optimizer steps " << store.meta("adam.step", 0) << "\n";
        for (const auto& name : store.names()) {
            const Tensor& v = store.get(name);
            std::size_t bad = 0;
            double peak = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (!std::isfinite(v[i])) ++bad;
                else peak = std::max(peak, std::abs(v[i]));
            }
            d << name << " max|x| " << peak << " non-finite " << bad << "\n";
        }
        write_text(cfg.out / "nan_dump.txt", d.str());
        throw;
    }
    store.save(cfg.checkpoint);
    log << "checkpoint " << cfg.checkpoint.string() << "\n";
}

void cmd_infer(const PipelineConfig& cfg, std::ostream& log) {
    const auto seq = load_data(cfg.data);
    const ParamStore store = load_checkpoint(cfg);
    const fs::path pred_dir = cfg.out / "predictions";
    fs::create_directories(pred_dir);

    json frames = json::array();
    double net = 0.0, clu = 0.0;
    SequenceState state;
    for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const PreparedFrame pf = prepare_frame(seq, t, cfg.model);
        const double prep_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        Tape tape;
        ParamBinder binder(tape, store);
        const FrameResult r = run_frame(binder, pf, seq, state, cfg.model);
        std::vector<std::uint32_t> words(r.sem_pred.size());
        for (std::size_t i = 0; i < words.size(); ++i) {
            words[i] = io::pack_label(raw_class(r.sem_pred[i]), static_cast<std::uint32_t>(r.mov_pred[i]));
        }
        io::write_labels(pred_dir / (frame_name(t) + ".label"), words);
        net += r.network_ms;
        clu += r.cluster_ms;
        frames.push_back({{"frame", t},
                          {"points", words.size()},
                          {"stacked_points", pf.coords.size()},
                          {"clusters", r.clusters.num_clusters()},
                          {"preprocess_ms", prep_ms},
                          {"network_ms", r.network_ms},
                          {"cluster_ms", r.cluster_ms}});
    }
    const double n = static_cast<double>(seq.size());
    json timing{{"frames", frames},
                {"mean_network_ms", net / n},
                {"mean_cluster_ms", clu / n},
                {"peak_rss_kb", peak_rss_kb()},
                {"cluster_branch", cfg.model.use_cluster},
                {"mtf", cfg.model.use_mtf}};
    write_text(cfg.out / "timing.json", timing.dump(2) + "\n");
    log << "wrote " << seq.size() << " prediction files to " << pred_dir.string() << "\n"
        << "per frame: network processing " << fixed(net / n, 1) << " ms, cluster label generation "
        << fixed(clu / n, 1) << " ms; peak memory " << peak_rss_kb() / 1024 << " MB\n";
}

void cmd_eval(const EvalRequest& req, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto gt = load_data(req.ground_truth);
    const int end = req.end < 0 ? static_cast<int>(gt.size()) : req.end;
    if (req.begin < 0 || end > static_cast<int>(gt.size()) || req.begin >= end) {
        throw UsageError("frame range [" + std::to_string(req.begin) + ", " + std::to_string(end) +
                         ") outside the " + std::to_string(gt.size()) + "-frame dataset");
    }
    const EvalResult main = score(gt, read_predictions(req.predictions, gt, req.begin, end), req.begin);
    std::optional<EvalResult> base;
    if (req.baseline) base = score(gt, read_predictions(*req.baseline, gt, req.begin, end), req.begin);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::string text = "frames " + std::to_string(req.begin) + ".." + std::to_string(end - 1) + "\n";
    text += result_text("predictions " + req.predictions.string(), main);
    json j{{"frames", {req.begin, end}}, {"predictions", result_json(main)}};
    if (base) {
        text += result_text("baseline " + req.baseline->string(), *base);
        const double dc = main.consistency.value_or(0.0) - base->consistency.value_or(0.0);
        text += "difference (predictions - baseline)\n  mIoU        " + fixed(main.sem.miou - base->sem.miou) +
                "\n  IoU_M       " + fixed(main.iou_moving - base->iou_moving) + "\n  consistency " + fixed(dc) +
                "\n";
        j["baseline"] = result_json(*base);
        j["difference"] = {{"miou", main.sem.miou - base->sem.miou},
                           {"iou_moving", main.iou_moving - base->iou_moving},
                           {"consistency", dc}};
    }
    json timings{{"eval_seconds", secs}};
    const fs::path timing_file = req.predictions.parent_path() / "timing.json";
    if (fs::exists(timing_file)) {
        std::ifstream in(timing_file);
        const json t = json::parse(in);
        timings["mean_network_ms"] = t.at("mean_network_ms");
        timings["mean_cluster_ms"] = t.at("mean_cluster_ms");
        text += "inference per frame: network " + fixed(t.at("mean_network_ms").get<double>(), 1) +
                " ms, cluster labels " + fixed(t.at("mean_cluster_ms").get<double>(), 1) + " ms\n";
    }
    j["timings"] = timings;

    fs::create_directories(req.out);
    write_text(req.out / "report.txt", text);
    write_text(req.out / "report.json", j.dump(2) + "\n");
    log << text;
}

void cmd_cluster_labels(const PipelineConfig& cfg, bool have_checkpoint, std::ostream& log) {
    if (!have_checkpoint && !cfg.model.oracle_history) {
        throw UsageError("cluster-labels needs --checkpoint, or --oracle-history to use ground-truth priors");
    }
    const auto seq = load_data(cfg.data);
    ModelConfig model = cfg.model;
    model.use_cluster = true;
    std::optional<ParamStore> store;
    if (have_checkpoint) store = load_checkpoint(cfg);
    fs::create_directories(cfg.out / "coarse");
    fs::create_directories(cfg.out / "clusters");
    static const ClassMap map = ClassMap::semantic_kitti_default();

    SequenceState state;
    std::size_t total = 0;
    for (int t = 0; t < static_cast<int>(seq.size()); ++t) {
        const PreparedFrame pf = prepare_frame(seq, t, model);
        std::vector<CoarseLabel> coarse;
        ClusterSet clusters;
        if (store) {
            Tape tape;
            ParamBinder binder(tape, *store);
            FrameResult r = run_frame(binder, pf, seq, state, model);
            coarse = std::move(r.coarse);
            clusters = std::move(r.clusters);
        } else {
            coarse = cluster_priors(pf, seq, state, model, map);
            clusters = cluster_frame(pf, coarse, model);
        }
        std::vector<std::int32_t> c(pf.raw_count), k(pf.raw_count);
        for (std::size_t i = 0; i < pf.raw_count; ++i) {
            const auto rep = pf.ds.voxel_of[pf.current_begin + static_cast<std::int64_t>(i)];
            c[i] = static_cast<std::int32_t>(coarse[rep]);
            k[i] = clusters.assignment[rep];
        }
        io::write_int32(cfg.out / "coarse" / (frame_name(t) + ".coarse"), c);
        io::write_int32(cfg.out / "clusters" / (frame_name(t) + ".cluster"), k);
        total += static_cast<std::size_t>(clusters.num_clusters());
    }
    log << "wrote coarse priors and cluster ids for " << seq.size() << " frames (" << total
        << " clusters) to " << cfg.out.string() << "\n";
}

}  // namespace cseg::app
