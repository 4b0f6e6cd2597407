#include "cseg/config.hpp"

#include "cseg/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>

namespace cseg {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("not a number: '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("not a boolean: '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

struct Field {
    std::function<void(PipelineConfig&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
    const char* help;
};

// Member accessors through lambdas keep the table flat and readable.
#define CSEG_INT(key, expr, help)                                                                         \
    {                                                                                                     \
        key, Field {                                                                                      \
            [](PipelineConfig& c, const std::string& v) { expr = parse_number<std::int64_t>(v); },        \
                [](const PipelineConfig& c) { return std::to_string(expr); }, help                        \
        }                                                                                                 \
    }
#define CSEG_U64(key, expr, help)                                                                         \
    {                                                                                                     \
        key, Field {                                                                                      \
            [](PipelineConfig& c, const std::string& v) { expr = parse_number<std::uint64_t>(v); },       \
                [](const PipelineConfig& c) { return std::to_string(expr); }, help                        \
        }                                                                                                 \
    }
#define CSEG_REAL(key, expr, help)                                                                        \
    {                                                                                                     \
        key, Field {                                                                                      \
            [](PipelineConfig& c, const std::string& v) { expr = parse_number<double>(v); },              \
                [](const PipelineConfig& c) { return fmt(expr); }, help                                   \
        }                                                                                                 \
    }
#define CSEG_BOOL(key, expr, help)                                                                        \
    {                                                                                                     \
        key, Field {                                                                                      \
            [](PipelineConfig& c, const std::string& v) { expr = parse_bool(v); },                        \
                [](const PipelineConfig& c) { return std::string((expr) ? "true" : "false"); }, help      \
        }                                                                                                 \
    }
#define CSEG_PATH(key, expr, help)                                                                        \
    {                                                                                                     \
        key, Field {                                                                                      \
            [](PipelineConfig& c, const std::string& v) { expr = v; },                                    \
                [](const PipelineConfig& c) { return (expr).string(); }, help                             \
        }                                                                                                 \
    }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        CSEG_U64("seed", c.seed, "dataset seed"),
        CSEG_INT("frames", c.frames, "frames generated by synth"),
        {"scenario",
         Field{[](PipelineConfig& c, const std::string& v) {
                   if (v == "default") {
                       c.scenario = Scenario::Default;
                   } else if (v == "truncation") {
                       c.scenario = Scenario::Truncation;
                   } else {
                       throw ConfigError("expected default or truncation, got '" + v + "'");
                   }
               },
               [](const PipelineConfig& c) {
                   return std::string(c.scenario == Scenario::Default ? "default" : "truncation");
               },
               "synthetic scene: default | truncation"}},
        CSEG_U64("model.seed", c.model_seed, "parameter initialisation seed"),
        CSEG_INT("model.d", c.model.backbone.d, "feature width D"),
        CSEG_INT("model.layers", c.model.backbone.layers, "backbone plane-mixing layers L"),
        CSEG_INT("model.k", c.model.backbone.k, "neighbours in the local embedding"),
        CSEG_REAL("model.rho", c.model.backbone.rho, "backbone plane cell size, m"),
        CSEG_INT("model.max_cells", c.model.backbone.max_cells, "backbone grid cap per side"),
        CSEG_INT("history", c.model.history, "past scans stacked with the current one (N)"),
        CSEG_INT("stride", c.model.stride, "frame step between stacked scans"),
        CSEG_REAL("voxel", c.model.voxel, "downsampling voxel, m"),
        CSEG_REAL("transfer.nonground_cell", c.model.transfer.nonground_cell[0],
                  "label transfer non-ground voxel edge, m (cubic)"),
        CSEG_REAL("transfer.ground_cell_xy", c.model.transfer.ground_cell[0], "label transfer ground voxel x/y, m"),
        CSEG_REAL("transfer.ground_cell_z", c.model.transfer.ground_cell[2], "label transfer ground voxel z, m"),
        CSEG_REAL("dbscan.eps", c.model.dbscan_eps, "DBSCAN radius, m"),
        CSEG_INT("dbscan.min_pts", c.model.dbscan_min_pts, "DBSCAN core threshold, self included"),
        CSEG_REAL("mtf.rho", c.model.mtf.rho, "MTF plane cell size, m"),
        CSEG_INT("mtf.max_cells", c.model.mtf.max_cells, "MTF grid cap per side"),
        {"mtf.mode",
         Field{[](PipelineConfig& c, const std::string& v) {
                   if (v == "residual") {
                       c.model.mtf.mode = FuseMode::Residual;
                   } else if (v == "replace") {
                       c.model.mtf.mode = FuseMode::Replace;
                   } else {
                       throw ConfigError("expected residual or replace, got '" + v + "'");
                   }
               },
               [](const PipelineConfig& c) {
                   return std::string(c.model.mtf.mode == FuseMode::Residual ? "residual" : "replace");
               },
               "MTF output: residual | replace"}},
        CSEG_INT("tce.k_nn", c.model.tce.k_nn, "cluster neighbours in attention"),
        CSEG_INT("tce.groups", c.model.tce.groups, "attention groups h"),
        CSEG_BOOL("use_mtf", c.model.use_mtf, "temporal feature fusion on"),
        CSEG_BOOL("use_cluster", c.model.use_cluster, "cluster branch on"),
        CSEG_BOOL("oracle_history", c.model.oracle_history, "label transfer from ground truth"),
        CSEG_INT("train.epochs_stage1", c.train.epochs_stage1, "stage-1 epochs"),
        CSEG_INT("train.epochs_stage2", c.train.epochs_stage2, "stage-2 epochs"),
        CSEG_REAL("train.lr", c.train.adam.lr, "AdamW learning rate"),
        CSEG_REAL("train.weight_decay", c.train.adam.weight_decay, "AdamW decoupled weight decay"),
        CSEG_REAL("train.beta1", c.train.adam.beta1, "AdamW beta1"),
        CSEG_REAL("train.beta2", c.train.adam.beta2, "AdamW beta2"),
        CSEG_REAL("train.eps", c.train.adam.eps, "AdamW epsilon"),
        CSEG_INT("train.warmup_steps", c.train.adam.warmup_steps, "linear learning-rate warmup steps"),
        CSEG_INT("train.begin", c.train.train_begin, "first training frame"),
        CSEG_INT("train.end", c.train.train_end, "one past the last training frame"),
        CSEG_INT("val.begin", c.train.val_begin, "first held-out frame"),
        CSEG_INT("val.end", c.train.val_end, "one past the last held-out frame"),
        CSEG_INT("val.warmup", c.train.val_warmup, "unscored frames run before val.begin"),
        CSEG_BOOL("train.augment", c.train.augment, "stage-1 mirror/yaw/scale augmentation"),
        CSEG_REAL("train.yaw_jitter", c.train.yaw_jitter, "augmentation yaw range, rad"),
        CSEG_REAL("train.scale_jitter", c.train.scale_jitter, "augmentation scale range"),
        CSEG_U64("train.seed", c.train.seed, "augmentation seed"),
        CSEG_PATH("data", c.data, "dataset directory"),
        CSEG_PATH("out", c.out, "output directory"),
        CSEG_PATH("checkpoint", c.checkpoint, "checkpoint file"),
        CSEG_INT("threads", c.threads, "worker threads (the pipeline is single-threaded)"),
    };
    return table;
}

#undef CSEG_INT
#undef CSEG_U64
#undef CSEG_REAL
#undef CSEG_BOOL
#undef CSEG_PATH

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid configuration: " + what);
}

}  // namespace

SceneConfig PipelineConfig::scene() const {
    return scenario == Scenario::Default ? default_scene(seed, frames) : truncation_scene(seed, frames);
}

void validate(const PipelineConfig& c) {
    const auto& m = c.model;
    require(c.frames >= 1, "frames must be >= 1");
    require(m.backbone.d >= 1 && m.backbone.layers >= 0 && m.backbone.k >= 1, "model.d, model.layers, model.k");
    require(m.backbone.rho > 0 && m.mtf.rho > 0 && m.voxel > 0, "cell sizes must be positive");
    require(m.backbone.max_cells >= 1 && m.mtf.max_cells >= 1, "max_cells must be >= 1");
    require(m.history >= 0 && m.stride >= 1, "history >= 0 and stride >= 1");
    require(m.transfer.nonground_cell[0] > 0 && m.transfer.ground_cell[0] > 0 && m.transfer.ground_cell[2] > 0,
            "transfer cells must be positive");
    require(m.dbscan_eps > 0 && m.dbscan_min_pts >= 1, "dbscan.eps > 0 and dbscan.min_pts >= 1");
    require(m.tce.k_nn >= 1 && m.tce.groups >= 1 && m.backbone.d % m.tce.groups == 0,
            "tce.k_nn >= 1 and tce.groups dividing model.d");
    require(c.train.epochs_stage1 >= 0 && c.train.epochs_stage2 >= 0, "epoch counts >= 0");
    require(c.train.adam.lr >= 0 && c.train.adam.weight_decay >= 0, "train.lr and train.weight_decay >= 0");
    require(c.train.adam.beta1 >= 0 && c.train.adam.beta1 < 1 && c.train.adam.beta2 >= 0 && c.train.adam.beta2 < 1,
            "betas in [0, 1)");
    require(c.train.train_begin >= 0 && c.train.train_begin < c.train.train_end, "train.begin < train.end");
    require(c.train.val_begin >= 0 && c.train.val_begin < c.train.val_end, "val.begin < val.end");
    require(c.train.val_warmup >= 0, "val.warmup >= 0");
    require(c.threads >= 1, "threads >= 1");
}

PipelineConfig parse_config(std::istream& in, const std::string& origin) {
    PipelineConfig cfg;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = fields().find(key);
        if (it == fields().end()) throw ConfigError(where + "unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
        try {
            it->second.set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
    }
    // The non-ground transfer cell is cubic; the ground cell shares x and y.
    cfg.model.transfer.nonground_cell.fill(cfg.model.transfer.nonground_cell[0]);
    cfg.model.transfer.ground_cell[1] = cfg.model.transfer.ground_cell[0];
    validate(cfg);
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_config(in, path.string());
}

void write_config(std::ostream& out, const PipelineConfig& cfg) {
    for (const auto& [key, f] : fields()) out << key << " = " << f.get(cfg) << "  # " << f.help << "\n";
}

}  // namespace cseg
