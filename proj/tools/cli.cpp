#include "commands.hpp"

#include "cseg/errors.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <ostream>
#include <sstream>

namespace cseg::app {
namespace fs = std::filesystem;

namespace {

// "a:b" -> [a, b)
std::pair<int, int> parse_range(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw UsageError("--frames expects begin:end, got '" + s + "'");
    auto num = [&](std::string_view v) {
        int x = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        if (ec != std::errc{} || p != v.data() + v.size()) throw UsageError("--frames: bad number in '" + s + "'");
        return x;
    };
    return {num(std::string_view(s).substr(0, colon)), num(std::string_view(s).substr(colon + 1))};
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Temporal point cloud segmentation with cluster labels"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::string config_path, data, out_dir, checkpoint;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool no_cluster = false, no_mtf = false, oracle = false;
    app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "dataset seed (overrides config)");
    app.add_option("--threads", threads, "worker threads");
    app.add_option("--data", data, "dataset directory");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--checkpoint", checkpoint, "checkpoint file");
    app.add_flag("--disable-cluster-branch", no_cluster, "point branch only");
    app.add_flag("--disable-mtf", no_mtf, "no temporal feature fusion");
    app.add_flag("--oracle-history", oracle, "label transfer from ground truth");

    auto* synth = app.add_subcommand("synth", "write a synthetic labelled sequence to --data");
    auto* train = app.add_subcommand("train", "two-stage training on --data");
    bool resume = false;
    int stop_after = -1;
    train->add_flag("--resume", resume, "continue from --checkpoint");
    train->add_option("--stop-after", stop_after, "run at most this many epochs, then save and exit");
    auto* infer = app.add_subcommand("infer", "predict every frame of --data");
    auto* eval = app.add_subcommand("eval", "score predictions against --data");
    std::string pred, baseline, frames;
    eval->add_option("--pred", pred, "prediction directory (default <out>/predictions)");
    eval->add_option("--baseline", baseline, "second prediction directory to compare");
    eval->add_option("--frames", frames, "scored frame range begin:end");
    auto* clusters = app.add_subcommand("cluster-labels", "write coarse priors and cluster ids");
    for (auto* sub : {synth, train, infer, eval, clusters}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        if (!data.empty()) cfg.data = data;
        if (!out_dir.empty()) cfg.out = out_dir;
        if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
        if (no_cluster) cfg.model.use_cluster = false;
        if (no_mtf) cfg.model.use_mtf = false;
        if (oracle) cfg.model.oracle_history = true;
        validate(cfg);

        if (synth->parsed()) {
            cmd_synth(cfg, cfg.data, out);
        } else if (train->parsed()) {
            cmd_train(cfg, resume, out, stop_after);
        } else if (infer->parsed()) {
            cmd_infer(cfg, out);
        } else if (eval->parsed()) {
            EvalRequest req;
            req.predictions = pred.empty() ? cfg.out / "predictions" : fs::path(pred);
            req.ground_truth = cfg.data;
            req.out = cfg.out;
            if (!baseline.empty()) req.baseline = baseline;
            if (!frames.empty()) std::tie(req.begin, req.end) = parse_range(frames);
            cmd_eval(req, out);
        } else if (clusters->parsed()) {
            cmd_cluster_labels(cfg, !checkpoint.empty() || fs::exists(cfg.checkpoint), out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace cseg::app
