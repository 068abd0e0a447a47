#include "dkd/cli.hpp"

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dkd/error.hpp"
#include "dkd/pipeline.hpp"

namespace dkd {

namespace {

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> out_dir;
    std::optional<std::string> init_checkpoint;
};

RunConfig resolve_config(const GlobalOpts& opts) {
    RunConfig cfg = load_run_config(opts.config_path);
    if (opts.seed) {
        cfg.seed = *opts.seed;
        cfg.apply_seed();
    }
    if (opts.threads) cfg.threads = *opts.threads;
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    if (opts.init_checkpoint) cfg.init_checkpoint = *opts.init_checkpoint;
    return cfg;
}

void add_global_opts(CLI::App* cmd, GlobalOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON run config")->required();
    cmd->add_option("--seed", opts.seed, "override the top-level seed");
    cmd->add_option("--threads", opts.threads, "worker threads for scoring/eval");
    cmd->add_option("--out-dir", opts.out_dir, "override the output directory");
    cmd->add_option("--init-checkpoint", opts.init_checkpoint,
                    "warm-start student checkpoint for distill");
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Dense-retrieval knowledge distillation with dark examples"};
    app.require_subcommand(1);

    GlobalOpts opts;
    std::vector<std::size_t> m_values;

    CLI::App* gen = app.add_subcommand("gen-synth", "generate a synthetic benchmark");
    CLI::App* ingest = app.add_subcommand("ingest", "validate and import external data files");
    CLI::App* teacher = app.add_subcommand("train-teacher", "train the cross-encoder teacher");
    CLI::App* conf = app.add_subcommand("score-confidence",
                                        "teacher confidence per training instance");
    CLI::App* distill = app.add_subcommand("distill", "train the dual-encoder student");
    CLI::App* eval = app.add_subcommand("eval", "brute-force retrieval metrics");
    CLI::App* hist = app.add_subcommand("export-hist", "teacher score histogram CSV");
    CLI::App* sweep = app.add_subcommand("sweep-m", "pipeline sweep over negative counts");
    CLI::App* pipe = app.add_subcommand("pipeline",
                                        "gen/train-teacher/score-confidence/distill/eval");
    for (CLI::App* cmd : {gen, ingest, teacher, conf, distill, eval, hist, sweep, pipe}) {
        add_global_opts(cmd, opts);
    }
    sweep->add_option("--m-values", m_values, "negative counts to sweep")
        ->delimiter(',')
        ->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error (usage): " << e.what() << '\n';
        return 2;
    }

    try {
        RunConfig cfg = resolve_config(opts);
        if (gen->parsed()) cmd_gen_synth(cfg);
        else if (ingest->parsed()) cmd_ingest(cfg);
        else if (teacher->parsed()) cmd_train_teacher(cfg);
        else if (conf->parsed()) cmd_score_confidence(cfg);
        else if (distill->parsed()) cmd_distill(cfg);
        else if (eval->parsed()) cmd_eval(cfg);
        else if (hist->parsed()) cmd_export_hist(cfg);
        else if (sweep->parsed()) cmd_sweep_m(cfg, m_values);
        else if (pipe->parsed()) cmd_pipeline(cfg);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace dkd
