// SPDX-License-Identifier: Apache-2.0
//
// Command-line harness: train, eval, infer, summary, synth. Exit codes:
// 0 success, 1 validation error (bad flags, bad config, mismatched
// checkpoint), 2 runtime failure (unreadable files, I/O). Errors print one
// machine-parsable stderr line: ERROR:<exit-code>:<message>.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glformer/config.hpp"
#include "glformer/data.hpp"
#include "glformer/errors.hpp"
#include "glformer/metrics.hpp"
#include "glformer/runtime.hpp"

namespace {

struct TrainArgs {
    std::string config, data_dir, out_dir, resume;
    std::int64_t seed = 0;
    bool seed_given = false;
};

struct EvalArgs {
    std::string checkpoint, data_dir, report_out;
};

struct SummaryArgs {
    std::string config;
    int input_size = 0;
    bool json = false;
};

struct SynthArgs {
    int n = 16;
    int size = 96;
    std::uint64_t seed = 7;
    std::string out_dir;
};

struct InferArgs {
    std::string checkpoint, out_dir;
    std::vector<std::string> inputs;
};

int run_train(const TrainArgs& a) {
    glformer::Config cfg = glformer::load_config(a.config);
    if (a.seed_given) cfg.train.seed = a.seed;
    glformer::runtime::TrainOptions opts;
    opts.data_dir = a.data_dir;
    opts.out_dir = a.out_dir;
    opts.seed = static_cast<std::uint64_t>(cfg.train.seed);
    opts.resume = a.resume;
    glformer::runtime::train(cfg, opts);
    std::cout << "trained through epoch " << cfg.train.epochs << "; checkpoints and train_log.csv under "
              << a.out_dir << "\n";
    return 0;
}

int run_eval(const EvalArgs& a) {
    const auto report = glformer::runtime::evaluate(a.checkpoint, a.data_dir, a.report_out);
    std::cout << glformer::metrics::report_json(report) << "\n";
    return 0;
}

int run_summary(const SummaryArgs& a) {
    glformer::ModelConfig cfg =
        a.config.empty() ? glformer::default_paper_config() : glformer::load_config(a.config).model;
    if (a.input_size > 0) cfg.input_h = cfg.input_w = a.input_size;
    const auto report = glformer::runtime::budget_audit(cfg);
    std::cout << (a.json ? report.json() + "\n" : report.table());
    return 0;
}

int run_synth(const SynthArgs& a) {
    glformer::data::synth_dataset(a.n, a.size, a.seed, a.out_dir);
    std::cout << "wrote " << a.n << " image/mask pairs (train + mirrored test split) under "
              << a.out_dir << "\n";
    return 0;
}

int run_infer(const InferArgs& a) {
    glformer::runtime::infer(a.checkpoint, a.inputs, a.out_dir);
    std::cout << "wrote " << a.inputs.size() << " predictions under " << a.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pyramid transformer for optical remote-sensing object segmentation", "glformer"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train a model and write per-epoch checkpoints");
    train->add_option("--config", train_args.config, "Config file (key = value lines)")
        ->required();
    train->add_option("--data-dir", train_args.data_dir,
                      "Dataset root containing train/images and train/masks")
        ->required();
    train->add_option("--out-dir", train_args.out_dir,
                      "Output directory for checkpoints and train_log.csv")
        ->required();
    auto* seed_opt =
        train->add_option("--seed", train_args.seed, "Override the config's training seed");
    train->add_option("--resume", train_args.resume,
                      "Checkpoint to resume from (continues at its next epoch)");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on the test split of a dataset");
    eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint to evaluate")->required();
    eval->add_option("--data-dir", eval_args.data_dir,
                     "Dataset root containing test/images and test/masks")
        ->required();
    eval->add_option("--report-out", eval_args.report_out,
                     "Directory for predictions/, report.json and report.csv")
        ->required();

    SummaryArgs summary_args;
    auto* summary =
        app.add_subcommand("summary", "Report parameter counts and operation counts per section");
    summary->add_option("--config", summary_args.config,
                        "Config file (omit for the reference architecture)");
    summary->add_option("--input-size", summary_args.input_size,
                        "Square input size for the audit (0 = config size)");
    summary->add_flag("--json", summary_args.json, "Emit the report as JSON");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic shape-segmentation dataset");
    synth->add_option("--n", synth_args.n, "Number of image/mask pairs");
    synth->add_option("--size", synth_args.size, "Square image size in pixels");
    synth->add_option("--seed", synth_args.seed, "Generator seed");
    synth->add_option("--out-dir", synth_args.out_dir, "Dataset root to create")->required();

    InferArgs infer_args;
    auto* infer = app.add_subcommand("infer", "Predict foreground probability maps for images");
    infer->add_option("--checkpoint", infer_args.checkpoint, "Checkpoint to load")->required();
    infer
        ->add_option("--input", infer_args.inputs,
                     "Input image (repeatable; one PNG is written per input)")
        ->required();
    infer->add_option("--out-dir", infer_args.out_dir, "Directory for prediction PNGs")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "ERROR:1:" << e.what() << std::endl;
        return 1;
    }
    train_args.seed_given = seed_opt->count() > 0;

    try {
        if (train->parsed()) return run_train(train_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (summary->parsed()) return run_summary(summary_args);
        if (synth->parsed()) return run_synth(synth_args);
        if (infer->parsed()) return run_infer(infer_args);
        std::cerr << "ERROR:1:no subcommand given" << std::endl;
        return 1;
    } catch (const glformer::ValidationError& e) {
        std::cerr << "ERROR:1:" << e.what() << std::endl;
        return 1;
    } catch (const glformer::RuntimeFailure& e) {
        std::cerr << "ERROR:2:" << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ERROR:2:" << e.what() << std::endl;
        return 2;
    }
}
