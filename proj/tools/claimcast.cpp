// claimcast command-line front door: generate -> featurize -> train ->
// score -> evaluate, plus the all-in-one benchmark. One config file
// drives every stage; see configs/default.cfg for the schema.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "claimcast/config.hpp"
#include "claimcast/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool quiet = false;
};

void add_common(CLI::App* sub, CommonArgs& args, CLI::Option*& seed_opt) {
    sub->add_option("--config", args.config_path, "Run configuration file")->required();
    sub->add_option("--out", args.out_dir, "Override the configured output directory");
    seed_opt = sub->add_option("--seed", args.seed,
                               "Master seed override: resets the generation seed and any derived "
                               "sampling/training seeds not pinned in the config");
    sub->add_flag("--quiet", args.quiet, "Suppress progress output");
}

// Exit codes: 0 success, 1 config error, 2 calibration failure,
// 3 data/validation error, 4 training error, 5 evaluation error,
// 6 I/O error, 70 unexpected failure.
int dispatch(const std::string& action, const CommonArgs& args, bool seed_given) {
    std::ostream* log = args.quiet ? nullptr : &std::cout;
    try {
        claimcast::RunConfig cfg = claimcast::load_run_config(args.config_path);
        if (seed_given) cfg.apply_master_seed(args.seed);
        if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;

        if (action == "generate")
            claimcast::run_generate(cfg, log);
        else if (action == "featurize")
            claimcast::run_featurize(cfg, log);
        else if (action == "train")
            claimcast::run_train(cfg, log);
        else if (action == "score")
            claimcast::run_score(cfg, log);
        else if (action == "evaluate")
            claimcast::run_evaluate(cfg, log);
        else if (action == "benchmark")
            claimcast::run_benchmark(cfg, log);
        return 0;
    } catch (const claimcast::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const claimcast::CalibrationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const claimcast::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const claimcast::TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const claimcast::EvalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const claimcast::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 70;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"claimcast: time-bucketed claims features vs count baselines on a temporal holdout"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string action;
    bool seed_given = false;
    const char* subcommands[] = {"generate", "featurize", "train", "score", "evaluate", "benchmark"};
    const char* descriptions[] = {
        "Generate a synthetic claims panel (events.jsonl, patients.jsonl, manifest.json)",
        "Write training and scoring feature matrices as CSV for the configured mode",
        "Train a classifier for the configured mode and save model_<mode>.json",
        "Score the untreated-at-split cohort with a saved model",
        "Evaluate saved scores: top-K hit counts, accuracy curve CSV/SVG",
        "Run all three feature modes end to end and report pairwise improvements"};

    for (std::size_t i = 0; i < 6; ++i) {
        CLI::App* sub = app.add_subcommand(subcommands[i], descriptions[i]);
        CLI::Option* sub_seed = nullptr;
        add_common(sub, args, sub_seed);
        sub->callback([&action, &seed_given, i, sub_seed, &subcommands] {
            action = subcommands[i];
            seed_given = sub_seed->count() > 0;
        });
    }

    CLI11_PARSE(app, argc, argv);
    if (action.empty()) return 0;
    return dispatch(action, args, seed_given);
}
