#include <iostream>

#include "CLI11.hpp"
#include "damformer/trainer.hpp"

using namespace damformer;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint;
    int64_t seed = -1;
    int threads = 0;
};

RunConfig load_run(const CommonArgs& args) {
    RunConfig run =
        args.config_path.empty() ? RunConfig() : RunConfig::from_file(args.config_path);
    if (args.seed >= 0) run.seed = static_cast<uint64_t>(args.seed);
    if (!args.out_dir.empty()) run.out_dir = args.out_dir;
    if (args.threads > 0) run.threads = args.threads;
    run.validate();
    return run;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_checkpoint) {
    cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)")
        ->required();
    cmd->add_option("--seed", args.seed, "override the configured seed");
    cmd->add_option("--out", args.out_dir, "override the configured output directory");
    cmd->add_option("--threads", args.threads, "override the configured worker count");
    if (needs_checkpoint)
        cmd->add_option("--checkpoint", args.checkpoint, "DFW1 checkpoint to load")->required();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DamFormer: dual-task siamese transformer for building damage assessment"};
    app.require_subcommand(1);

    CommonArgs args;
    CLI::App* synth_cmd = app.add_subcommand("synth", "write the synthetic dataset as DFR1 files");
    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write checkpoints");
    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the eval split");
    CLI::App* predict_cmd =
        app.add_subcommand("predict", "write predicted masks (PGM + palette PPM)");
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "f64 finite-difference check of the full model");
    add_common(synth_cmd, args, false);
    add_common(train_cmd, args, false);
    add_common(eval_cmd, args, true);
    add_common(predict_cmd, args, true);
    add_common(gradcheck_cmd, args, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        RunConfig run = load_run(args);
        if (*synth_cmd) {
            synth_write(run, run.out_dir);
        } else if (*train_cmd) {
            TrainResult result = train(run);
            std::cout << "trained " << result.steps_run << " steps, final loss "
                      << result.final_loss << ", checkpoint " << result.checkpoint_path.string()
                      << "\n";
        } else if (*eval_cmd) {
            MetricsReport report = evaluate(run, args.checkpoint);
            std::cout << report.key_values() << report.table();
        } else if (*predict_cmd) {
            predict(run, args.checkpoint, run.out_dir);
        } else if (*gradcheck_cmd) {
            const double worst = gradcheck(run);
            if (worst >= 1e-4) {
                std::cerr << "gradcheck FAILED: max relative error " << worst << " >= 1e-4\n";
                return 3;
            }
            std::cout << "gradcheck passed: max relative error " << worst << " < 1e-4\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
