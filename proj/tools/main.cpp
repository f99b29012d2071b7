// Command-line tool for the ultrasound-to-speech-parameter regression
// workbench: corpus synthesis, training, evaluation, stride sweeps, and
// parameter audits. Config files are plain key=value text; every flag
// overrides its file counterpart, and each run echoes the fully resolved
// config into its output directory so it can be reproduced exactly.

#include <exception>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "ssi/errors.hpp"
#include "ssi/harness.hpp"

namespace {

using ssi::harness::KvMap;

/// Collects CLI flags as strings so all value parsing and validation lives
/// in one place (the harness resolvers). Only flags the user actually
/// passed enter the overlay map, which is what makes flag-over-file work.
class FlagSet {
public:
    explicit FlagSet(CLI::App* cmd) : cmd_(cmd) {}

    void option(const std::string& flag, const std::string& key, const std::string& help) {
        values_.push_back(std::make_unique<std::string>());
        options_.emplace_back(cmd_->add_option(flag, *values_.back(), help), key);
    }

    void flag(const std::string& flag, const std::string& key, const std::string& help) {
        // A bare --tiny means true; --tiny=false is accepted too.
        values_.push_back(std::make_unique<std::string>());
        CLI::Option* opt = cmd_->add_option(flag, *values_.back(), help);
        opt->expected(0, 1);
        options_.emplace_back(opt, key);
        defaults_true_.insert(key);
    }

    /// Entries for every flag the user passed, in registration order.
    KvMap overlay() const {
        KvMap kv;
        for (std::size_t i = 0; i < options_.size(); ++i) {
            const auto& [opt, key] = options_[i];
            if (opt->count() == 0) continue;
            std::string value = *values_[i];
            if (value.empty() && defaults_true_.count(key)) value = "true";
            kv.set(key, value);
        }
        return kv;
    }

private:
    CLI::App* cmd_;
    std::vector<std::unique_ptr<std::string>> values_;
    std::vector<std::pair<CLI::Option*, std::string>> options_;
    std::set<std::string> defaults_true_;
};

struct Command {
    CLI::App* app = nullptr;
    FlagSet flags;
    std::string config_path;
    std::string out_dir;

    explicit Command(CLI::App* a) : app(a), flags(a) {
        app->add_option("--config", config_path, "key=value config file");
    }

    void with_out() { app->add_option("--out", out_dir, "output directory"); }

    /// File values overridden by whichever flags were passed.
    KvMap merged() const {
        KvMap file;
        if (!config_path.empty()) file = KvMap::load(config_path);
        return file.merged_with(flags.overlay());
    }
};

void add_common(Command& cmd) {
    cmd.flags.option("--seed", "seed", "RNG seed");
    cmd.flags.option("--threads", "threads", "worker threads (sweep only)");
}

void add_model_flags(Command& cmd) {
    cmd.flags.option("--model", "model", "fcn, cnn2d, or cnn3d");
    cmd.flags.option("--s", "s", "temporal stride (cnn3d only)");
    cmd.flags.option("--mode", "mode", "sampled or full_window (cnn3d only)");
    cmd.flags.flag("--tiny", "tiny", "compact variant for quick experiments");
}

void add_train_flags(Command& cmd) {
    cmd.flags.option("--manifest", "manifest", "dataset manifest (TSV)");
    cmd.flags.option("--out-h", "out_h", "working frame height after resampling");
    cmd.flags.option("--batch-size", "batch_size", "mini-batch size");
    cmd.flags.option("--lr", "learning_rate", "initial learning rate");
    cmd.flags.option("--patience", "patience_epochs", "epochs without dev improvement "
                                                      "before halving the rate");
    cmd.flags.option("--max-halvings", "max_halvings", "learning-rate halvings before stopping");
    cmd.flags.option("--max-epochs", "max_epochs", "epoch budget");
}

int run(int argc, char** argv) {
    CLI::App app{"ultrasound-to-speech-parameter regression workbench"};
    app.require_subcommand(1);

    Command synth(app.add_subcommand("synth", "generate a synthetic corpus"));
    synth.with_out();
    add_common(synth);
    synth.flags.flag("--tiny", "tiny", "32x16 frames with a proportionally smaller blob");
    synth.flags.option("--train-sequences", "train_sequences", "training sequences");
    synth.flags.option("--dev-sequences", "dev_sequences", "development sequences");
    synth.flags.option("--test-sequences", "test_sequences", "test sequences");
    synth.flags.option("--frames", "frames", "frames per sequence");
    synth.flags.option("--frame-h", "frame_h", "frame height in pixels");
    synth.flags.option("--frame-w", "frame_w", "frame width in pixels");
    synth.flags.option("--blob-sigma", "blob_sigma", "Gaussian blob radius in pixels");
    synth.flags.option("--smoothing-window", "smoothing_window",
                       "latent moving-average window (odd)");
    synth.flags.option("--noise-std", "noise_std", "additive pixel noise level");
    synth.flags.option("--velocity-weight", "velocity_weight",
                       "velocity share of the targets, in [0, 1]");
    synth.flags.option("--fps", "fps", "frame rate stored in the containers");

    Command train(app.add_subcommand("train", "train a model and write a checkpoint"));
    train.with_out();
    add_common(train);
    add_model_flags(train);
    add_train_flags(train);

    Command eval(app.add_subcommand("eval", "evaluate a checkpoint on one split"));
    eval.with_out();
    add_common(eval);
    eval.flags.option("--checkpoint", "checkpoint", "checkpoint file from a training run");
    eval.flags.option("--manifest", "manifest", "dataset manifest (TSV)");
    eval.flags.option("--split", "split", "train, dev, or test");
    eval.flags.option("--stats", "stats", "preprocessing statistics file "
                                          "(default: stats.txt beside the checkpoint)");
    eval.flags.option("--batch-size", "batch_size", "evaluation batch size");

    Command sweep(app.add_subcommand("sweep", "train cnn3d across strides plus a cnn2d "
                                              "baseline and tabulate the results"));
    sweep.with_out();
    add_common(sweep);
    sweep.flags.option("--s-values", "s_values", "comma-separated strides, e.g. 1,2,3");
    sweep.flags.option("--mode", "mode", "sampled or full_window");
    sweep.flags.flag("--tiny", "tiny", "compact variant for quick experiments");
    add_train_flags(sweep);

    Command params(app.add_subcommand("params", "print the per-layer parameter table"));
    add_common(params);
    add_model_flags(params);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (synth.app->parsed())
        ssi::harness::cmd_synth(ssi::harness::resolve_synth(synth.merged()), synth.out_dir,
                                std::cout);
    else if (train.app->parsed())
        ssi::harness::cmd_train(ssi::harness::resolve_train(train.merged()), train.out_dir,
                                std::cout);
    else if (eval.app->parsed())
        ssi::harness::cmd_eval(ssi::harness::resolve_eval(eval.merged()), eval.out_dir,
                               std::cout);
    else if (sweep.app->parsed())
        ssi::harness::cmd_sweep(ssi::harness::resolve_sweep(sweep.merged()), sweep.out_dir,
                                std::cout);
    else if (params.app->parsed())
        ssi::harness::cmd_params(ssi::harness::resolve_params(params.merged()), std::cout);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ssi::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const ssi::ShapeError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const ssi::DataError& e) { // ParseError included
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const ssi::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
}
