#pragma once

// Experiment harness behind the command-line tool: resolves key=value run
// configurations (file values overridden by flags), echoes the resolved
// config next to the artifacts it produced so every run can be reproduced
// from its own output directory, and drives corpus synthesis, training,
// evaluation, stride sweeps, and parameter audits.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssi/model.hpp"
#include "ssi/synth.hpp"
#include "ssi/train.hpp"

namespace ssi::harness {

// ---------------------------------------------------------------------------
// Key=value config store
// ---------------------------------------------------------------------------

/// Ordered key=value store behind config files and config echoes. Keys are
/// unique; insertion order is preserved so echoes are byte-stable.
class KvMap {
public:
    /// Inserts or overwrites.
    void set(const std::string& key, std::string value);

    /// nullptr when the key is absent.
    const std::string* find(const std::string& key) const;
    bool contains(const std::string& key) const { return find(key) != nullptr; }

    std::size_t size() const { return items_.size(); }
    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

    /// This map with every entry of `over` applied on top (flag-over-file).
    KvMap merged_with(const KvMap& over) const;

    /// key=value lines in insertion order.
    void write(std::ostream& out) const;
    void save(const std::string& path) const;

    /// Parses key=value lines. '#' comment lines and blank lines are
    /// skipped; whitespace around keys and values is trimmed. Malformed or
    /// duplicate lines raise ParseError with the line's byte offset.
    static KvMap parse(std::istream& in);
    static KvMap load(const std::string& path); // DataError when unreadable

private:
    std::vector<std::pair<std::string, std::string>> items_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Resolved per-command options
// ---------------------------------------------------------------------------
// Each resolve_* validates its merged key=value view, rejects unknown keys
// and cross-model conflicts (UsageError, before any data is touched), and
// returns both the typed options and the canonical echo map. The echo holds
// only keys the command consumed, with fully resolved values, so re-running
// from it reproduces the run without tripping conflict checks.

struct SynthOptions {
    SynthConfig config;
    KvMap echo;
};
SynthOptions resolve_synth(const KvMap& merged);

struct TrainOptions {
    ModelSpec spec;
    std::string manifest;
    std::size_t out_h = 128; // working frame height after scanline resampling
    TrainConfig train;
    KvMap echo;
};
TrainOptions resolve_train(const KvMap& merged);

struct EvalOptions {
    std::string checkpoint;
    std::string manifest;
    std::string stats_path; // preprocessing statistics fitted at training time
    std::string split = "dev";
    std::size_t batch_size = 100;
    KvMap echo;
};
EvalOptions resolve_eval(const KvMap& merged);

struct SweepOptions {
    std::vector<int> s_values;
    TemporalMode mode = TemporalMode::kSampled;
    bool tiny = false;
    std::string manifest;
    std::size_t out_h = 128;
    TrainConfig train;
    int threads = 1;
    KvMap echo;
};
SweepOptions resolve_sweep(const KvMap& merged);

struct ParamsOptions {
    ModelSpec spec;
};
ParamsOptions resolve_params(const KvMap& merged);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// key=value metrics report (split, n_examples, mse, mean_r2, r2_0..r2_12),
/// doubles rendered so they round-trip exactly.
void write_metrics(const MetricsReport& report, std::ostream& out);

/// One sweep result. s == 0 marks the 2D baseline row.
struct SweepRow {
    int s = 0;
    std::string label;           // "cnn2d" or "s=<k>"
    std::size_t param_count = 0; // from the model spec, available even on failure
    bool ok = false;
    double dev_mse = 0.0;  // valid when ok
    double test_mse = 0.0; // valid when ok
    double mean_r2 = 0.0;  // test split, valid when ok
    std::string status;    // "ok" or a sanitized error message
};

/// CSV with header s,dev_mse,test_mse,mean_r2,param_count,status; failed
/// rows leave the metric fields empty.
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------
// Progress goes to `log` (stdout in the CLI). Errors propagate as the
// exception taxonomy the CLI maps to exit codes.

/// Generates a corpus into out_dir and echoes the resolved config there.
CorpusLayout cmd_synth(const SynthOptions& opt, const std::string& out_dir, std::ostream& log);

struct TrainOutcome {
    TrainHistory history;
    MetricsReport dev;
    std::size_t param_count = 0;
};

/// Loads the manifest, fits preprocessing on the train split, trains, and
/// writes config.txt, stats.txt, checkpoint.bin, history.csv, and
/// metrics_dev.txt into out_dir. Nothing is written until the data has
/// loaded, so a bad manifest leaves no partial outputs.
TrainOutcome cmd_train(const TrainOptions& opt, const std::string& out_dir, std::ostream& log);

/// Evaluates a checkpoint on one split using the stored preprocessing
/// statistics (never refits). Prints the report; when out_dir is non-empty
/// also writes config.txt and metrics_<split>.txt there.
MetricsReport cmd_eval(const EvalOptions& opt, const std::string& out_dir, std::ostream& log);

/// Trains the 2D baseline plus one 3D model per stride under identical
/// seeds and hyperparameters, each in its own subdirectory of out_dir, and
/// writes sweep.csv. Individual run failures are recorded in their row and
/// the sweep continues. threads > 1 runs the independent trainings
/// concurrently; outputs are byte-identical either way.
std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, const std::string& out_dir,
                                std::ostream& log);

/// Prints the per-layer table (kernel/stride/padding, output shape, weight
/// count) and the exact total parameter count.
void cmd_params(const ParamsOptions& opt, std::ostream& log);

} // namespace ssi::harness
