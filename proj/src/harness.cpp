#include "ssi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <thread>

#include "ssi/data.hpp"
#include "ssi/errors.hpp"
#include "ssi/io.hpp"

namespace fs = std::filesystem;

namespace ssi::harness {

// ---------------------------------------------------------------------------
// KvMap
// ---------------------------------------------------------------------------

void KvMap::set(const std::string& key, std::string value) {
    auto it = index_.find(key);
    if (it != index_.end()) {
        items_[it->second].second = std::move(value);
        return;
    }
    index_.emplace(key, items_.size());
    items_.emplace_back(key, std::move(value));
}

const std::string* KvMap::find(const std::string& key) const {
    auto it = index_.find(key);
    return it == index_.end() ? nullptr : &items_[it->second].second;
}

KvMap KvMap::merged_with(const KvMap& over) const {
    KvMap out = *this;
    for (const auto& [k, v] : over.items_) out.set(k, v);
    return out;
}

void KvMap::write(std::ostream& out) const {
    for (const auto& [k, v] : items_) out << k << '=' << v << '\n';
}

void KvMap::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open config file for writing: " + path);
    write(out);
    out.flush();
    if (!out) throw DataError("failed writing config file: " + path);
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
    return s.substr(b, e - b);
}

} // namespace

KvMap KvMap::parse(std::istream& in) {
    KvMap out;
    std::uint64_t offset = 0;
    std::string line;
    while (std::getline(in, line)) {
        const std::uint64_t line_start = offset;
        offset += line.size() + 1; // getline consumed the '\n'
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line is not key=value: \"" + stripped + "\"", line_start);
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) throw ParseError("config line has an empty key", line_start);
        if (out.contains(key))
            throw ParseError("duplicate config key '" + key + "'", line_start);
        out.set(key, value);
    }
    return out;
}

KvMap KvMap::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file: " + path);
    return parse(in);
}

// ---------------------------------------------------------------------------
// Typed key lookup
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& raw,
                            const std::string& expected) {
    throw UsageError("config key '" + key + "': expected " + expected + ", got \"" + raw + "\"");
}

std::string get_string(const KvMap& kv, const std::string& key, const std::string& fallback) {
    const std::string* raw = kv.find(key);
    return raw ? *raw : fallback;
}

std::string require_string(const KvMap& kv, const std::string& key, const std::string& command) {
    const std::string* raw = kv.find(key);
    if (!raw || raw->empty())
        throw UsageError(command + " requires " + key + "=<value> (or --" + key + ")");
    return *raw;
}

bool get_bool(const KvMap& kv, const std::string& key, bool fallback) {
    const std::string* raw = kv.find(key);
    if (!raw) return fallback;
    if (*raw == "true" || *raw == "1") return true;
    if (*raw == "false" || *raw == "0") return false;
    bad_value(key, *raw, "true or false");
}

std::uint64_t get_u64(const KvMap& kv, const std::string& key, std::uint64_t fallback) {
    const std::string* raw = kv.find(key);
    if (!raw) return fallback;
    if (raw->empty() || (*raw)[0] == '-') bad_value(key, *raw, "an unsigned integer");
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(raw->c_str(), &end, 10);
    if (errno != 0 || end != raw->c_str() + raw->size())
        bad_value(key, *raw, "an unsigned integer");
    return static_cast<std::uint64_t>(v);
}

std::size_t get_size(const KvMap& kv, const std::string& key, std::size_t fallback,
                     std::size_t min_value) {
    const std::uint64_t v = get_u64(kv, key, fallback);
    if (v < min_value)
        bad_value(key, std::to_string(v), "an integer >= " + std::to_string(min_value));
    return static_cast<std::size_t>(v);
}

int get_int(const KvMap& kv, const std::string& key, int fallback, int lo, int hi) {
    const std::string* raw = kv.find(key);
    if (!raw) return fallback;
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(raw->c_str(), &end, 10);
    if (errno != 0 || raw->empty() || end != raw->c_str() + raw->size())
        bad_value(key, *raw, "an integer");
    if (v < lo || v > hi)
        bad_value(key, *raw,
                  "an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return static_cast<int>(v);
}

double get_double(const KvMap& kv, const std::string& key, double fallback) {
    const std::string* raw = kv.find(key);
    if (!raw) return fallback;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(raw->c_str(), &end);
    if (errno != 0 || raw->empty() || end != raw->c_str() + raw->size() || !std::isfinite(v))
        bad_value(key, *raw, "a finite number");
    return v;
}

void check_allowed(const KvMap& kv, const std::string& command,
                   std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : kv.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end())
            throw UsageError("unknown config key '" + key + "' for " + command);
    }
}

std::string bool_word(bool b) { return b ? "true" : "false"; }

} // namespace

// ---------------------------------------------------------------------------
// Resolvers
// ---------------------------------------------------------------------------

SynthOptions resolve_synth(const KvMap& merged) {
    check_allowed(merged, "synth",
                  {"seed", "threads", "tiny", "train_sequences", "dev_sequences",
                   "test_sequences", "frames", "frame_h", "frame_w", "blob_sigma",
                   "smoothing_window", "noise_std", "velocity_weight", "fps"});
    const bool tiny = get_bool(merged, "tiny", false);
    SynthConfig cfg = tiny ? SynthConfig::tiny(1) : SynthConfig{};
    cfg.seed = get_u64(merged, "seed", cfg.seed);
    cfg.train_sequences = get_size(merged, "train_sequences", cfg.train_sequences, 1);
    cfg.dev_sequences = get_size(merged, "dev_sequences", cfg.dev_sequences, 1);
    cfg.test_sequences = get_size(merged, "test_sequences", cfg.test_sequences, 1);
    cfg.frames_per_sequence = get_size(merged, "frames", cfg.frames_per_sequence, 1);
    cfg.frame_h = get_size(merged, "frame_h", cfg.frame_h, 2);
    cfg.frame_w = get_size(merged, "frame_w", cfg.frame_w, 2);
    cfg.blob_sigma = get_double(merged, "blob_sigma", cfg.blob_sigma);
    cfg.smoothing_window = get_size(merged, "smoothing_window", cfg.smoothing_window, 1);
    cfg.noise_std = get_double(merged, "noise_std", cfg.noise_std);
    cfg.velocity_weight = get_double(merged, "velocity_weight", cfg.velocity_weight);
    cfg.fps = static_cast<float>(get_double(merged, "fps", cfg.fps));
    cfg.validate();

    // The echo records concrete values, so the `tiny` shorthand is not kept.
    SynthOptions opt;
    opt.config = cfg;
    opt.echo.set("seed", std::to_string(cfg.seed));
    opt.echo.set("train_sequences", std::to_string(cfg.train_sequences));
    opt.echo.set("dev_sequences", std::to_string(cfg.dev_sequences));
    opt.echo.set("test_sequences", std::to_string(cfg.test_sequences));
    opt.echo.set("frames", std::to_string(cfg.frames_per_sequence));
    opt.echo.set("frame_h", std::to_string(cfg.frame_h));
    opt.echo.set("frame_w", std::to_string(cfg.frame_w));
    opt.echo.set("blob_sigma", io::format_g17(cfg.blob_sigma));
    opt.echo.set("smoothing_window", std::to_string(cfg.smoothing_window));
    opt.echo.set("noise_std", io::format_g17(cfg.noise_std));
    opt.echo.set("velocity_weight", io::format_g17(cfg.velocity_weight));
    opt.echo.set("fps", io::format_g17(static_cast<double>(cfg.fps)));
    return opt;
}

namespace {

/// Shared by train and sweep: optimizer hyperparameters.
TrainConfig resolve_train_config(const KvMap& merged) {
    TrainConfig cfg;
    cfg.batch_size = get_size(merged, "batch_size", cfg.batch_size, 1);
    cfg.learning_rate = get_double(merged, "learning_rate", cfg.learning_rate);
    cfg.patience_epochs = get_int(merged, "patience_epochs", cfg.patience_epochs, 0, 1000000);
    cfg.max_halvings = get_int(merged, "max_halvings", cfg.max_halvings, 0, 1000000);
    cfg.max_epochs = get_size(merged, "max_epochs", cfg.max_epochs, 1);
    cfg.seed = get_u64(merged, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

void echo_train_config(KvMap& echo, const TrainConfig& cfg) {
    echo.set("batch_size", std::to_string(cfg.batch_size));
    echo.set("learning_rate", io::format_g17(cfg.learning_rate));
    echo.set("patience_epochs", std::to_string(cfg.patience_epochs));
    echo.set("max_halvings", std::to_string(cfg.max_halvings));
    echo.set("max_epochs", std::to_string(cfg.max_epochs));
    echo.set("seed", std::to_string(cfg.seed));
}

void reject_cnn3d_keys(const KvMap& merged, const std::string& model) {
    if (merged.contains("s"))
        throw UsageError("config key 's' applies only to model=cnn3d (model is " + model + ")");
    if (merged.contains("mode"))
        throw UsageError("config key 'mode' applies only to model=cnn3d (model is " + model +
                         ")");
}

ModelSpec resolve_model_spec(const KvMap& merged) {
    const std::string model = get_string(merged, "model", "fcn");
    const ModelKind kind = model_kind_from_string(model);
    if (kind != ModelKind::kCnn3d) reject_cnn3d_keys(merged, model);
    const int s = get_int(merged, "s", 1, 1, 1000);
    const TemporalMode mode = temporal_mode_from_string(get_string(merged, "mode", "sampled"));
    const bool tiny = get_bool(merged, "tiny", false);
    return make_model_spec(kind, s, mode, tiny);
}

void echo_model_spec(KvMap& echo, const ModelSpec& spec) {
    echo.set("model", to_string(spec.kind));
    if (spec.kind == ModelKind::kCnn3d) {
        echo.set("s", std::to_string(spec.stride_s));
        echo.set("mode", to_string(spec.temporal_mode));
    }
    echo.set("tiny", bool_word(spec.tiny));
}

} // namespace

TrainOptions resolve_train(const KvMap& merged) {
    check_allowed(merged, "train",
                  {"model", "s", "mode", "tiny", "manifest", "out_h", "batch_size",
                   "learning_rate", "patience_epochs", "max_halvings", "max_epochs", "seed",
                   "threads"});
    TrainOptions opt;
    opt.spec = resolve_model_spec(merged);
    opt.manifest = require_string(merged, "manifest", "train");
    opt.out_h = get_size(merged, "out_h", opt.spec.tiny ? 32 : 128, 2);
    opt.train = resolve_train_config(merged);

    echo_model_spec(opt.echo, opt.spec);
    opt.echo.set("manifest", opt.manifest);
    opt.echo.set("out_h", std::to_string(opt.out_h));
    echo_train_config(opt.echo, opt.train);
    return opt;
}

EvalOptions resolve_eval(const KvMap& merged) {
    check_allowed(merged, "eval",
                  {"checkpoint", "manifest", "split", "stats", "batch_size", "seed", "threads"});
    EvalOptions opt;
    opt.checkpoint = require_string(merged, "checkpoint", "eval");
    opt.manifest = require_string(merged, "manifest", "eval");
    opt.split = get_string(merged, "split", "dev");
    if (opt.split != "train" && opt.split != "dev" && opt.split != "test")
        bad_value("split", opt.split, "train, dev, or test");
    const fs::path beside = fs::path(opt.checkpoint).parent_path() / "stats.txt";
    opt.stats_path = get_string(merged, "stats", beside.string());
    opt.batch_size = get_size(merged, "batch_size", 100, 1);

    opt.echo.set("checkpoint", opt.checkpoint);
    opt.echo.set("manifest", opt.manifest);
    opt.echo.set("split", opt.split);
    opt.echo.set("stats", opt.stats_path);
    opt.echo.set("batch_size", std::to_string(opt.batch_size));
    return opt;
}

SweepOptions resolve_sweep(const KvMap& merged) {
    check_allowed(merged, "sweep",
                  {"s_values", "mode", "tiny", "manifest", "out_h", "batch_size",
                   "learning_rate", "patience_epochs", "max_halvings", "max_epochs", "seed",
                   "threads", "model", "s"});
    if (merged.contains("model"))
        throw UsageError("sweep chooses its own models (cnn2d baseline plus cnn3d per stride); "
                         "'model' is not a sweep key");
    if (merged.contains("s")) throw UsageError("sweep takes 's_values', not 's'");

    SweepOptions opt;
    const std::string raw = require_string(merged, "s_values", "sweep");
    std::stringstream ss(raw);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        const std::string word = trim(piece);
        if (word.empty()) bad_value("s_values", raw, "a comma-separated list of integers >= 1");
        errno = 0;
        char* end = nullptr;
        const long long v = std::strtoll(word.c_str(), &end, 10);
        if (errno != 0 || end != word.c_str() + word.size() || v < 1 || v > 1000)
            bad_value("s_values", raw, "a comma-separated list of integers in [1, 1000]");
        if (std::find(opt.s_values.begin(), opt.s_values.end(), static_cast<int>(v)) !=
            opt.s_values.end())
            bad_value("s_values", raw, "a list without duplicate strides");
        opt.s_values.push_back(static_cast<int>(v));
    }
    if (opt.s_values.empty())
        bad_value("s_values", raw, "a comma-separated list of integers >= 1");

    opt.mode = temporal_mode_from_string(get_string(merged, "mode", "sampled"));
    opt.tiny = get_bool(merged, "tiny", false);
    opt.manifest = require_string(merged, "manifest", "sweep");
    opt.out_h = get_size(merged, "out_h", opt.tiny ? 32 : 128, 2);
    opt.train = resolve_train_config(merged);
    opt.threads = get_int(merged, "threads", 1, 1, 256);

    std::string joined;
    for (std::size_t i = 0; i < opt.s_values.size(); ++i) {
        if (i) joined += ',';
        joined += std::to_string(opt.s_values[i]);
    }
    opt.echo.set("s_values", joined);
    opt.echo.set("mode", to_string(opt.mode));
    opt.echo.set("tiny", bool_word(opt.tiny));
    opt.echo.set("manifest", opt.manifest);
    opt.echo.set("out_h", std::to_string(opt.out_h));
    echo_train_config(opt.echo, opt.train);
    opt.echo.set("threads", std::to_string(opt.threads));
    return opt;
}

ParamsOptions resolve_params(const KvMap& merged) {
    check_allowed(merged, "params", {"model", "s", "mode", "tiny", "seed", "threads"});
    return ParamsOptions{resolve_model_spec(merged)};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

void write_metrics(const MetricsReport& report, std::ostream& out) {
    out << "split=" << report.split << '\n';
    out << "n_examples=" << report.n_examples << '\n';
    out << "mse=" << io::format_g17(report.mse) << '\n';
    out << "mean_r2=" << io::format_g17(report.mean_r2) << '\n';
    out << "degenerate_targets=" << report.degenerate_targets << '\n';
    for (std::size_t j = 0; j < report.r2_per_target.size(); ++j)
        out << "r2_" << j << '=' << io::format_g17(report.r2_per_target[j]) << '\n';
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out << "s,dev_mse,test_mse,mean_r2,param_count,status\n";
    for (const SweepRow& row : rows) {
        out << row.s << ',';
        if (row.ok)
            out << io::format_g17(row.dev_mse) << ',' << io::format_g17(row.test_mse) << ','
                << io::format_g17(row.mean_r2);
        else
            out << ",,";
        out << ',' << row.param_count << ',' << row.status << '\n';
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

void require_out_dir(const std::string& out_dir, const char* command) {
    if (out_dir.empty())
        throw UsageError(std::string(command) + " requires an output directory (--out)");
}

void make_out_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const char* name) {
    return (fs::path(dir) / name).string();
}

template <typename Fn>
void save_text(const std::string& path, Fn&& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path);
    body(out);
    out.flush();
    if (!out) throw DataError("failed writing file: " + path);
}

/// Window/stride/height settings a model expects from the data pipeline.
PipelineConfig pipeline_for(const ModelSpec& spec, std::size_t out_h) {
    PipelineConfig pc;
    pc.out_h = out_h;
    if (spec.kind == ModelKind::kCnn3d) {
        pc.stride_s = static_cast<std::size_t>(spec.stride_s);
        pc.mode = spec.temporal_mode == TemporalMode::kFullWindow ? WindowMode::kFullWindow
                                                                  : WindowMode::kSampled;
    } else {
        pc.stride_s = 1;
        pc.mode = WindowMode::kSingle;
    }
    return pc;
}

void check_example_shape(const Shape& got, const Shape& want) {
    if (got != want)
        throw UsageError("corpus examples have shape " + to_string(got) +
                         " but the model expects " + to_string(want) +
                         "; check out_h, tiny, and the corpus frame size");
}

} // namespace

CorpusLayout cmd_synth(const SynthOptions& opt, const std::string& out_dir, std::ostream& log) {
    require_out_dir(out_dir, "synth");
    CorpusLayout layout = generate_corpus(opt.config, out_dir);
    opt.echo.save(join_path(out_dir, "config.txt"));
    log << "wrote " << layout.container_paths.size() << " sequences ("
        << opt.config.train_sequences << " train, " << opt.config.dev_sequences << " dev, "
        << opt.config.test_sequences << " test) of " << opt.config.frames_per_sequence << " "
        << opt.config.frame_h << "x" << opt.config.frame_w << " frames to " << out_dir << '\n';
    log << "manifest: " << layout.manifest_path << '\n';
    return layout;
}

TrainOutcome cmd_train(const TrainOptions& opt, const std::string& out_dir, std::ostream& log) {
    require_out_dir(out_dir, "train");
    // Load and fit first: a bad manifest must not leave partial outputs.
    PreparedDataset data = load_and_preprocess(opt.manifest, pipeline_for(opt.spec, opt.out_h));
    check_example_shape(data.train.example_shape(), opt.spec.input_shape);

    make_out_dir(out_dir);
    opt.echo.save(join_path(out_dir, "config.txt"));
    save_stats(data.stats, join_path(out_dir, "stats.txt"));

    log << "model: " << to_string(opt.spec.kind) << (opt.spec.tiny ? " [tiny]" : "") << '\n';
    log << "input shape: " << to_string(opt.spec.input_shape) << '\n';
    const std::size_t params = count_params(opt.spec);
    log << "parameters: " << params << '\n';
    log << "examples: " << data.train.size() << " train, " << data.dev.size() << " dev, "
        << data.test.size() << " test\n";

    Model<float> model = build_model<float>(opt.spec, opt.train.seed);
    auto [best, hist] = train(std::move(model), data.train, data.dev, opt.train);

    save_text(join_path(out_dir, "history.csv"),
              [&](std::ostream& out) { write_history_csv(hist, out); });
    save_checkpoint(best, join_path(out_dir, "checkpoint.bin"));

    const MetricsReport dev = evaluate(best, data.dev, "dev", opt.train.batch_size);
    save_text(join_path(out_dir, "metrics_dev.txt"),
              [&](std::ostream& out) { write_metrics(dev, out); });

    for (std::size_t i = 0; i < hist.epochs.size(); ++i)
        log << "epoch " << (i + 1) << " train_mse " << hist.epochs[i].train_mse << " dev_mse "
            << hist.epochs[i].dev_mse << " lr " << hist.epochs[i].lr << '\n';
    log << "best epoch " << hist.best_epoch << " dev_mse " << hist.best_dev_mse << '\n';
    log << "dev mse " << dev.mse << " mean_r2 " << dev.mean_r2 << '\n';
    log << "wrote " << join_path(out_dir, "checkpoint.bin") << '\n';
    return TrainOutcome{std::move(hist), dev, params};
}

MetricsReport cmd_eval(const EvalOptions& opt, const std::string& out_dir, std::ostream& log) {
    Model<float> model = load_checkpoint<float>(opt.checkpoint);
    const PreprocessStats stats = load_stats(opt.stats_path);
    const std::size_t out_h = model.spec.input_shape.at(1);
    PreparedDataset data =
        load_and_preprocess(opt.manifest, pipeline_for(model.spec, out_h), stats);

    const WindowedDataset* split = &data.dev;
    if (opt.split == "train") split = &data.train;
    if (opt.split == "test") split = &data.test;
    if (split->empty())
        throw DataError("the '" + opt.split + "' split of " + opt.manifest + " is empty");
    check_example_shape(split->example_shape(), model.spec.input_shape);

    const MetricsReport report = evaluate(model, *split, opt.split, opt.batch_size);
    write_metrics(report, log);
    if (!out_dir.empty()) {
        make_out_dir(out_dir);
        opt.echo.save(join_path(out_dir, "config.txt"));
        const std::string name = "metrics_" + opt.split + ".txt";
        save_text((fs::path(out_dir) / name).string(),
                  [&](std::ostream& out) { write_metrics(report, out); });
    }
    return report;
}

namespace {

std::string sanitize_status(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
    return s;
}

} // namespace

std::vector<SweepRow> cmd_sweep(const SweepOptions& opt, const std::string& out_dir,
                                std::ostream& log) {
    require_out_dir(out_dir, "sweep");

    struct Plan {
        SweepRow row;
        TrainOptions train;
        std::string subdir;
    };
    // One key=value view per run, resolved through the train resolver so
    // each subdirectory's config.txt is itself a reproducible train run.
    auto plan_run = [&](const std::string& model, int s) {
        KvMap kv;
        kv.set("model", model);
        if (model == "cnn3d") {
            kv.set("s", std::to_string(s));
            kv.set("mode", to_string(opt.mode));
        }
        kv.set("tiny", bool_word(opt.tiny));
        kv.set("manifest", opt.manifest);
        kv.set("out_h", std::to_string(opt.out_h));
        kv.set("batch_size", std::to_string(opt.train.batch_size));
        kv.set("learning_rate", io::format_g17(opt.train.learning_rate));
        kv.set("patience_epochs", std::to_string(opt.train.patience_epochs));
        kv.set("max_halvings", std::to_string(opt.train.max_halvings));
        kv.set("max_epochs", std::to_string(opt.train.max_epochs));
        kv.set("seed", std::to_string(opt.train.seed));
        Plan plan;
        plan.train = resolve_train(kv);
        plan.row.s = s;
        plan.row.label = model == "cnn3d" ? "s=" + std::to_string(s) : model;
        plan.row.param_count = count_params(plan.train.spec);
        plan.subdir = (fs::path(out_dir) /
                       (model == "cnn3d" ? "run_s" + std::to_string(s) : "run_" + model))
                          .string();
        return plan;
    };

    std::vector<Plan> plans;
    plans.push_back(plan_run("cnn2d", 0));
    for (int s : opt.s_values) plans.push_back(plan_run("cnn3d", s));

    make_out_dir(out_dir);
    opt.echo.save(join_path(out_dir, "config.txt"));

    std::vector<std::string> run_logs(plans.size());
    auto run_one = [&](std::size_t i) {
        std::ostringstream os;
        os << "--- " << plans[i].row.label << " ---\n";
        try {
            const TrainOutcome outcome = cmd_train(plans[i].train, plans[i].subdir, os);
            EvalOptions eopt;
            eopt.checkpoint = join_path(plans[i].subdir, "checkpoint.bin");
            eopt.manifest = opt.manifest;
            eopt.stats_path = join_path(plans[i].subdir, "stats.txt");
            eopt.split = "test";
            eopt.batch_size = opt.train.batch_size;
            eopt.echo.set("checkpoint", eopt.checkpoint);
            eopt.echo.set("manifest", eopt.manifest);
            eopt.echo.set("split", eopt.split);
            eopt.echo.set("stats", eopt.stats_path);
            eopt.echo.set("batch_size", std::to_string(eopt.batch_size));
            std::ostringstream eval_log;
            const MetricsReport test = cmd_eval(eopt, "", eval_log);
            plans[i].row.dev_mse = outcome.dev.mse;
            plans[i].row.test_mse = test.mse;
            plans[i].row.mean_r2 = test.mean_r2;
            plans[i].row.ok = true;
            plans[i].row.status = "ok";
        } catch (const std::exception& e) {
            plans[i].row.ok = false;
            plans[i].row.status = sanitize_status(std::string("error: ") + e.what());
            os << "failed: " << e.what() << '\n';
        }
        run_logs[i] = os.str();
    };

    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(opt.threads), plans.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < plans.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        auto pump = [&] {
            for (std::size_t i; (i = next.fetch_add(1)) < plans.size();) run_one(i);
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(pump);
        pump();
        for (std::thread& t : pool) t.join();
    }

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        log << run_logs[i];
        rows.push_back(plans[i].row);
    }
    save_text(join_path(out_dir, "sweep.csv"),
              [&](std::ostream& out) { write_sweep_csv(rows, out); });

    log << "--- sweep summary ---\n";
    for (const SweepRow& row : rows) {
        log << row.label << ": ";
        if (row.ok)
            log << "dev_mse " << row.dev_mse << " test_mse " << row.test_mse << " mean_r2 "
                << row.mean_r2 << " params " << row.param_count << '\n';
        else
            log << row.status << '\n';
    }
    log << "wrote " << join_path(out_dir, "sweep.csv") << '\n';
    return rows;
}

void cmd_params(const ParamsOptions& opt, std::ostream& log) { log << summarize(opt.spec); }

} // namespace ssi::harness
