#include "ssi/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "ssi/io.hpp"

namespace ssi {

// ---------------------------------------------------------------------------
// Sequence container
// ---------------------------------------------------------------------------

void validate_sequence(const UltrasoundSequence& seq) {
    if (seq.frames.rank() != 4 || seq.frames.extent(3) != 1)
        throw ShapeError("sequence frames must be [N,H,W,1], got " +
                         to_string(seq.frames.shape()));
    if (seq.targets.rank() != 2 || seq.targets.extent(1) != kTargetDim)
        throw ShapeError("sequence targets must be [N," + std::to_string(kTargetDim) +
                         "], got " + to_string(seq.targets.shape()));
    if (seq.frames.extent(0) != seq.targets.extent(0))
        throw ShapeError("frames and targets disagree on sequence length: " +
                         to_string(seq.frames.shape()) + " vs " + to_string(seq.targets.shape()));
    if (!std::isfinite(seq.fps) || seq.fps <= 0.0f)
        throw UsageError("sequence fps must be finite and positive");
    if (seq.id.size() > 0xffff)
        throw UsageError("sequence id longer than 65535 bytes");
    for (const float v : seq.frames)
        if (!std::isfinite(v)) throw UsageError("sequence frames contain a non-finite value");
    for (const float v : seq.targets)
        if (!std::isfinite(v)) throw UsageError("sequence targets contain a non-finite value");
}

void save_container(const UltrasoundSequence& seq, const std::string& path) {
    validate_sequence(seq);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open \"" + path + "\" for writing");
    io::write_bytes(out, kContainerMagic, 4);
    io::write_u32(out, kContainerVersion);
    io::write_u32(out, static_cast<std::uint32_t>(seq.frames.extent(0)));
    io::write_u32(out, static_cast<std::uint32_t>(seq.frames.extent(1)));
    io::write_u32(out, static_cast<std::uint32_t>(seq.frames.extent(2)));
    io::write_f32(out, seq.fps);
    io::write_u16(out, static_cast<std::uint16_t>(seq.id.size()));
    io::write_bytes(out, seq.id.data(), seq.id.size());
    io::write_f32_array(out, seq.frames.data(), seq.frames.size());
    io::write_f32_array(out, seq.targets.data(), seq.targets.size());
    out.flush();
    if (!out) throw DataError("write to \"" + path + "\" failed");
}

UltrasoundSequence load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open \"" + path + "\" for reading");
    std::uint64_t pos = 0;

    io::expect_magic(in, kContainerMagic, pos, "container");

    const std::uint64_t version_at = pos;
    const std::uint32_t version = io::read_u32(in, pos, "container version");
    if (version != kContainerVersion)
        throw ParseError("unsupported container version " + std::to_string(version) +
                             ", expected " + std::to_string(kContainerVersion),
                         version_at);

    const std::uint64_t n_at = pos;
    const std::uint32_t n = io::read_u32(in, pos, "frame count");
    const std::uint64_t h_at = pos;
    const std::uint32_t h = io::read_u32(in, pos, "frame height");
    const std::uint64_t w_at = pos;
    const std::uint32_t w = io::read_u32(in, pos, "frame width");
    if (n == 0) throw ParseError("empty sequence (N = 0)", n_at);
    if (h == 0) throw ParseError("zero frame height", h_at);
    if (w == 0) throw ParseError("zero frame width", w_at);

    // guard against absurd headers before allocating
    constexpr std::uint64_t kMaxElements = 1ull << 33;
    std::uint64_t total = n;
    if (total > kMaxElements / h) throw ParseError("frame payload too large", n_at);
    total *= h;
    if (total > kMaxElements / w) throw ParseError("frame payload too large", n_at);
    total *= w;

    const std::uint64_t fps_at = pos;
    const float fps = io::read_f32(in, pos, "fps");
    if (!std::isfinite(fps) || fps <= 0.0f)
        throw ParseError("invalid fps value", fps_at);

    const std::uint16_t id_len = io::read_u16(in, pos, "id length");
    std::string id(id_len, '\0');
    if (id_len > 0) io::read_bytes(in, id.data(), id_len, pos, "sequence id");

    UltrasoundSequence seq;
    seq.id = std::move(id);
    seq.fps = fps;
    seq.frames = Tensor<float>(Shape{n, h, w, 1});
    seq.targets = Tensor<float>(Shape{n, kTargetDim});

    const std::uint64_t frames_at = pos;
    io::read_f32_array(in, seq.frames.data(), seq.frames.size(), pos, "frame data");
    for (std::size_t i = 0; i < seq.frames.size(); ++i)
        if (!std::isfinite(seq.frames[i]))
            throw ParseError("non-finite frame value at index " + std::to_string(i),
                             frames_at + 4 * static_cast<std::uint64_t>(i));

    const std::uint64_t targets_at = pos;
    io::read_f32_array(in, seq.targets.data(), seq.targets.size(), pos, "target data");
    for (std::size_t i = 0; i < seq.targets.size(); ++i)
        if (!std::isfinite(seq.targets[i]))
            throw ParseError("non-finite target value at index " + std::to_string(i),
                             targets_at + 4 * static_cast<std::uint64_t>(i));

    if (in.peek() != std::char_traits<char>::eof())
        throw ParseError("trailing bytes after container payload", pos);
    return seq;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

const char* to_string(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kDev: return "dev";
        case Split::kTest: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& word) {
    if (word == "train") return Split::kTrain;
    if (word == "dev") return Split::kDev;
    if (word == "test") return Split::kTest;
    throw UsageError("unknown split \"" + word + "\" (expected train, dev, or test)");
}

std::size_t DatasetManifest::count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(),
                      [s](const ManifestEntry& e) { return e.split == s; }));
}

std::string DatasetManifest::resolved_path(const ManifestEntry& entry) const {
    const std::filesystem::path p(entry.path);
    if (p.is_absolute() || base_dir.empty()) return entry.path;
    return (std::filesystem::path(base_dir) / p).string();
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest \"" + path + "\" for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    DatasetManifest manifest;
    manifest.base_dir = std::filesystem::path(path).parent_path().string();

    std::set<std::string> seen;
    std::uint64_t line_at = 0;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = std::min(text.find('\n', begin), text.size());
        line_at = begin;
        std::string line = text.substr(begin, end - begin);
        begin = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("manifest line missing tab separator", line_at);
        const std::string file = line.substr(0, tab);
        const std::string word = line.substr(tab + 1);
        if (file.empty()) throw ParseError("manifest line has an empty path", line_at);
        Split split;
        if (word == "train") split = Split::kTrain;
        else if (word == "dev") split = Split::kDev;
        else if (word == "test") split = Split::kTest;
        else
            throw ParseError("unknown split \"" + word + "\" (expected train, dev, or test)",
                             line_at);
        if (!seen.insert(file).second)
            throw ParseError("duplicate sequence path \"" + file + "\"", line_at);
        manifest.entries.push_back(ManifestEntry{file, split});
        if (end == text.size()) break;
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open manifest \"" + path + "\" for writing");
    for (const auto& e : manifest.entries) out << e.path << '\t' << to_string(e.split) << '\n';
    out.flush();
    if (!out) throw DataError("write to manifest \"" + path + "\" failed");
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

PixelNormalizer fit_pixel_range(const std::vector<const Tensor<float>*>& train_frames) {
    bool any = false;
    PixelNormalizer norm;
    for (const Tensor<float>* t : train_frames) {
        for (const float v : *t) {
            if (!any) {
                norm.lo = norm.hi = v;
                any = true;
            } else {
                norm.lo = std::min(norm.lo, v);
                norm.hi = std::max(norm.hi, v);
            }
        }
    }
    if (!any) throw DataError("cannot fit the pixel range on an empty training split");
    return norm;
}

Tensor<float> minmax_normalize(const Tensor<float>& frames, const PixelNormalizer& norm) {
    Tensor<float> out(frames.shape());
    if (norm.hi == norm.lo) {
        std::fill(out.begin(), out.end(), 0.0f);
        return out;
    }
    const float lo = norm.lo, range = norm.hi - norm.lo;
    // keep the exact form 2*((x-lo)/range)-1 so lo and hi land on -1 and +1
    // with no rounding detour through a reciprocal
    for (std::size_t i = 0; i < frames.size(); ++i)
        out[i] = 2.0f * ((frames[i] - lo) / range) - 1.0f;
    return out;
}

TargetScaler fit_target_scaler(const std::vector<const Tensor<float>*>& train_targets) {
    std::size_t rows = 0;
    for (const Tensor<float>* t : train_targets) {
        detail::check_target_shape(*t, "fit_target_scaler");
        rows += t->extent(0);
    }
    if (rows == 0) throw DataError("cannot fit the target scaler on an empty training split");

    TargetScaler scaler;
    std::array<double, kTargetDim> sum{};
    for (const Tensor<float>* t : train_targets) {
        const std::size_t n = t->extent(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < kTargetDim; ++j)
                sum[j] += static_cast<double>((*t)(i, j));
    }
    for (std::size_t j = 0; j < kTargetDim; ++j)
        scaler.mean[j] = sum[j] / static_cast<double>(rows);

    std::array<double, kTargetDim> sq{};
    for (const Tensor<float>* t : train_targets) {
        const std::size_t n = t->extent(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < kTargetDim; ++j) {
                const double d = static_cast<double>((*t)(i, j)) - scaler.mean[j];
                sq[j] += d * d;
            }
    }
    for (std::size_t j = 0; j < kTargetDim; ++j) {
        const double var = sq[j] / static_cast<double>(rows);
        if (var <= 0.0)
            throw DataError("target dimension " + std::to_string(j) +
                            " has zero variance in the training split");
        scaler.stddev[j] = std::sqrt(var);
    }
    return scaler;
}

// ---------------------------------------------------------------------------
// Statistics file
// ---------------------------------------------------------------------------

void save_stats(const PreprocessStats& stats, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open statistics file \"" + path + "\" for writing");
    out << "pixel_min=" << io::format_g17(static_cast<double>(stats.pixels.lo)) << '\n';
    out << "pixel_max=" << io::format_g17(static_cast<double>(stats.pixels.hi)) << '\n';
    for (std::size_t j = 0; j < kTargetDim; ++j)
        out << "target_mean_" << j << '=' << io::format_g17(stats.targets.mean[j]) << '\n';
    for (std::size_t j = 0; j < kTargetDim; ++j)
        out << "target_std_" << j << '=' << io::format_g17(stats.targets.stddev[j]) << '\n';
    out.flush();
    if (!out) throw DataError("write to statistics file \"" + path + "\" failed");
}

PreprocessStats load_stats(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open statistics file \"" + path + "\" for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    std::map<std::string, double> values;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = std::min(text.find('\n', begin), text.size());
        const std::uint64_t line_at = begin;
        std::string line = text.substr(begin, end - begin);
        begin = end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("statistics line missing '='", line_at);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        char* parse_end = nullptr;
        const double v = std::strtod(val.c_str(), &parse_end);
        if (val.empty() || parse_end != val.c_str() + val.size())
            throw ParseError("bad numeric value for statistics key \"" + key + "\"", line_at);
        if (!values.emplace(key, v).second)
            throw ParseError("duplicate statistics key \"" + key + "\"", line_at);
        if (end == text.size()) break;
    }

    auto take = [&](const std::string& key) {
        const auto it = values.find(key);
        if (it == values.end())
            throw ParseError("missing statistics key \"" + key + "\"",
                             static_cast<std::uint64_t>(text.size()));
        const double v = it->second;
        values.erase(it);
        return v;
    };

    PreprocessStats stats;
    stats.pixels.lo = static_cast<float>(take("pixel_min"));
    stats.pixels.hi = static_cast<float>(take("pixel_max"));
    for (std::size_t j = 0; j < kTargetDim; ++j)
        stats.targets.mean[j] = take("target_mean_" + std::to_string(j));
    for (std::size_t j = 0; j < kTargetDim; ++j) {
        stats.targets.stddev[j] = take("target_std_" + std::to_string(j));
        if (!(stats.targets.stddev[j] > 0.0))
            throw ParseError("target_std_" + std::to_string(j) + " must be positive",
                             static_cast<std::uint64_t>(text.size()));
    }
    if (!values.empty())
        throw ParseError("unknown statistics key \"" + values.begin()->first + "\"",
                         static_cast<std::uint64_t>(text.size()));
    if (stats.pixels.hi < stats.pixels.lo)
        throw ParseError("pixel_max is below pixel_min",
                         static_cast<std::uint64_t>(text.size()));
    return stats;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

const char* to_string(WindowMode mode) {
    switch (mode) {
        case WindowMode::kSingle: return "single";
        case WindowMode::kSampled: return "sampled";
        case WindowMode::kFullWindow: return "full_window";
    }
    return "?";
}

WindowMode window_mode_from_string(const std::string& word) {
    if (word == "single") return WindowMode::kSingle;
    if (word == "sampled") return WindowMode::kSampled;
    if (word == "full_window") return WindowMode::kFullWindow;
    throw UsageError("unknown window mode \"" + word +
                     "\" (expected single, sampled, or full_window)");
}

std::size_t window_length(WindowMode mode, std::size_t stride_s) {
    if (mode == WindowMode::kSingle) return 1;
    if (stride_s < 1) throw UsageError("temporal windows need a stride s >= 1");
    return mode == WindowMode::kSampled ? 5 : 4 * stride_s + 1;
}

std::vector<std::size_t> window_indices(std::size_t t, std::size_t n, std::size_t stride_s,
                                        WindowMode mode) {
    if (n == 0) throw UsageError("cannot window an empty sequence");
    if (t >= n)
        throw UsageError("center frame " + std::to_string(t) + " out of range [0, " +
                         std::to_string(n) + ")");
    const std::size_t len = window_length(mode, stride_s);
    std::vector<std::size_t> idx(len);
    if (mode == WindowMode::kSingle) {
        idx[0] = t;
        return idx;
    }
    const long long center = static_cast<long long>(t);
    const long long last = static_cast<long long>(n) - 1;
    const long long s = static_cast<long long>(stride_s);
    auto clamp = [&](long long v) {
        return static_cast<std::size_t>(std::clamp<long long>(v, 0, last));
    };
    if (mode == WindowMode::kSampled) {
        for (long long k = -2; k <= 2; ++k) idx[static_cast<std::size_t>(k + 2)] = clamp(center + k * s);
    } else {
        for (long long k = -2 * s; k <= 2 * s; ++k)
            idx[static_cast<std::size_t>(k + 2 * s)] = clamp(center + k);
    }
    return idx;
}

std::vector<WindowedExample> make_windows(const UltrasoundSequence& seq, std::size_t stride_s,
                                          WindowMode mode) {
    validate_sequence(seq);
    const std::size_t n = seq.frames.extent(0), h = seq.frames.extent(1),
                      w = seq.frames.extent(2);
    const std::size_t len = window_length(mode, stride_s);
    const std::size_t frame_elems = h * w;

    std::vector<WindowedExample> out;
    out.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        WindowedExample ex;
        ex.input = Tensor<float>(Shape{len, h, w, 1});
        const auto idx = window_indices(t, n, stride_s, mode);
        for (std::size_t k = 0; k < len; ++k)
            std::copy_n(seq.frames.data() + idx[k] * frame_elems, frame_elems,
                        ex.input.data() + k * frame_elems);
        for (std::size_t j = 0; j < kTargetDim; ++j) ex.target[j] = seq.targets(t, j);
        ex.center_frame = t;
        ex.sequence_id = seq.id;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// WindowedDataset
// ---------------------------------------------------------------------------

WindowedDataset::WindowedDataset(std::size_t stride_s, WindowMode mode)
    : s_(stride_s), mode_(mode) {
    window_length(mode, stride_s); // validates the stride for temporal modes
}

void WindowedDataset::add_sequence(std::string id, Tensor<float> frames, Tensor<float> targets) {
    if (frames.rank() != 4 || frames.extent(3) != 1)
        throw ShapeError("dataset frames must be [N,H,W,1], got " + to_string(frames.shape()));
    detail::check_target_shape(targets, "add_sequence");
    if (frames.extent(0) != targets.extent(0))
        throw ShapeError("frames and targets disagree on sequence length: " +
                         to_string(frames.shape()) + " vs " + to_string(targets.shape()));
    if (!seqs_.empty() &&
        (frames.extent(1) != seqs_[0].frames.extent(1) ||
         frames.extent(2) != seqs_[0].frames.extent(2)))
        throw ShapeError("sequence frame size " + to_string(frames.shape()) +
                         " disagrees with the dataset's " + to_string(seqs_[0].frames.shape()));
    const std::size_t n = frames.extent(0);
    const std::uint32_t seq_index = static_cast<std::uint32_t>(seqs_.size());
    seqs_.push_back(StoredSequence{std::move(id), std::move(frames), std::move(targets)});
    for (std::size_t t = 0; t < n; ++t)
        items_.push_back(ItemRef{seq_index, static_cast<std::uint32_t>(t)});
}

Shape WindowedDataset::example_shape() const {
    if (seqs_.empty()) throw UsageError("dataset is empty");
    return Shape{window_length(mode_, s_), seqs_[0].frames.extent(1),
                 seqs_[0].frames.extent(2), 1};
}

std::pair<std::string, std::size_t> WindowedDataset::example_origin(std::size_t i) const {
    if (i >= items_.size())
        throw UsageError("example index " + std::to_string(i) + " out of range [0, " +
                         std::to_string(items_.size()) + ")");
    return {seqs_[items_[i].seq].id, items_[i].frame};
}

std::pair<Tensor<float>, Tensor<float>> WindowedDataset::gather(
    const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw UsageError("cannot gather an empty batch");
    const Shape ex = example_shape();
    const std::size_t len = ex[0], h = ex[1], w = ex[2];
    const std::size_t frame_elems = h * w;
    Tensor<float> inputs(Shape{idx.size(), len, h, w, 1});
    Tensor<float> targets(Shape{idx.size(), kTargetDim});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        if (idx[b] >= items_.size())
            throw UsageError("example index " + std::to_string(idx[b]) + " out of range [0, " +
                             std::to_string(items_.size()) + ")");
        const ItemRef& item = items_[idx[b]];
        const StoredSequence& seq = seqs_[item.seq];
        const auto window = window_indices(item.frame, seq.frames.extent(0), s_, mode_);
        float* dst = inputs.data() + b * len * frame_elems;
        for (std::size_t k = 0; k < len; ++k)
            std::copy_n(seq.frames.data() + window[k] * frame_elems, frame_elems,
                        dst + k * frame_elems);
        std::copy_n(seq.targets.data() + item.frame * kTargetDim, kTargetDim,
                    targets.data() + b * kTargetDim);
    }
    return {std::move(inputs), std::move(targets)};
}

// ---------------------------------------------------------------------------
// End-to-end loading
// ---------------------------------------------------------------------------

namespace {

PreparedDataset prepare(const std::string& manifest_path, const PipelineConfig& cfg,
                        const PreprocessStats* fixed_stats) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.entries.empty())
        throw DataError("manifest \"" + manifest_path + "\" lists no sequences");

    struct Loaded {
        UltrasoundSequence seq;
        Split split;
    };
    std::vector<Loaded> loaded;
    loaded.reserve(manifest.entries.size());
    std::map<std::string, std::string> id_to_path;
    for (const ManifestEntry& entry : manifest.entries) {
        const std::string file = manifest.resolved_path(entry);
        UltrasoundSequence seq = load_container(file);
        if (seq.frames.extent(1) != cfg.out_h)
            seq.frames = resample_scanlines(seq.frames, cfg.out_h);
        const auto [it, fresh] = id_to_path.emplace(seq.id, file);
        if (!fresh)
            throw DataError("duplicate sequence id \"" + seq.id + "\" (in \"" + it->second +
                            "\" and \"" + file + "\")");
        loaded.push_back(Loaded{std::move(seq), entry.split});
    }

    PreprocessStats stats;
    if (fixed_stats != nullptr) {
        stats = *fixed_stats;
    } else {
        std::vector<const Tensor<float>*> train_frames, train_targets;
        for (const Loaded& l : loaded) {
            if (l.split != Split::kTrain) continue;
            train_frames.push_back(&l.seq.frames);
            train_targets.push_back(&l.seq.targets);
        }
        if (train_frames.empty())
            throw DataError("manifest \"" + manifest_path +
                            "\" has no train sequences to fit statistics on");
        stats.pixels = fit_pixel_range(train_frames);
        stats.targets = fit_target_scaler(train_targets);
    }

    PreparedDataset out{WindowedDataset(cfg.stride_s, cfg.mode),
                        WindowedDataset(cfg.stride_s, cfg.mode),
                        WindowedDataset(cfg.stride_s, cfg.mode), stats};
    for (Loaded& l : loaded) {
        WindowedDataset& target_set = l.split == Split::kTrain ? out.train
                                      : l.split == Split::kDev ? out.dev
                                                               : out.test;
        target_set.add_sequence(std::move(l.seq.id),
                                minmax_normalize(l.seq.frames, stats.pixels),
                                apply_scaler(l.seq.targets, stats.targets));
    }
    return out;
}

} // namespace

PreparedDataset load_and_preprocess(const std::string& manifest_path,
                                    const PipelineConfig& cfg) {
    return prepare(manifest_path, cfg, nullptr);
}

PreparedDataset load_and_preprocess(const std::string& manifest_path, const PipelineConfig& cfg,
                                    const PreprocessStats& stats) {
    return prepare(manifest_path, cfg, &stats);
}

} // namespace ssi
