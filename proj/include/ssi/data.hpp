#pragma once

// Data pipeline: binary sequence containers, manifest-driven split loading,
// scan-line resampling, pixel min-max normalization, per-target
// standardization, and windowed example assembly for the three model
// families.
//
// Pipeline order mirrors the acquisition description: raw echo frames are
// resampled along the scan-line axis to the working height, pixel range and
// target statistics are fitted on the training split only, and every split
// is transformed with those training statistics before windowing.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssi/errors.hpp"
#include "ssi/tensor.hpp"

namespace ssi {

inline constexpr std::size_t kTargetDim = 13;

// ---------------------------------------------------------------------------
// Sequence container
// ---------------------------------------------------------------------------

/// One recording: frames [N,H,W,1] of echo intensities aligned 1:1 with
/// target rows [N,13]. fps documents the acquisition rate.
struct UltrasoundSequence {
    std::string id;
    Tensor<float> frames{Shape{1, 1, 1, 1}};
    Tensor<float> targets{Shape{1, kTargetDim}};
    float fps = 82.0f;
};

/// Throws UsageError/ShapeError if the sequence violates its invariants
/// (matching leading extents, rank, finite values, positive fps).
void validate_sequence(const UltrasoundSequence& seq);

/// Binary container layout (all integers and floats little-endian):
/// magic "UDS1", u32 version, u32 N, u32 H, u32 W, f32 fps,
/// u16 id length, id bytes, N*H*W f32 frames, N*13 f32 targets.
inline constexpr char kContainerMagic[] = "UDS1";
inline constexpr std::uint32_t kContainerVersion = 1;

void save_container(const UltrasoundSequence& seq, const std::string& path);
UltrasoundSequence load_container(const std::string& path);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Split { kTrain, kDev, kTest };

const char* to_string(Split s);
Split split_from_string(const std::string& word);

struct ManifestEntry {
    std::string path; // as written in the manifest, usually relative
    Split split = Split::kTrain;
};

/// Plain-text manifest: one `<path>\t<train|dev|test>` line per sequence.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string base_dir; // directory of the manifest file, for resolution

    std::size_t count(Split s) const;
    /// entry.path interpreted relative to base_dir (absolute paths pass
    /// through untouched).
    std::string resolved_path(const ManifestEntry& entry) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Per scan line (fixed n and w), linear interpolation of the H axis at
/// out_h positions uniformly spanning [0, H-1]. The scan-line axis W is
/// untouched. H == out_h reproduces the input exactly.
template <typename T>
Tensor<T> resample_scanlines(const Tensor<T>& frames, std::size_t out_h) {
    if (frames.rank() != 4)
        throw ShapeError("resample_scanlines expects frames [N,H,W,1], got " +
                         to_string(frames.shape()));
    const std::size_t n = frames.extent(0), h = frames.extent(1), w = frames.extent(2),
                      c = frames.extent(3);
    if (h < 2) throw UsageError("resample_scanlines needs at least 2 samples per scan line");
    if (out_h < 2) throw UsageError("resample_scanlines needs an output height of at least 2");
    Tensor<T> out(Shape{n, out_h, w, c});
    const std::size_t row = w * c;
    const double scale = static_cast<double>(h - 1) / static_cast<double>(out_h - 1);
    for (std::size_t ni = 0; ni < n; ++ni) {
        const T* src = frames.data() + ni * h * row;
        T* dst = out.data() + ni * out_h * row;
        for (std::size_t k = 0; k < out_h; ++k) {
            const double pos = scale * static_cast<double>(k);
            std::size_t i0 = static_cast<std::size_t>(pos);
            if (i0 >= h - 1) i0 = h - 2;
            const double frac = pos - static_cast<double>(i0);
            const T* a = src + i0 * row;
            const T* b = a + row;
            T* o = dst + k * row;
            for (std::size_t j = 0; j < row; ++j)
                o[j] = static_cast<T>((1.0 - frac) * static_cast<double>(a[j]) +
                                      frac * static_cast<double>(b[j]));
        }
    }
    return out;
}

/// Global pixel range of the training split; maps [lo,hi] onto [-1,1].
struct PixelNormalizer {
    float lo = 0.0f;
    float hi = 0.0f;
};

/// Scans every training frame tensor for the global min/max.
PixelNormalizer fit_pixel_range(const std::vector<const Tensor<float>*>& train_frames);

/// x -> 2*(x-lo)/(hi-lo) - 1 elementwise; lo and hi map to -1 and +1
/// exactly. Degenerate range (hi == lo) maps everything to zero.
Tensor<float> minmax_normalize(const Tensor<float>& frames, const PixelNormalizer& norm);

/// Per-target mean and population standard deviation, fitted on the
/// training split only.
struct TargetScaler {
    std::array<double, kTargetDim> mean{};
    std::array<double, kTargetDim> stddev{};
};

/// Fits over the concatenation of the given [N,13] target tensors.
/// Throws DataError naming the dimension if any target has zero variance.
TargetScaler fit_target_scaler(const std::vector<const Tensor<float>*>& train_targets);

namespace detail {
template <typename T>
void check_target_shape(const Tensor<T>& targets, const char* op) {
    if (targets.rank() != 2 || targets.extent(1) != kTargetDim)
        throw ShapeError(std::string(op) + " expects targets [N," +
                         std::to_string(kTargetDim) + "], got " + to_string(targets.shape()));
}
} // namespace detail

/// (x - mean) / std per target dimension, computed in double.
template <typename T>
Tensor<T> apply_scaler(const Tensor<T>& targets, const TargetScaler& scaler) {
    detail::check_target_shape(targets, "apply_scaler");
    Tensor<T> out(targets.shape());
    const std::size_t n = targets.extent(0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < kTargetDim; ++j)
            out(i, j) = static_cast<T>(
                (static_cast<double>(targets(i, j)) - scaler.mean[j]) / scaler.stddev[j]);
    return out;
}

/// Inverse of apply_scaler: x * std + mean.
template <typename T>
Tensor<T> invert_scaler(const Tensor<T>& targets, const TargetScaler& scaler) {
    detail::check_target_shape(targets, "invert_scaler");
    Tensor<T> out(targets.shape());
    const std::size_t n = targets.extent(0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < kTargetDim; ++j)
            out(i, j) = static_cast<T>(static_cast<double>(targets(i, j)) * scaler.stddev[j] +
                                       scaler.mean[j]);
    return out;
}

/// Training-split statistics needed to preprocess any split, serializable
/// as a key=value text file with 17-significant-digit round-trip.
struct PreprocessStats {
    PixelNormalizer pixels;
    TargetScaler targets;
};

void save_stats(const PreprocessStats& stats, const std::string& path);
PreprocessStats load_stats(const std::string& path);

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// How a labeled frame is expanded into model input:
///  - kSingle:     just the frame itself [1,H,W,1] (dense and 2D models)
///  - kSampled:    5 frames {t-2s, t-s, t, t+s, t+2s}
///  - kFullWindow: all 4s+1 consecutive frames t-2s .. t+2s
enum class WindowMode { kSingle, kSampled, kFullWindow };

const char* to_string(WindowMode mode);
WindowMode window_mode_from_string(const std::string& word);

/// Frames per window for a mode/stride combination.
std::size_t window_length(WindowMode mode, std::size_t stride_s);

/// The clamped frame indices feeding the window centered on frame t of a
/// sequence with n frames. Indices outside [0, n-1] replicate the edge.
std::vector<std::size_t> window_indices(std::size_t t, std::size_t n, std::size_t stride_s,
                                        WindowMode mode);

/// One assembled training example.
struct WindowedExample {
    Tensor<float> input{Shape{1, 1, 1, 1}}; // [T,H,W,1]
    std::array<float, kTargetDim> target{};
    std::size_t center_frame = 0;
    std::string sequence_id;
};

/// One example per frame; targets are copied as stored in the sequence
/// (standardize before calling when training statistics apply).
std::vector<WindowedExample> make_windows(const UltrasoundSequence& seq, std::size_t stride_s,
                                          WindowMode mode);

// ---------------------------------------------------------------------------
// Windowed dataset (lazy batch assembly)
// ---------------------------------------------------------------------------

/// Examples across preprocessed sequences, assembled into batches on
/// demand so windows never duplicate frame storage. Satisfies the data
/// interface of the training loop: size() and gather().
class WindowedDataset {
public:
    WindowedDataset() = default;
    WindowedDataset(std::size_t stride_s, WindowMode mode);

    /// frames [N,H,W,1] and targets [N,13] are moved in; all sequences
    /// must agree on H and W.
    void add_sequence(std::string id, Tensor<float> frames, Tensor<float> targets);

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::size_t num_sequences() const { return seqs_.size(); }
    std::size_t stride() const { return s_; }
    WindowMode mode() const { return mode_; }

    /// Shape of one input example [T,H,W,1]; throws UsageError when empty.
    Shape example_shape() const;

    /// (sequence id, center frame) of example i.
    std::pair<std::string, std::size_t> example_origin(std::size_t i) const;

    /// Batched inputs [B,T,H,W,1] and targets [B,13] for the given example
    /// indices, in order.
    std::pair<Tensor<float>, Tensor<float>> gather(const std::vector<std::size_t>& idx) const;

private:
    struct StoredSequence {
        std::string id;
        Tensor<float> frames{Shape{1, 1, 1, 1}};
        Tensor<float> targets{Shape{1, kTargetDim}};
    };
    struct ItemRef {
        std::uint32_t seq;
        std::uint32_t frame;
    };

    std::size_t s_ = 1;
    WindowMode mode_ = WindowMode::kSingle;
    std::vector<StoredSequence> seqs_;
    std::vector<ItemRef> items_;
};

// ---------------------------------------------------------------------------
// End-to-end loading
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::size_t out_h = 128;  // working frame height after resampling
    std::size_t stride_s = 1; // temporal stride s
    WindowMode mode = WindowMode::kSingle;
};

struct PreparedDataset {
    WindowedDataset train, dev, test;
    PreprocessStats stats;
};

/// Loads every sequence in the manifest, fits pixel range and target
/// scaler on the training split, transforms all splits with those
/// statistics, and windows each split. Requires a non-empty train split.
PreparedDataset load_and_preprocess(const std::string& manifest_path, const PipelineConfig& cfg);

/// Same, but with pre-fitted statistics (evaluation against an existing
/// checkpoint); the train split may be empty.
PreparedDataset load_and_preprocess(const std::string& manifest_path, const PipelineConfig& cfg,
                                    const PreprocessStats& stats);

} // namespace ssi
