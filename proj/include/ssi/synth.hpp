#pragma once

// Synthetic benchmark: ultrasound-like sequences with a moving Gaussian
// blob whose targets mix the blob's (standardized) position and velocity.
// Velocity enters the labels by construction, so models with temporal
// context have strictly more information than single-frame models — the
// desk-scale analogue of the 2D-vs-3D comparison.
//
// Everything is reproducible from (seed, sequence index): the mixing
// matrix uses its own seed stream, and each sequence uses an independent
// stream, so parallel generation equals sequential generation.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssi/data.hpp"
#include "ssi/tensor.hpp"

namespace ssi {

struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t train_sequences = 31;
    std::size_t dev_sequences = 4;
    std::size_t test_sequences = 9;
    std::size_t frames_per_sequence = 200;
    std::size_t frame_h = 128;
    std::size_t frame_w = 64;
    double blob_sigma = 6.0;        // pixels
    std::size_t smoothing_window = 9; // frames, odd
    double noise_std = 0.3;
    double velocity_weight = 0.5; // in [0,1]
    float fps = 82.0f;

    /// Throws UsageError on invalid fields (even smoothing window,
    /// velocity weight outside [0,1], degenerate extents, ...).
    void validate() const;

    /// Compact variant: 32x16 frames with a proportionally smaller blob.
    static SynthConfig tiny(std::uint64_t seed);
};

/// Per-frame 2-D blob position (within image bounds) and its finite
/// difference velocity, v(t) = p(t) - p(t-1) with v(0) = 0.
/// Component order is {row, column} = {y, x}.
struct LatentTrajectory {
    std::vector<std::array<double, 2>> position;
    std::vector<std::array<double, 2>> velocity;
};

/// The fixed 13x4 target mixing matrix, drawn once per corpus seed.
Tensor<double> mixing_matrix(const SynthConfig& cfg);

/// The latent blob trajectory of sequence `index`: a moving average of
/// i.i.d. Gaussian steps, rescaled per axis to keep a margin from the
/// image border.
LatentTrajectory generate_latent(const SynthConfig& cfg, std::size_t index);

/// Renders sequence `index`: frames are a unit-height isotropic Gaussian
/// blob at p(t) plus pixel noise; targets are
/// M * [(1-vw) * standardized position; vw * standardized velocity].
UltrasoundSequence generate_sequence(const SynthConfig& cfg, std::size_t index);

/// Container files plus the manifest that generate_corpus wrote.
struct CorpusLayout {
    std::string manifest_path;
    std::vector<std::string> container_paths;
    DatasetManifest manifest;
};

/// Writes train+dev+test container files and a manifest.tsv into out_dir
/// (created if needed). Sequence k of the concatenated order
/// [train..., dev..., test...] is generate_sequence(cfg, k).
CorpusLayout generate_corpus(const SynthConfig& cfg, const std::string& out_dir);

} // namespace ssi
