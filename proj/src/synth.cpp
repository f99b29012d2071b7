#include "ssi/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ssi/rng.hpp"

namespace ssi {

namespace {

// Stream tags for the per-purpose generators; sequence i uses
// kSequenceStreamBase + i, safely above the fixed tags.
constexpr std::uint64_t kMixStream = 0x4d;
constexpr std::uint64_t kSequenceStreamBase = 0x100;

/// Population mean/std of one latent component; constant components get
/// std 1 so standardization stays finite.
struct Moments {
    double mean = 0.0, std = 1.0;
};

Moments component_moments(const std::vector<std::array<double, 2>>& series, std::size_t axis) {
    Moments m;
    const double n = static_cast<double>(series.size());
    double sum = 0.0;
    for (const auto& v : series) sum += v[axis];
    m.mean = sum / n;
    double sq = 0.0;
    for (const auto& v : series) {
        const double d = v[axis] - m.mean;
        sq += d * d;
    }
    const double var = sq / n;
    m.std = var > 0.0 ? std::sqrt(var) : 1.0;
    return m;
}

} // namespace

void SynthConfig::validate() const {
    if (smoothing_window < 1 || smoothing_window % 2 == 0)
        throw UsageError("smoothing window must be odd and at least 1, got " +
                         std::to_string(smoothing_window));
    if (!(velocity_weight >= 0.0 && velocity_weight <= 1.0))
        throw UsageError("velocity weight must lie in [0,1]");
    if (!(blob_sigma > 0.0)) throw UsageError("blob sigma must be positive");
    if (!(noise_std >= 0.0)) throw UsageError("noise std must be non-negative");
    if (frame_h < 2 || frame_w < 2)
        throw UsageError("frame size must be at least 2x2, got " + std::to_string(frame_h) +
                         "x" + std::to_string(frame_w));
    if (frames_per_sequence < 1) throw UsageError("frames per sequence must be at least 1");
    if (!(fps > 0.0f) || !std::isfinite(fps)) throw UsageError("fps must be finite and positive");
}

SynthConfig SynthConfig::tiny(std::uint64_t seed) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.frame_h = 32;
    cfg.frame_w = 16;
    cfg.blob_sigma = 1.5; // keeps the blob/frame proportion of the full size
    return cfg;
}

Tensor<double> mixing_matrix(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng = Rng::stream(cfg.seed, kMixStream);
    Tensor<double> m(Shape{kTargetDim, 4});
    for (auto& v : m) v = rng.gaussian();
    return m;
}

namespace {

/// Latent generation from an already-positioned sequence stream, so the
/// frame renderer can keep drawing from the same stream afterwards.
LatentTrajectory generate_latent_impl(const SynthConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.frames_per_sequence;

    // i.i.d. Gaussian steps, drawn frame-major so the frame renderer can
    // share the stream afterwards
    std::vector<std::array<double, 2>> steps(n);
    for (std::size_t t = 0; t < n; ++t) {
        steps[t][0] = rng.gaussian();
        steps[t][1] = rng.gaussian();
    }

    // centered moving average with edge truncation
    const std::size_t half = cfg.smoothing_window / 2;
    std::vector<std::array<double, 2>> raw(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t >= half ? t - half : 0;
        const std::size_t hi = std::min(n - 1, t + half);
        double acc[2] = {0.0, 0.0};
        for (std::size_t k = lo; k <= hi; ++k) {
            acc[0] += steps[k][0];
            acc[1] += steps[k][1];
        }
        const double count = static_cast<double>(hi - lo + 1);
        raw[t] = {acc[0] / count, acc[1] / count};
    }

    // rescale per axis into [margin, extent-1-margin]
    LatentTrajectory latent;
    latent.position.resize(n);
    latent.velocity.resize(n);
    const double extents[2] = {static_cast<double>(cfg.frame_h),
                               static_cast<double>(cfg.frame_w)};
    for (std::size_t axis = 0; axis < 2; ++axis) {
        const double span = extents[axis] - 1.0;
        const double margin = std::min(2.0 * cfg.blob_sigma, span / 4.0);
        double lo = raw[0][axis], hi = raw[0][axis];
        for (const auto& v : raw) {
            lo = std::min(lo, v[axis]);
            hi = std::max(hi, v[axis]);
        }
        for (std::size_t t = 0; t < n; ++t)
            latent.position[t][axis] =
                hi > lo ? margin + (raw[t][axis] - lo) / (hi - lo) * (span - 2.0 * margin)
                        : span / 2.0;
    }
    latent.velocity[0] = {0.0, 0.0};
    for (std::size_t t = 1; t < n; ++t)
        for (std::size_t axis = 0; axis < 2; ++axis)
            latent.velocity[t][axis] = latent.position[t][axis] - latent.position[t - 1][axis];
    return latent;
}

} // namespace

LatentTrajectory generate_latent(const SynthConfig& cfg, std::size_t index) {
    cfg.validate();
    Rng rng = Rng::stream(cfg.seed, kSequenceStreamBase + index);
    return generate_latent_impl(cfg, rng);
}

UltrasoundSequence generate_sequence(const SynthConfig& cfg, std::size_t index) {
    cfg.validate();
    const std::size_t n = cfg.frames_per_sequence, h = cfg.frame_h, w = cfg.frame_w;
    Rng rng = Rng::stream(cfg.seed, kSequenceStreamBase + index);
    const LatentTrajectory latent = generate_latent_impl(cfg, rng);

    UltrasoundSequence seq;
    char name[32];
    std::snprintf(name, sizeof name, "synth-%04zu", index);
    seq.id = name;
    seq.fps = cfg.fps;
    seq.frames = Tensor<float>(Shape{n, h, w, 1});
    seq.targets = Tensor<float>(Shape{n, kTargetDim});

    const double inv_two_sigma_sq = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
    float* frame = seq.frames.data();
    for (std::size_t t = 0; t < n; ++t) {
        const double py = latent.position[t][0], px = latent.position[t][1];
        for (std::size_t y = 0; y < h; ++y) {
            const double dy = static_cast<double>(y) - py;
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - px;
                double v = std::exp(-(dy * dy + dx * dx) * inv_two_sigma_sq);
                if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.gaussian();
                *frame++ = static_cast<float>(v);
            }
        }
    }

    const Tensor<double> m = mixing_matrix(cfg);
    const Moments py = component_moments(latent.position, 0);
    const Moments px = component_moments(latent.position, 1);
    const Moments vy = component_moments(latent.velocity, 0);
    const Moments vx = component_moments(latent.velocity, 1);
    const double pw = 1.0 - cfg.velocity_weight, vw = cfg.velocity_weight;
    for (std::size_t t = 0; t < n; ++t) {
        const double z[4] = {pw * (latent.position[t][0] - py.mean) / py.std,
                             pw * (latent.position[t][1] - px.mean) / px.std,
                             vw * (latent.velocity[t][0] - vy.mean) / vy.std,
                             vw * (latent.velocity[t][1] - vx.mean) / vx.std};
        for (std::size_t j = 0; j < kTargetDim; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 4; ++k) acc += m(j, k) * z[k];
            seq.targets(t, j) = static_cast<float>(acc);
        }
    }
    return seq;
}

CorpusLayout generate_corpus(const SynthConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (cfg.train_sequences < 1 || cfg.dev_sequences < 1 || cfg.test_sequences < 1)
        throw UsageError("every split needs at least one sequence");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw DataError("cannot create corpus directory \"" + out_dir + "\": " + ec.message());

    CorpusLayout layout;
    layout.manifest.base_dir = out_dir;
    const struct {
        Split split;
        std::size_t count;
    } plan[] = {{Split::kTrain, cfg.train_sequences},
                {Split::kDev, cfg.dev_sequences},
                {Split::kTest, cfg.test_sequences}};
    std::size_t index = 0;
    for (const auto& part : plan) {
        for (std::size_t i = 0; i < part.count; ++i, ++index) {
            const UltrasoundSequence seq = generate_sequence(cfg, index);
            const std::string name = seq.id + ".uds";
            const std::string path = out_dir + "/" + name;
            save_container(seq, path);
            layout.container_paths.push_back(path);
            layout.manifest.entries.push_back(ManifestEntry{name, part.split});
        }
    }
    layout.manifest_path = out_dir + "/manifest.tsv";
    save_manifest(layout.manifest, layout.manifest_path);
    return layout;
}

} // namespace ssi
