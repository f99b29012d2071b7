#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "ssi/data.hpp"
#include "ssi/errors.hpp"
#include "ssi/model.hpp"
#include "ssi/train.hpp"
#include "testutil.hpp"

using ssi::Shape;
using ssi::Split;
using ssi::Tensor;
using ssi::UltrasoundSequence;
using ssi::WindowMode;

namespace {

/// A sequence whose frames and targets are deterministic but distinct per
/// frame, so window assembly mistakes show up as value mismatches.
UltrasoundSequence make_seq(std::string id, std::size_t n, std::size_t h, std::size_t w,
                            std::uint64_t seed, double frame_offset = 0.0) {
    ssi::Rng rng(seed);
    UltrasoundSequence seq;
    seq.id = std::move(id);
    seq.fps = 82.0f;
    seq.frames = Tensor<float>(Shape{n, h, w, 1});
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < h * w; ++i)
            seq.frames[t * h * w + i] =
                static_cast<float>(frame_offset + rng.uniform(0.0, 255.0));
    seq.targets = testutil::random_tensor<float>(Shape{n, ssi::kTargetDim}, rng, -2.0, 2.0);
    for (auto& v : seq.targets) v += static_cast<float>(frame_offset * 0.1);
    return seq;
}

} // namespace

// ---------------------------------------------------------------------------
// Container
// ---------------------------------------------------------------------------

TEST_CASE("container round-trips bit-identically") {
    testutil::TempDir dir;
    const auto seq = make_seq("probe-\xce\xb2", 7, 16, 6, 11); // UTF-8 id
    const std::string path = dir.file("seq.uds");
    ssi::save_container(seq, path);

    const auto loaded = ssi::load_container(path);
    CHECK(loaded.id == seq.id);
    CHECK(loaded.fps == seq.fps);
    REQUIRE(loaded.frames.shape() == seq.frames.shape());
    REQUIRE(loaded.targets.shape() == seq.targets.shape());
    CHECK(std::memcmp(loaded.frames.data(), seq.frames.data(),
                      seq.frames.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(loaded.targets.data(), seq.targets.data(),
                      seq.targets.size() * sizeof(float)) == 0);
}

TEST_CASE("container rejects malformed files with byte offsets") {
    testutil::TempDir dir;
    const auto seq = make_seq("seq-a", 3, 4, 2, 13);
    const std::string path = dir.file("seq.uds");
    ssi::save_container(seq, path);
    const auto pristine = testutil::read_file_bytes(path);
    const std::size_t frames_at = 4 + 4 + 4 + 4 + 4 + 4 + 2 + seq.id.size();

    auto expect_parse_error = [&](const std::vector<unsigned char>& bytes,
                                  const std::string& needle, std::uint64_t offset,
                                  bool check_offset = true) {
        testutil::write_file_bytes(path, bytes);
        try {
            ssi::load_container(path);
            FAIL("expected ParseError for " << needle);
        } catch (const ssi::ParseError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
            if (check_offset) CHECK(e.offset() == offset);
        }
    };

    auto bytes = pristine;
    bytes[0] = 'X';
    expect_parse_error(bytes, "magic", 0);

    bytes = pristine;
    bytes[4] = 9; // version 9
    expect_parse_error(bytes, "version", 4);

    bytes = pristine;
    bytes[8] = bytes[9] = bytes[10] = bytes[11] = 0; // N = 0
    expect_parse_error(bytes, "empty sequence", 8);

    bytes = pristine;
    bytes.resize(bytes.size() - 5); // truncated targets
    expect_parse_error(bytes, "unexpected end of file", 0, false);

    bytes = pristine;
    // frame value 5 -> quiet NaN
    const std::size_t nan_at = frames_at + 4 * 5;
    bytes[nan_at + 0] = 0x00;
    bytes[nan_at + 1] = 0x00;
    bytes[nan_at + 2] = 0xc0;
    bytes[nan_at + 3] = 0x7f;
    expect_parse_error(bytes, "non-finite frame value at index 5", nan_at);

    bytes = pristine;
    bytes.push_back(0x00);
    expect_parse_error(bytes, "trailing bytes", pristine.size());

    CHECK_THROWS_AS(ssi::load_container(dir.file("missing.uds")), ssi::DataError);
}

TEST_CASE("container save validates the sequence") {
    testutil::TempDir dir;
    auto seq = make_seq("seq-b", 2, 3, 2, 17);
    seq.frames[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(ssi::save_container(seq, dir.file("bad.uds")), ssi::UsageError);

    auto mismatched = make_seq("seq-c", 2, 3, 2, 19);
    mismatched.targets = Tensor<float>(Shape{3, ssi::kTargetDim});
    CHECK_THROWS_AS(ssi::save_container(mismatched, dir.file("bad.uds")), ssi::ShapeError);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

TEST_CASE("scan-line resampling: constant, identity, linear ramp") {
    // constant input stays constant
    Tensor<float> flat(Shape{2, 5, 3, 1}, 3.25f);
    const auto flat_out = ssi::resample_scanlines(flat, 7);
    CHECK(flat_out.shape() == Shape{2, 7, 3, 1});
    for (const float v : flat_out) CHECK(v == 3.25f);

    // matching height reproduces the input exactly
    ssi::Rng rng(23);
    const auto same = testutil::random_tensor<float>(Shape{3, 9, 4, 1}, rng);
    const auto same_out = ssi::resample_scanlines(same, 9);
    CHECK(std::memcmp(same_out.data(), same.data(), same.size() * sizeof(float)) == 0);

    // a linear ramp resamples onto the analytic line, per scan line
    const std::size_t hraw = 946, out_h = 128, w = 2;
    Tensor<double> ramp(Shape{1, hraw, w, 1});
    for (std::size_t i = 0; i < hraw; ++i)
        for (std::size_t j = 0; j < w; ++j)
            ramp(std::size_t{0}, i, j, std::size_t{0}) =
                static_cast<double>(i) + 1000.0 * static_cast<double>(j);
    const auto ramp_out = ssi::resample_scanlines(ramp, out_h);
    for (std::size_t k = 0; k < out_h; ++k)
        for (std::size_t j = 0; j < w; ++j) {
            const double want = 945.0 * static_cast<double>(k) / 127.0 +
                                1000.0 * static_cast<double>(j);
            CHECK(std::abs(ramp_out(std::size_t{0}, k, j, std::size_t{0}) - want) < 1e-9);
        }
}

TEST_CASE("scan-line resampling rejects degenerate extents") {
    Tensor<float> one_sample(Shape{1, 1, 3, 1}, 1.0f);
    CHECK_THROWS_AS(ssi::resample_scanlines(one_sample, 4), ssi::UsageError);
    Tensor<float> ok(Shape{1, 4, 3, 1}, 1.0f);
    CHECK_THROWS_AS(ssi::resample_scanlines(ok, 1), ssi::UsageError);
    Tensor<float> rank3(Shape{4, 3, 1}, 1.0f);
    CHECK_THROWS_AS(ssi::resample_scanlines(rank3, 4), ssi::ShapeError);
}

// ---------------------------------------------------------------------------
// Pixel normalization
// ---------------------------------------------------------------------------

TEST_CASE("min-max normalization maps the fitted range onto [-1,1] exactly") {
    Tensor<float> frames(Shape{1, 1, 3, 1});
    frames[0] = 0.0f;
    frames[1] = 255.0f;
    frames[2] = 127.5f;
    const auto norm = ssi::fit_pixel_range({&frames});
    CHECK(norm.lo == 0.0f);
    CHECK(norm.hi == 255.0f);
    const auto out = ssi::minmax_normalize(frames, norm);
    CHECK(out[0] == -1.0f);
    CHECK(out[1] == 1.0f);
    CHECK(out[2] == 0.0f);

    // values beyond the fitted range extrapolate linearly
    Tensor<float> wider(Shape{1, 1, 1, 1}, 510.0f);
    CHECK(ssi::minmax_normalize(wider, norm)[0] == 3.0f);

    // degenerate range maps everything to zero
    Tensor<float> constant(Shape{2, 2, 2, 1}, 42.0f);
    const auto flat = ssi::minmax_normalize(constant, ssi::fit_pixel_range({&constant}));
    for (const float v : flat) CHECK(v == 0.0f);

    // the fitted split's extremes land exactly on -1 and +1
    ssi::Rng rng(29);
    const auto a = testutil::random_tensor<float>(Shape{2, 6, 4, 1}, rng, -7.0, 55.0);
    const auto b = testutil::random_tensor<float>(Shape{3, 6, 4, 1}, rng, 3.0, 80.0);
    const auto joint = ssi::fit_pixel_range({&a, &b});
    float lo = 1e30f, hi = -1e30f;
    for (const auto* t : {&a, &b}) {
        const auto n = ssi::minmax_normalize(*t, joint);
        for (const float v : n) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    CHECK(lo == -1.0f);
    CHECK(hi == 1.0f);

    CHECK_THROWS_AS(ssi::fit_pixel_range({}), ssi::DataError);
}

// ---------------------------------------------------------------------------
// Target scaler
// ---------------------------------------------------------------------------

TEST_CASE("target scaler: hand-computed statistics and transform") {
    Tensor<float> targets(Shape{3, ssi::kTargetDim});
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        targets(std::size_t{0}, j) = 2.0f;
        targets(std::size_t{1}, j) = 4.0f;
        targets(std::size_t{2}, j) = 6.0f;
    }
    const auto scaler = ssi::fit_target_scaler({&targets});
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        CHECK(scaler.mean[j] == doctest::Approx(4.0).epsilon(1e-15));
        CHECK(scaler.stddev[j] == doctest::Approx(1.6329931618554521).epsilon(1e-12));
    }
    const auto out = ssi::apply_scaler(targets, scaler);
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        CHECK(out(std::size_t{0}, j) == doctest::Approx(-1.2247448713915890).epsilon(1e-6));
        CHECK(out(std::size_t{1}, j) == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(out(std::size_t{2}, j) == doctest::Approx(1.2247448713915890).epsilon(1e-6));
    }
}

TEST_CASE("target scaler: standardization, near-identity, round-trip") {
    ssi::Rng rng(31);
    auto raw = testutil::random_tensor<float>(Shape{40, ssi::kTargetDim}, rng, -3.0, 9.0);
    const auto scaler = ssi::fit_target_scaler({&raw});
    const auto std_targets = ssi::apply_scaler(raw, scaler);

    // transformed train targets: per-dimension mean ~0, variance ~1
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 40; ++i) mean += std_targets(i, j);
        mean /= 40.0;
        double var = 0.0;
        for (std::size_t i = 0; i < 40; ++i) {
            const double d = std_targets(i, j) - mean;
            var += d * d;
        }
        var /= 40.0;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }

    // already-standard data fits to scaler ~ (0,1) and transforms ~ identity
    Tensor<float> standard(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) standard[i] = std_targets[i];
    const auto unit = ssi::fit_target_scaler({&standard});
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        CHECK(std::abs(unit.mean[j]) < 1e-6);
        CHECK(std::abs(unit.stddev[j] - 1.0) < 1e-6);
    }
    const auto twice = ssi::apply_scaler(standard, unit);
    for (std::size_t i = 0; i < twice.size(); ++i)
        CHECK(twice[i] == doctest::Approx(standard[i]).epsilon(1e-5));

    // apply then invert recovers the originals (double precision math)
    Tensor<double> fine(Shape{5, ssi::kTargetDim});
    ssi::Rng rng2(37);
    for (auto& v : fine) v = rng2.uniform(-4.0, 4.0);
    const auto back = ssi::invert_scaler(ssi::apply_scaler(fine, scaler), scaler);
    for (std::size_t i = 0; i < fine.size(); ++i)
        CHECK(std::abs(back[i] - fine[i]) < 1e-9);
}

TEST_CASE("target scaler rejects zero variance, naming the dimension") {
    ssi::Rng rng(41);
    auto targets = testutil::random_tensor<float>(Shape{6, ssi::kTargetDim}, rng);
    for (std::size_t i = 0; i < 6; ++i) targets(i, std::size_t{5}) = 0.75f;
    try {
        ssi::fit_target_scaler({&targets});
        FAIL("expected DataError");
    } catch (const ssi::DataError& e) {
        CHECK(std::string(e.what()).find("dimension 5") != std::string::npos);
    }
    CHECK_THROWS_AS(ssi::fit_target_scaler({}), ssi::DataError);
}

// ---------------------------------------------------------------------------
// Statistics file
// ---------------------------------------------------------------------------

TEST_CASE("statistics file round-trips bit-exactly") {
    testutil::TempDir dir;
    ssi::PreprocessStats stats;
    stats.pixels.lo = -0.123456789f;
    stats.pixels.hi = 3.14159274f;
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        stats.targets.mean[j] = std::sin(static_cast<double>(j) + 0.1) * 1e3;
        stats.targets.stddev[j] = std::exp(static_cast<double>(j) * 0.37) + 1e-6;
    }
    const std::string path = dir.file("stats.txt");
    ssi::save_stats(stats, path);
    const auto loaded = ssi::load_stats(path);
    CHECK(loaded.pixels.lo == stats.pixels.lo);
    CHECK(loaded.pixels.hi == stats.pixels.hi);
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        CHECK(loaded.targets.mean[j] == stats.targets.mean[j]);
        CHECK(loaded.targets.stddev[j] == stats.targets.stddev[j]);
    }
}

TEST_CASE("statistics file rejects malformed content") {
    testutil::TempDir dir;
    ssi::PreprocessStats stats;
    stats.pixels.lo = 0.0f;
    stats.pixels.hi = 1.0f;
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        stats.targets.mean[j] = 0.0;
        stats.targets.stddev[j] = 1.0;
    }
    const std::string path = dir.file("stats.txt");

    auto corrupt = [&](auto mutate, const std::string& needle) {
        ssi::save_stats(stats, path);
        auto bytes = testutil::read_file_bytes(path);
        std::string text(bytes.begin(), bytes.end());
        mutate(text);
        testutil::write_file_bytes(path,
                                   std::vector<unsigned char>(text.begin(), text.end()));
        try {
            ssi::load_stats(path);
            FAIL("expected ParseError containing: " << needle);
        } catch (const ssi::ParseError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    corrupt([](std::string& t) { t.erase(0, t.find('\n') + 1); }, "missing statistics key");
    corrupt([](std::string& t) { t += "bogus=1\n"; }, "unknown statistics key");
    corrupt([](std::string& t) { t += "pixel_min=0\n"; }, "duplicate statistics key");
    corrupt([](std::string& t) { t.replace(t.find('='), 2, "=zz"); }, "bad numeric value");
    corrupt([](std::string& t) { t.replace(t.find("target_std_0=1"), 14, "target_std_0=0"); },
            "must be positive");
    corrupt([](std::string& t) { t.replace(t.find('='), 1, " "); }, "missing '='");

    CHECK_THROWS_AS(ssi::load_stats(dir.file("missing.txt")), ssi::DataError);
}

// ---------------------------------------------------------------------------
// Window indexing
// ---------------------------------------------------------------------------

TEST_CASE("window indices follow the sampling rule with edge clamping") {
    using ssi::window_indices;
    CHECK(window_indices(100, 1000, 6, WindowMode::kSampled) ==
          std::vector<std::size_t>{88, 94, 100, 106, 112});
    CHECK(window_indices(3, 1000, 6, WindowMode::kSampled) ==
          std::vector<std::size_t>{0, 0, 3, 9, 15});
    CHECK(window_indices(999, 1000, 6, WindowMode::kSampled) ==
          std::vector<std::size_t>{987, 993, 999, 999, 999});
    CHECK(window_indices(4, 9, 2, WindowMode::kSingle) == std::vector<std::size_t>{4});

    const auto full = window_indices(50, 1000, 6, WindowMode::kFullWindow);
    REQUIRE(full.size() == 25);
    for (std::size_t k = 0; k < 25; ++k) CHECK(full[k] == 38 + k);
    CHECK(full.back() - full.front() == 24); // ~293 ms of context at 82 fps

    CHECK(ssi::window_length(WindowMode::kSingle, 0) == 1);
    CHECK(ssi::window_length(WindowMode::kSampled, 9) == 5);
    CHECK(ssi::window_length(WindowMode::kFullWindow, 6) == 25);

    CHECK_THROWS_AS(window_indices(0, 5, 0, WindowMode::kSampled), ssi::UsageError);
    CHECK_THROWS_AS(window_indices(0, 0, 1, WindowMode::kSampled), ssi::UsageError);
    CHECK_THROWS_AS(window_indices(5, 5, 1, WindowMode::kSampled), ssi::UsageError);
}

TEST_CASE("make_windows emits one aligned example per frame") {
    const auto seq = make_seq("win", 9, 4, 3, 43);
    struct Case {
        std::size_t s;
        WindowMode mode;
    };
    for (const auto& c : {Case{1, WindowMode::kSingle}, Case{2, WindowMode::kSampled},
                          Case{2, WindowMode::kFullWindow}}) {
        const auto examples = ssi::make_windows(seq, c.s, c.mode);
        REQUIRE(examples.size() == 9);
        const std::size_t len = ssi::window_length(c.mode, c.s);
        for (std::size_t t = 0; t < 9; ++t) {
            const auto& ex = examples[t];
            CHECK(ex.center_frame == t);
            CHECK(ex.sequence_id == "win");
            REQUIRE(ex.input.shape() == Shape{len, 4, 3, 1});
            const auto idx = ssi::window_indices(t, 9, c.s, c.mode);
            for (std::size_t k = 0; k < len; ++k)
                CHECK(std::memcmp(ex.input.data() + k * 12, seq.frames.data() + idx[k] * 12,
                                  12 * sizeof(float)) == 0);
            for (std::size_t j = 0; j < ssi::kTargetDim; ++j)
                CHECK(ex.target[j] == seq.targets(t, j));
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

TEST_CASE("manifest parsing, counts, and path resolution") {
    testutil::TempDir dir;
    const std::string path = dir.file("manifest.tsv");
    {
        std::ofstream out(path);
        out << "a.uds\ttrain\n"
            << "b.uds\tdev\n"
            << "\n"
            << "sub/c.uds\ttest\n"
            << "/abs/d.uds\ttrain\n";
    }
    const auto manifest = ssi::load_manifest(path);
    REQUIRE(manifest.entries.size() == 4);
    CHECK(manifest.count(Split::kTrain) == 2);
    CHECK(manifest.count(Split::kDev) == 1);
    CHECK(manifest.count(Split::kTest) == 1);
    CHECK(manifest.resolved_path(manifest.entries[0]) == dir.path + "/a.uds");
    CHECK(manifest.resolved_path(manifest.entries[2]) == dir.path + "/sub/c.uds");
    CHECK(manifest.resolved_path(manifest.entries[3]) == "/abs/d.uds");

    // save -> load preserves the entries
    const std::string copy = dir.file("copy.tsv");
    ssi::save_manifest(manifest, copy);
    const auto again = ssi::load_manifest(copy);
    REQUIRE(again.entries.size() == manifest.entries.size());
    for (std::size_t i = 0; i < again.entries.size(); ++i) {
        CHECK(again.entries[i].path == manifest.entries[i].path);
        CHECK(again.entries[i].split == manifest.entries[i].split);
    }

    CHECK(ssi::split_from_string("dev") == Split::kDev);
    CHECK_THROWS_AS(ssi::split_from_string("validation"), ssi::UsageError);
}

TEST_CASE("manifest rejects malformed lines with offsets") {
    testutil::TempDir dir;
    const std::string path = dir.file("manifest.tsv");

    auto expect_error = [&](const std::string& text, const std::string& needle,
                            std::uint64_t offset) {
        std::ofstream(path) << text;
        try {
            ssi::load_manifest(path);
            FAIL("expected ParseError containing: " << needle);
        } catch (const ssi::ParseError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
            CHECK(e.offset() == offset);
        }
    };

    expect_error("a.uds train\n", "missing tab", 0);
    expect_error("a.uds\ttrain\nb.uds\tvalidation\n", "unknown split", 12);
    expect_error("a.uds\ttrain\na.uds\tdev\n", "duplicate sequence path", 12);
    expect_error("\ttrain\n", "empty path", 0);
    CHECK_THROWS_AS(ssi::load_manifest(dir.file("missing.tsv")), ssi::DataError);
}

// ---------------------------------------------------------------------------
// WindowedDataset
// ---------------------------------------------------------------------------

TEST_CASE("windowed dataset batches match per-example assembly") {
    const auto seq_a = make_seq("alpha", 5, 4, 3, 47);
    const auto seq_b = make_seq("beta", 4, 4, 3, 53);
    ssi::WindowedDataset set(2, WindowMode::kSampled);
    set.add_sequence(seq_a.id, seq_a.frames, seq_a.targets);
    set.add_sequence(seq_b.id, seq_b.frames, seq_b.targets);

    CHECK(set.size() == 9);
    CHECK(set.num_sequences() == 2);
    CHECK(set.example_shape() == Shape{5, 4, 3, 1});
    CHECK(set.example_origin(0) == std::pair<std::string, std::size_t>("alpha", 0));
    CHECK(set.example_origin(5) == std::pair<std::string, std::size_t>("beta", 0));
    CHECK(set.example_origin(8) == std::pair<std::string, std::size_t>("beta", 3));

    const auto ex_a = ssi::make_windows(seq_a, 2, WindowMode::kSampled);
    const auto ex_b = ssi::make_windows(seq_b, 2, WindowMode::kSampled);
    const std::vector<std::size_t> idx{0, 6, 8, 3};
    const auto [inputs, targets] = set.gather(idx);
    REQUIRE(inputs.shape() == Shape{4, 5, 4, 3, 1});
    REQUIRE(targets.shape() == Shape{4, ssi::kTargetDim});
    const std::size_t ex_elems = 5 * 4 * 3;
    const ssi::WindowedExample* want[] = {&ex_a[0], &ex_b[1], &ex_b[3], &ex_a[3]};
    for (std::size_t b = 0; b < 4; ++b) {
        CHECK(std::memcmp(inputs.data() + b * ex_elems, want[b]->input.data(),
                          ex_elems * sizeof(float)) == 0);
        for (std::size_t j = 0; j < ssi::kTargetDim; ++j)
            CHECK(targets(b, j) == want[b]->target[j]);
    }

    CHECK_THROWS_AS(set.gather({9}), ssi::UsageError);
    CHECK_THROWS_AS(set.gather({}), ssi::UsageError);
    CHECK_THROWS_AS(set.example_origin(9), ssi::UsageError);

    const auto seq_c = make_seq("gamma", 3, 6, 3, 59); // wrong frame size
    CHECK_THROWS_AS(set.add_sequence(seq_c.id, seq_c.frames, seq_c.targets), ssi::ShapeError);

    ssi::WindowedDataset empty(1, WindowMode::kSingle);
    CHECK(empty.empty());
    CHECK_THROWS_AS(empty.example_shape(), ssi::UsageError);
    CHECK_THROWS_AS(ssi::WindowedDataset(0, WindowMode::kFullWindow), ssi::UsageError);
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

namespace {

struct Corpus {
    testutil::TempDir dir;
    std::vector<UltrasoundSequence> raw; // in manifest order

    explicit Corpus(std::uint64_t seed, double train1_offset = 0.0) {
        raw.push_back(make_seq("train-0", 6, 16, 4, seed));
        raw.push_back(make_seq("train-1", 5, 16, 4, seed + 1, train1_offset));
        raw.push_back(make_seq("dev-0", 4, 16, 4, seed + 2));
        raw.push_back(make_seq("test-0", 3, 16, 4, seed + 3));
        const char* split[] = {"train", "train", "dev", "test"};
        std::ofstream manifest(dir.file("manifest.tsv"));
        for (std::size_t i = 0; i < raw.size(); ++i) {
            const std::string name = raw[i].id + ".uds";
            ssi::save_container(raw[i], dir.file(name));
            manifest << name << '\t' << split[i] << '\n';
        }
    }
    std::string manifest_path() const { return dir.file("manifest.tsv"); }
};

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

} // namespace

TEST_CASE("pipeline fits statistics on the training split only") {
    Corpus corpus(61);
    ssi::PipelineConfig cfg;
    cfg.out_h = 8;
    cfg.stride_s = 1;
    cfg.mode = WindowMode::kSampled;
    const auto prepared = ssi::load_and_preprocess(corpus.manifest_path(), cfg);

    CHECK(prepared.train.size() == 11);
    CHECK(prepared.dev.size() == 4);
    CHECK(prepared.test.size() == 3);
    CHECK(prepared.train.example_shape() == Shape{5, 8, 4, 1});

    // the stored pixel range comes from the resampled train frames alone
    const auto r0 = ssi::resample_scanlines(corpus.raw[0].frames, 8);
    const auto r1 = ssi::resample_scanlines(corpus.raw[1].frames, 8);
    const auto want_pixels = ssi::fit_pixel_range({&r0, &r1});
    CHECK(prepared.stats.pixels.lo == want_pixels.lo);
    CHECK(prepared.stats.pixels.hi == want_pixels.hi);

    const auto want_scaler = ssi::fit_target_scaler({&corpus.raw[0].targets,
                                                     &corpus.raw[1].targets});
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        CHECK(prepared.stats.targets.mean[j] == want_scaler.mean[j]);
        CHECK(prepared.stats.targets.stddev[j] == want_scaler.stddev[j]);
    }

    // normalized train pixels span exactly [-1, 1]
    const auto [tin, ttg] = prepared.train.gather(iota_indices(11));
    float lo = 1e30f, hi = -1e30f;
    for (const float v : tin) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == -1.0f);
    CHECK(hi == 1.0f);

    // standardized train targets: mean ~0, variance ~1 per dimension
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < 11; ++i) mean += ttg(i, j);
        mean /= 11.0;
        for (std::size_t i = 0; i < 11; ++i) {
            const double d = ttg(i, j) - mean;
            var += d * d;
        }
        var /= 11.0;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }

    // dev targets are transformed with the TRAIN statistics
    const auto [din, dtg] = prepared.dev.gather(iota_indices(4));
    (void)din;
    const auto want_dev = ssi::apply_scaler(corpus.raw[2].targets, prepared.stats.targets);
    CHECK(std::memcmp(dtg.data(), want_dev.data(), want_dev.size() * sizeof(float)) == 0);

    // determinism: a second run reproduces the batches bit-for-bit
    const auto prepared2 = ssi::load_and_preprocess(corpus.manifest_path(), cfg);
    const auto [tin2, ttg2] = prepared2.train.gather(iota_indices(11));
    CHECK(std::memcmp(tin.data(), tin2.data(), tin.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(ttg.data(), ttg2.data(), ttg.size() * sizeof(float)) == 0);
}

TEST_CASE("changing the train split changes dev transforms, not vice versa") {
    ssi::PipelineConfig cfg;
    cfg.out_h = 8;
    cfg.mode = WindowMode::kSingle;

    Corpus base(67);
    Corpus shifted_train(67, 40.0); // same dev/test, different train-1 frames+targets
    const auto a = ssi::load_and_preprocess(base.manifest_path(), cfg);
    const auto b = ssi::load_and_preprocess(shifted_train.manifest_path(), cfg);

    const auto [da, ta] = a.dev.gather(iota_indices(4));
    const auto [db, tb] = b.dev.gather(iota_indices(4));
    // identical raw dev sequences, but train statistics moved
    CHECK(std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(float)) != 0);
    CHECK(std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) != 0);

    // swapping the dev split leaves the fitted statistics untouched
    Corpus other_dev(67);
    {
        auto replacement = make_seq("dev-0", 4, 16, 4, 9999);
        ssi::save_container(replacement, other_dev.dir.file("dev-0.uds"));
    }
    const auto c = ssi::load_and_preprocess(other_dev.manifest_path(), cfg);
    CHECK(c.stats.pixels.lo == a.stats.pixels.lo);
    CHECK(c.stats.pixels.hi == a.stats.pixels.hi);
    for (std::size_t j = 0; j < ssi::kTargetDim; ++j) {
        CHECK(c.stats.targets.mean[j] == a.stats.targets.mean[j]);
        CHECK(c.stats.targets.stddev[j] == a.stats.targets.stddev[j]);
    }
}

TEST_CASE("pipeline with pre-fitted statistics skips fitting") {
    Corpus corpus(71);
    ssi::PipelineConfig cfg;
    cfg.out_h = 8;
    cfg.mode = WindowMode::kSingle;
    const auto fitted = ssi::load_and_preprocess(corpus.manifest_path(), cfg);

    // an eval-only manifest without train sequences
    std::ofstream(corpus.dir.file("eval.tsv")) << "dev-0.uds\tdev\ntest-0.uds\ttest\n";
    CHECK_THROWS_AS(ssi::load_and_preprocess(corpus.dir.file("eval.tsv"), cfg),
                    ssi::DataError);
    const auto reused =
        ssi::load_and_preprocess(corpus.dir.file("eval.tsv"), cfg, fitted.stats);
    CHECK(reused.train.size() == 0);
    REQUIRE(reused.dev.size() == 4);
    const auto [da, ta] = fitted.dev.gather(iota_indices(4));
    const auto [db, tb] = reused.dev.gather(iota_indices(4));
    CHECK(std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(float)) == 0);

    // duplicate ids across containers are rejected
    std::ofstream(corpus.dir.file("dup.tsv"))
        << "train-0.uds\ttrain\ncopy.uds\tdev\n";
    ssi::save_container(corpus.raw[0], corpus.dir.file("copy.uds"));
    CHECK_THROWS_AS(ssi::load_and_preprocess(corpus.dir.file("dup.tsv"), cfg),
                    ssi::DataError);
}

TEST_CASE("windowed dataset drives the training loop end to end") {
    testutil::TempDir dir;
    // frames already at the compact working size 32x16
    const auto train_seq = make_seq("train-seq", 24, 32, 16, 73);
    const auto dev_seq = make_seq("dev-seq", 8, 32, 16, 79);
    ssi::save_container(train_seq, dir.file("train.uds"));
    ssi::save_container(dev_seq, dir.file("dev.uds"));
    std::ofstream(dir.file("manifest.tsv")) << "train.uds\ttrain\ndev.uds\tdev\n";

    ssi::PipelineConfig cfg;
    cfg.out_h = 32;
    cfg.mode = WindowMode::kSingle;
    const auto prepared = ssi::load_and_preprocess(dir.file("manifest.tsv"), cfg);

    auto model = ssi::build_model<float>(ssi::make_cnn2d_spec(true), 83);
    ssi::TrainConfig tc;
    tc.batch_size = 6;
    tc.max_epochs = 2;
    tc.learning_rate = 0.01;
    tc.seed = 89;
    const auto [best, hist] = ssi::train(std::move(model), prepared.train, prepared.dev, tc);
    REQUIRE(hist.epochs.size() == 2);
    for (const auto& e : hist.epochs) {
        CHECK(std::isfinite(e.train_mse));
        CHECK(std::isfinite(e.dev_mse));
    }
    const auto report = ssi::evaluate(best, prepared.dev, "dev");
    CHECK(std::isfinite(report.mse));
    CHECK(report.n_examples == 8);
}
