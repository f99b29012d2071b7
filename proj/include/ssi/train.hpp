#pragma once

// SGD training loop with MSE loss, dev-driven learning-rate halving,
// best-epoch checkpointing, and evaluation metrics (MSE, per-target R²).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ssi/errors.hpp"
#include "ssi/model.hpp"
#include "ssi/rng.hpp"
#include "ssi/tensor.hpp"

namespace ssi {

inline constexpr std::size_t kNumTargets = 13;

struct TrainConfig {
    std::size_t batch_size = 100;
    double learning_rate = 0.05;
    int patience_epochs = 1; // epochs without dev improvement before halving
    int max_halvings = 5;    // stop when the next halving would exceed this
    std::size_t max_epochs = 100;
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const {
        if (batch_size < 1) throw UsageError("batch_size must be >= 1");
        // 0 is allowed as an explicit no-op rate (diagnostics); negatives are not
        if (learning_rate < 0.0) throw UsageError("learning_rate must be >= 0");
        if (patience_epochs < 1) throw UsageError("patience_epochs must be >= 1");
        if (max_halvings < 0) throw UsageError("max_halvings must be >= 0");
        if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
    }
};

struct MetricsReport {
    double mse = 0.0;
    std::array<double, kNumTargets> r2_per_target{};
    double mean_r2 = 0.0;
    std::string split;
    std::size_t n_examples = 0;
    int degenerate_targets = 0; // zero-variance targets excluded from mean_r2
};

struct EpochStats {
    double train_mse = 0.0;
    double dev_mse = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0; // 1-based; 0 = no epoch ran
    double best_dev_mse = std::numeric_limits<double>::infinity();
};

/// In-memory example store: inputs [N,T,H,W,C], targets [N,13]. Any type
/// with the same size/example_shape/gather surface can feed train/evaluate.
template <typename T>
struct InMemorySet {
    Tensor<T> inputs;
    Tensor<T> targets;

    std::size_t size() const { return inputs.size() ? inputs.extent(0) : 0; }

    Shape example_shape() const {
        return Shape(inputs.shape().begin() + 1, inputs.shape().end());
    }

    std::pair<Tensor<T>, Tensor<T>> gather(const std::vector<std::size_t>& idx) const {
        const std::size_t n = size();
        const std::size_t in_row = inputs.size() / n;
        const std::size_t tg_row = targets.size() / n;
        Shape in_shape = inputs.shape();
        in_shape[0] = idx.size();
        Shape tg_shape = targets.shape();
        tg_shape[0] = idx.size();
        Tensor<T> bin(in_shape);
        Tensor<T> btg(tg_shape);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= n) throw UsageError("gather index out of range");
            std::copy_n(inputs.data() + idx[r] * in_row, in_row, bin.data() + r * in_row);
            std::copy_n(targets.data() + idx[r] * tg_row, tg_row, btg.data() + r * tg_row);
        }
        return {std::move(bin), std::move(btg)};
    }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean squared error over all B*13 entries, with its exact gradient
/// 2*(pred-target)/(B*13). The loss accumulates in double regardless of T.
template <typename T>
std::pair<double, Tensor<T>> mse_loss_and_grad(const Tensor<T>& pred,
                                               const Tensor<T>& target) {
    if (!pred.same_shape(target))
        throw ShapeError("loss shapes differ: " + to_string(pred.shape()) + " vs " +
                         to_string(target.shape()));
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double loss = 0.0;
    Tensor<T> grad(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        loss += d * d * inv_n;
        grad[i] = static_cast<T>(2.0 * d * inv_n);
    }
    return {loss, std::move(grad)};
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// p <- p - lr*g for every parameter. Plain SGD, no momentum.
template <typename T>
void sgd_step(Model<T>& model, const std::vector<LayerGrads<T>>& grads, double lr) {
    for_each_param_grad(model, grads, [lr](Tensor<T>& p, const Tensor<T>& g) {
        if (!p.same_shape(g))
            throw ShapeError("gradient shape " + to_string(g.shape()) +
                             " does not match parameter " + to_string(p.shape()));
        const T step = static_cast<T>(lr);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step * g[i];
    });
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Inference-mode metrics over a split: MSE over all outputs and per-target
/// R² = 1 - SSres/SStot, with SStot taken from this split's own means.
/// Zero-variance targets get a NaN R², are excluded from mean_r2, and are
/// counted in degenerate_targets.
template <typename T, typename Data>
MetricsReport evaluate(const Model<T>& model, const Data& split, const std::string& name,
                       std::size_t batch_size = 100) {
    const std::size_t n = split.size();
    if (n == 0) throw UsageError("evaluate called on an empty split");
    if (batch_size < 1) throw UsageError("evaluate batch size must be >= 1");

    // target means first (targets are cheap; predictions are not)
    std::array<double, kNumTargets> mean{};
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const auto [bin, btg] = split.gather(idx);
        (void)bin;
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < kNumTargets; ++j)
                mean[j] += static_cast<double>(btg(r, j));
    }
    for (auto& m : mean) m /= static_cast<double>(n);

    std::array<double, kNumTargets> ss_res{}, ss_tot{};
    double se_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        const auto [bin, btg] = split.gather(idx);
        const Tensor<T> pred = model_forward(model, bin, false, nullptr);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < kNumTargets; ++j) {
                const double y = static_cast<double>(btg(r, j));
                const double p = static_cast<double>(pred(r, j));
                const double d = p - y;
                se_sum += d * d;
                ss_res[j] += d * d;
                const double c = y - mean[j];
                ss_tot[j] += c * c;
            }
    }

    MetricsReport report;
    report.split = name;
    report.n_examples = n;
    report.mse = se_sum / static_cast<double>(n * kNumTargets);
    double r2_sum = 0.0;
    int r2_count = 0;
    for (std::size_t j = 0; j < kNumTargets; ++j) {
        if (ss_tot[j] == 0.0) {
            report.r2_per_target[j] = std::numeric_limits<double>::quiet_NaN();
            ++report.degenerate_targets;
        } else {
            report.r2_per_target[j] = 1.0 - ss_res[j] / ss_tot[j];
            r2_sum += report.r2_per_target[j];
            ++r2_count;
        }
    }
    report.mean_r2 =
        r2_count ? r2_sum / r2_count : std::numeric_limits<double>::quiet_NaN();
    return report;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One shuffled pass per epoch in batches of batch_size (final short batch
/// kept), dropout active only in training forwards. After each epoch the
/// model is evaluated (inference mode) on both splits; the dev MSE drives
/// patience-based learning-rate halving, and the best-dev parameters are
/// returned. Throws NumericError naming (epoch, batch, loss) if the loss
/// leaves the finite range.
template <typename T, typename Data>
std::pair<Model<T>, TrainHistory> train(Model<T> model, const Data& train_split,
                                        const Data& dev_split, const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = train_split.size();
    if (n == 0) throw UsageError("training split is empty");
    if (dev_split.size() == 0) throw UsageError("dev split is empty");

    Rng shuffle_rng = Rng::stream(cfg.seed, 0x5u);
    Rng dropout_rng = Rng::stream(cfg.seed, 0xDu);

    TrainHistory hist;
    Model<T> best = model;
    double lr = cfg.learning_rate;
    int stale_epochs = 0;
    int halvings = 0;

    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (cfg.shuffle)
            for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[shuffle_rng.below(i + 1)]);

        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            const std::vector<std::size_t> idx(perm.begin() + start, perm.begin() + stop);
            const auto [bx, by] = train_split.gather(idx);

            std::vector<AnyCache<T>> caches;
            const Tensor<T> pred = model_forward(model, bx, true, &dropout_rng, &caches);
            auto [loss, grad] = mse_loss_and_grad(pred, by);
            if (!std::isfinite(loss))
                throw NumericError("training loss became non-finite (" +
                                   std::to_string(loss) + ") at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            const auto grads = model_backward(grad, model, caches);
            sgd_step(model, grads, lr);
        }

        const double train_mse =
            evaluate(model, train_split, "train", cfg.batch_size).mse;
        const double dev_mse = evaluate(model, dev_split, "dev", cfg.batch_size).mse;
        hist.epochs.push_back(EpochStats{train_mse, dev_mse, lr});

        if (dev_mse < hist.best_dev_mse) {
            hist.best_dev_mse = dev_mse;
            hist.best_epoch = epoch;
            best = model;
            stale_epochs = 0;
        } else {
            ++stale_epochs;
            if (stale_epochs >= cfg.patience_epochs) {
                if (halvings >= cfg.max_halvings) break;
                lr *= 0.5;
                ++halvings;
                stale_epochs = 0;
            }
        }
    }
    return {std::move(best), std::move(hist)};
}

// ---------------------------------------------------------------------------
// History export
// ---------------------------------------------------------------------------

inline void write_history_csv(const TrainHistory& hist, std::ostream& out) {
    out << "epoch,train_mse,dev_mse,lr\n";
    for (std::size_t i = 0; i < hist.epochs.size(); ++i) {
        const auto& e = hist.epochs[i];
        out << (i + 1) << ',' << io::format_g17(e.train_mse) << ','
            << io::format_g17(e.dev_mse) << ',' << io::format_g17(e.lr) << '\n';
    }
}

} // namespace ssi
