#pragma once

// Declarative builders for the three network families (fully connected,
// single-frame 2D CNN, decomposed spatial+temporal 3D CNN), parameter
// counting, Glorot initialization, whole-model forward/backward, and the
// binary checkpoint format.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ssi/errors.hpp"
#include "ssi/io.hpp"
#include "ssi/layers.hpp"
#include "ssi/rng.hpp"
#include "ssi/tensor.hpp"

namespace ssi {

enum class ModelKind { kFcn, kCnn2d, kCnn3d };
enum class TemporalMode { kSampled, kFullWindow };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::kFcn: return "fcn";
        case ModelKind::kCnn2d: return "cnn2d";
        case ModelKind::kCnn3d: return "cnn3d";
    }
    return "?";
}

inline std::string to_string(TemporalMode m) {
    return m == TemporalMode::kSampled ? "sampled" : "full_window";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "fcn") return ModelKind::kFcn;
    if (s == "cnn2d") return ModelKind::kCnn2d;
    if (s == "cnn3d") return ModelKind::kCnn3d;
    throw UsageError("unknown model kind '" + s + "' (expected fcn, cnn2d, or cnn3d)");
}

inline TemporalMode temporal_mode_from_string(const std::string& s) {
    if (s == "sampled") return TemporalMode::kSampled;
    if (s == "full_window") return TemporalMode::kFullWindow;
    throw UsageError("unknown temporal mode '" + s + "' (expected sampled or full_window)");
}

// ---------------------------------------------------------------------------
// Layer descriptors and model specs
// ---------------------------------------------------------------------------

struct ConvDesc {
    int filters;
    std::array<int, 3> kernel;
    std::array<int, 3> stride;
    std::array<PadMode, 3> pad;
};
struct DenseDesc {
    int units;
    Activation activation;
};
struct DropoutDesc {
    double rate;
};
struct MaxPoolDesc {
    std::array<int, 3> pool;
};
struct FlattenDesc {};
struct SwishDesc {};

using LayerDesc =
    std::variant<ConvDesc, SwishDesc, DropoutDesc, MaxPoolDesc, FlattenDesc, DenseDesc>;

struct ModelSpec {
    ModelKind kind = ModelKind::kFcn;
    TemporalMode temporal_mode = TemporalMode::kSampled; // cnn3d only
    int stride_s = 1;                                    // cnn3d only
    bool tiny = false;
    Shape input_shape; // (T, H, W, C)
    std::vector<LayerDesc> layers;
};

namespace detail {

constexpr std::array<PadMode, 3> kTimeValidSpaceSame{PadMode::kValid, PadMode::kSame,
                                                     PadMode::kSame};

inline void push_conv_block(std::vector<LayerDesc>& v, int filters, std::array<int, 3> kernel,
                            std::array<int, 3> stride, double rate) {
    v.push_back(ConvDesc{filters, kernel, stride, kTimeValidSpaceSame});
    v.push_back(SwishDesc{});
    v.push_back(DropoutDesc{rate});
}

} // namespace detail

/// Frame geometry: full-size models see 128x64 scan data, tiny variants 32x16.
inline std::pair<std::size_t, std::size_t> frame_extents(bool tiny) {
    return tiny ? std::pair<std::size_t, std::size_t>{32, 16}
                : std::pair<std::size_t, std::size_t>{128, 64};
}

/// Fully connected baseline: one flattened frame through 5 hidden layers
/// (350 wide, swish, dropout 0.2 each) to a linear 13-way output.
/// Tiny variant: width 34, parameter-matched to the tiny conv models.
inline ModelSpec make_fcn_spec(bool tiny = false) {
    ModelSpec spec;
    spec.kind = ModelKind::kFcn;
    spec.tiny = tiny;
    const auto [h, w] = frame_extents(tiny);
    spec.input_shape = Shape{1, h, w, 1};
    spec.layers.push_back(FlattenDesc{});
    const int width = tiny ? 34 : 350;
    for (int i = 0; i < 5; ++i) {
        spec.layers.push_back(DenseDesc{width, Activation::kSwish});
        spec.layers.push_back(DropoutDesc{0.2});
    }
    spec.layers.push_back(DenseDesc{13, Activation::kLinear});
    return spec;
}

/// Single-frame CNN: four strided 13x13 convolutions (30/60/90/120 filters,
/// the third with asymmetric stride (2,1)) with two 2x2 max pools, then
/// Dense(500) and the linear 13-way output. Expressed over the 3D primitives
/// with time extent 1. Tiny variant: two 3x3 convolutions, 16/32 filters,
/// one pool, Dense(64).
inline ModelSpec make_cnn2d_spec(bool tiny = false) {
    ModelSpec spec;
    spec.kind = ModelKind::kCnn2d;
    spec.tiny = tiny;
    const auto [h, w] = frame_extents(tiny);
    spec.input_shape = Shape{1, h, w, 1};
    auto& v = spec.layers;
    if (tiny) {
        detail::push_conv_block(v, 16, {1, 3, 3}, {1, 2, 2}, 0.2);
        detail::push_conv_block(v, 32, {1, 3, 3}, {1, 2, 2}, 0.2);
        v.push_back(MaxPoolDesc{{1, 2, 2}});
        v.push_back(FlattenDesc{});
        v.push_back(DenseDesc{64, Activation::kSwish});
        v.push_back(DropoutDesc{0.2});
        v.push_back(DenseDesc{13, Activation::kLinear});
        return spec;
    }
    detail::push_conv_block(v, 30, {1, 13, 13}, {1, 2, 2}, 0.2);
    detail::push_conv_block(v, 60, {1, 13, 13}, {1, 2, 2}, 0.2);
    v.push_back(MaxPoolDesc{{1, 2, 2}});
    detail::push_conv_block(v, 90, {1, 13, 13}, {1, 2, 1}, 0.2);
    detail::push_conv_block(v, 120, {1, 13, 13}, {1, 2, 2}, 0.2);
    v.push_back(MaxPoolDesc{{1, 2, 2}});
    v.push_back(FlattenDesc{});
    v.push_back(DenseDesc{500, Activation::kSwish});
    v.push_back(DropoutDesc{0.2});
    v.push_back(DenseDesc{13, Activation::kLinear});
    return spec;
}

/// Decomposed 3D CNN. The first convolution carries the whole temporal
/// kernel (5 frames, valid padding); every later convolution is purely
/// spatial (time kernel 1), so the stack is a (2+1)D decomposition with the
/// frame-fusion step at the first layer. Two temporal regimes:
///   sampled     — the data pipeline feeds 5 frames taken s apart; the
///                 temporal stride here is 1 and the model size is
///                 independent of s (default);
///   full_window — the model sees all 4s+1 consecutive frames and skips
///                 frames itself via temporal stride s.
/// The top convolution has 85 filters to keep the total parameter count in
/// the same range as the 2D network.
inline ModelSpec make_cnn3d_spec(int stride_s, TemporalMode mode = TemporalMode::kSampled,
                                 bool tiny = false) {
    if (stride_s < 1)
        throw UsageError("temporal stride must be >= 1, got " + std::to_string(stride_s));
    ModelSpec spec;
    spec.kind = ModelKind::kCnn3d;
    spec.temporal_mode = mode;
    spec.stride_s = stride_s;
    spec.tiny = tiny;
    const auto [h, w] = frame_extents(tiny);
    const std::size_t frames =
        mode == TemporalMode::kSampled ? 5 : 4 * static_cast<std::size_t>(stride_s) + 1;
    spec.input_shape = Shape{frames, h, w, 1};
    const int st = mode == TemporalMode::kSampled ? 1 : stride_s;
    auto& v = spec.layers;
    if (tiny) {
        detail::push_conv_block(v, 16, {5, 3, 3}, {st, 2, 2}, 0.2);
        detail::push_conv_block(v, 32, {1, 3, 3}, {1, 2, 2}, 0.2);
        v.push_back(MaxPoolDesc{{1, 2, 2}});
        v.push_back(FlattenDesc{});
        v.push_back(DenseDesc{64, Activation::kSwish});
        v.push_back(DropoutDesc{0.2});
        v.push_back(DenseDesc{13, Activation::kLinear});
        return spec;
    }
    detail::push_conv_block(v, 30, {5, 13, 13}, {st, 2, 2}, 0.2);
    detail::push_conv_block(v, 60, {1, 13, 13}, {1, 2, 2}, 0.2);
    v.push_back(MaxPoolDesc{{1, 2, 2}});
    detail::push_conv_block(v, 90, {1, 13, 13}, {1, 2, 1}, 0.2);
    detail::push_conv_block(v, 85, {1, 13, 13}, {1, 2, 2}, 0.2);
    v.push_back(MaxPoolDesc{{1, 2, 2}});
    v.push_back(FlattenDesc{});
    v.push_back(DenseDesc{500, Activation::kSwish});
    v.push_back(DropoutDesc{0.2});
    v.push_back(DenseDesc{13, Activation::kLinear});
    return spec;
}

inline ModelSpec make_model_spec(ModelKind kind, int stride_s = 1,
                                 TemporalMode mode = TemporalMode::kSampled,
                                 bool tiny = false) {
    switch (kind) {
        case ModelKind::kFcn: return make_fcn_spec(tiny);
        case ModelKind::kCnn2d: return make_cnn2d_spec(tiny);
        case ModelKind::kCnn3d: return make_cnn3d_spec(stride_s, mode, tiny);
    }
    throw UsageError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Shape propagation and parameter counting
// ---------------------------------------------------------------------------

/// Per-layer state while walking a spec: the (T,H,W,C) grid before Flatten,
/// the feature width after it.
struct LayerTrace {
    Shape grid;              // empty once flattened
    std::size_t flat = 0;    // 0 until flattened
    std::size_t params = 0;  // parameters owned by this layer
};

/// Walks the model spec layer by layer, validating shape legality and returning
/// the trace (one entry per layer, holding the layer's OUTPUT state).
inline std::vector<LayerTrace> trace_shapes(const ModelSpec& spec) {
    if (spec.input_shape.size() != 4)
        throw ShapeError("model input shape must be (T,H,W,C), got " +
                         to_string(spec.input_shape));
    std::vector<LayerTrace> trace;
    Shape grid = spec.input_shape;
    std::size_t flat = 0;
    for (const LayerDesc& desc : spec.layers) {
        LayerTrace t;
        if (const auto* c = std::get_if<ConvDesc>(&desc)) {
            if (flat) throw ShapeError("convolution after flatten is not representable");
            for (int a = 0; a < 3; ++a)
                grid[a] = conv_output_extent(grid[a], static_cast<std::size_t>(c->kernel[a]),
                                             static_cast<std::size_t>(c->stride[a]), c->pad[a]);
            const std::size_t taps = static_cast<std::size_t>(c->kernel[0]) *
                                     static_cast<std::size_t>(c->kernel[1]) *
                                     static_cast<std::size_t>(c->kernel[2]) * grid[3];
            t.params = taps * static_cast<std::size_t>(c->filters) +
                       static_cast<std::size_t>(c->filters);
            grid[3] = static_cast<std::size_t>(c->filters);
        } else if (const auto* p = std::get_if<MaxPoolDesc>(&desc)) {
            if (flat) throw ShapeError("pooling after flatten is not representable");
            for (int a = 0; a < 3; ++a) {
                grid[a] = grid[a] / static_cast<std::size_t>(p->pool[a]);
                if (grid[a] == 0)
                    throw ShapeError("pool extent exceeds the remaining grid");
            }
        } else if (std::get_if<FlattenDesc>(&desc)) {
            flat = grid[0] * grid[1] * grid[2] * grid[3];
            grid.clear();
        } else if (const auto* d = std::get_if<DenseDesc>(&desc)) {
            if (!flat) throw ShapeError("dense layer requires flattened input");
            t.params = flat * static_cast<std::size_t>(d->units) +
                       static_cast<std::size_t>(d->units);
            flat = static_cast<std::size_t>(d->units);
        }
        t.grid = grid;
        t.flat = flat;
        trace.push_back(std::move(t));
    }
    return trace;
}

inline std::size_t count_params(const ModelSpec& spec) {
    std::size_t total = 0;
    for (const auto& t : trace_shapes(spec)) total += t.params;
    return total;
}

// ---------------------------------------------------------------------------
// Model: a spec plus materialized parameter tensors
// ---------------------------------------------------------------------------

template <typename T>
using AnyLayer =
    std::variant<ConvLayer<T>, SwishLayer, DropoutLayer, MaxPoolLayer, FlattenLayer,
                 DenseLayer<T>>;

template <typename T>
struct Model {
    ModelSpec spec;
    std::vector<AnyLayer<T>> layers;
    std::uint64_t seed = 0;
};

namespace detail {

/// Glorot-uniform fill: limit sqrt(6/(fan_in+fan_out)), drawn in double
/// precision then narrowed, so float and double builds sample identically.
template <typename T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) +
                                          static_cast<double>(fan_out)));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
}

} // namespace detail

/// Materializes a spec with Glorot-uniform weights and zero biases. Each
/// parameterized layer draws from its own stream keyed by layer index, so
/// the result is a pure function of (spec, seed).
template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
    const std::vector<LayerTrace> trace = trace_shapes(spec); // validates
    Model<T> model;
    model.spec = spec;
    model.seed = seed;

    Shape grid = spec.input_shape;
    std::size_t flat = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& desc = spec.layers[i];
        if (const auto* c = std::get_if<ConvDesc>(&desc)) {
            ConvLayer<T> layer;
            layer.filters = c->filters;
            layer.kernel = c->kernel;
            layer.stride = c->stride;
            layer.pad = c->pad;
            const std::size_t kt = static_cast<std::size_t>(c->kernel[0]);
            const std::size_t kh = static_cast<std::size_t>(c->kernel[1]);
            const std::size_t kw = static_cast<std::size_t>(c->kernel[2]);
            const std::size_t in_ch = grid[3];
            const std::size_t f = static_cast<std::size_t>(c->filters);
            layer.weights = Tensor<T>(Shape{kt, kh, kw, in_ch, f});
            layer.bias = Tensor<T>(Shape{f});
            Rng stream = Rng::stream(seed, i);
            detail::glorot_fill(layer.weights, kt * kh * kw * in_ch, kt * kh * kw * f,
                                stream);
            model.layers.emplace_back(std::move(layer));
        } else if (const auto* d = std::get_if<DenseDesc>(&desc)) {
            DenseLayer<T> layer;
            layer.activation = d->activation;
            const std::size_t units = static_cast<std::size_t>(d->units);
            layer.weights = Tensor<T>(Shape{flat, units});
            layer.bias = Tensor<T>(Shape{units});
            Rng stream = Rng::stream(seed, i);
            detail::glorot_fill(layer.weights, flat, units, stream);
            model.layers.emplace_back(std::move(layer));
        } else if (const auto* dr = std::get_if<DropoutDesc>(&desc)) {
            model.layers.emplace_back(DropoutLayer{dr->rate});
        } else if (const auto* p = std::get_if<MaxPoolDesc>(&desc)) {
            model.layers.emplace_back(MaxPoolLayer{p->pool});
        } else if (std::get_if<FlattenDesc>(&desc)) {
            model.layers.emplace_back(FlattenLayer{});
        } else {
            model.layers.emplace_back(SwishLayer{});
        }
        grid = trace[i].grid;
        flat = trace[i].flat;
    }
    return model;
}

template <typename T>
std::size_t count_params(const Model<T>& model) {
    std::size_t total = 0;
    for (const auto& layer : model.layers) {
        if (const auto* c = std::get_if<ConvLayer<T>>(&layer))
            total += c->weights.size() + c->bias.size();
        else if (const auto* d = std::get_if<DenseLayer<T>>(&layer))
            total += d->weights.size() + d->bias.size();
    }
    return total;
}

/// Applies fn to every parameter tensor (weights then bias, layer order).
template <typename T, typename Fn>
void for_each_param(Model<T>& model, Fn&& fn) {
    for (auto& layer : model.layers) {
        if (auto* c = std::get_if<ConvLayer<T>>(&layer)) {
            fn(c->weights);
            fn(c->bias);
        } else if (auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            fn(d->weights);
            fn(d->bias);
        }
    }
}

template <typename T, typename Fn>
void for_each_param(const Model<T>& model, Fn&& fn) {
    for (const auto& layer : model.layers) {
        if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
            fn(c->weights);
            fn(c->bias);
        } else if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            fn(d->weights);
            fn(d->bias);
        }
    }
}

// ---------------------------------------------------------------------------
// Whole-model forward / backward
// ---------------------------------------------------------------------------

template <typename T>
using AnyCache = std::variant<std::monostate, Conv3dCache<T>, SwishCache<T>, DropoutCache<T>,
                              MaxPoolCache, FlattenCache, DenseCache<T>>;

/// Runs the model on a rank-5 [B,T,H,W,C] batch and returns [B,13].
/// train_mode activates dropout, which consumes from rng.
template <typename T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& input, bool train_mode,
                        Rng* rng, std::vector<AnyCache<T>>* caches = nullptr) {
    if (input.rank() != 5)
        throw ShapeError("model input must be rank-5 [B,T,H,W,C], got " +
                         to_string(input.shape()));
    const Shape expect(input.shape().begin() + 1, input.shape().end());
    if (expect != model.spec.input_shape)
        throw ShapeError("model expects per-example shape " +
                         to_string(model.spec.input_shape) + ", got " + to_string(expect));
    if (caches) {
        caches->clear();
        caches->reserve(model.layers.size());
    }

    Tensor<T> x = input;
    for (const auto& layer : model.layers) {
        AnyCache<T> cache;
        if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
            Conv3dCache<T> cc;
            x = conv3d_forward(x, *c, caches ? &cc : nullptr);
            cache = std::move(cc);
        } else if (std::get_if<SwishLayer>(&layer)) {
            SwishCache<T> sc;
            x = swish_forward(x, caches ? &sc : nullptr);
            cache = std::move(sc);
        } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
            DropoutCache<T> dc;
            x = dropout_forward(x, *dr, train_mode, rng, caches ? &dc : nullptr);
            cache = std::move(dc);
        } else if (const auto* p = std::get_if<MaxPoolLayer>(&layer)) {
            MaxPoolCache mc;
            x = maxpool_forward(x, *p, caches ? &mc : nullptr);
            cache = std::move(mc);
        } else if (std::get_if<FlattenLayer>(&layer)) {
            FlattenCache fc{x.shape()};
            x = std::move(x).reshaped(
                Shape{x.extent(0), x.size() / x.extent(0)});
            cache = std::move(fc);
        } else if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            DenseCache<T> dc;
            x = dense_forward(x, *d, caches ? &dc : nullptr);
            cache = std::move(dc);
        }
        if (caches) caches->push_back(std::move(cache));
    }
    return x;
}

/// One gradient tensor pair per layer; empty tensors for layers without
/// parameters. Order matches model.layers.
template <typename T>
struct LayerGrads {
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
std::vector<LayerGrads<T>> model_backward(const Tensor<T>& grad_out, const Model<T>& model,
                                          const std::vector<AnyCache<T>>& caches) {
    if (caches.size() != model.layers.size())
        throw UsageError("model_backward needs the cache vector from a train-mode forward");
    std::vector<LayerGrads<T>> grads(model.layers.size());
    Tensor<T> g = grad_out;
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const auto& layer = model.layers[i];
        const auto& cache = caches[i];
        if (const auto* c = std::get_if<ConvLayer<T>>(&layer)) {
            auto cg = conv3d_backward(g, *c, std::get<Conv3dCache<T>>(cache));
            grads[i].weights = std::move(cg.weights);
            grads[i].bias = std::move(cg.bias);
            g = std::move(cg.input);
        } else if (std::get_if<SwishLayer>(&layer)) {
            g = swish_backward(g, std::get<SwishCache<T>>(cache));
        } else if (std::get_if<DropoutLayer>(&layer)) {
            g = dropout_backward(g, std::get<DropoutCache<T>>(cache));
        } else if (std::get_if<MaxPoolLayer>(&layer)) {
            g = maxpool_backward(g, std::get<MaxPoolCache>(cache));
        } else if (std::get_if<FlattenLayer>(&layer)) {
            g = std::move(g).reshaped(Shape(std::get<FlattenCache>(cache).input_shape));
        } else if (const auto* d = std::get_if<DenseLayer<T>>(&layer)) {
            auto dg = dense_backward(g, *d, std::get<DenseCache<T>>(cache));
            grads[i].weights = std::move(dg.weights);
            grads[i].bias = std::move(dg.bias);
            g = std::move(dg.input);
        }
    }
    return grads;
}

/// Applies fn(param, grad) over every (parameter, gradient) tensor pair.
template <typename T, typename Fn>
void for_each_param_grad(Model<T>& model, const std::vector<LayerGrads<T>>& grads, Fn&& fn) {
    if (grads.size() != model.layers.size())
        throw UsageError("gradient list does not match the model's layer list");
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (auto* c = std::get_if<ConvLayer<T>>(&model.layers[i])) {
            fn(c->weights, grads[i].weights);
            fn(c->bias, grads[i].bias);
        } else if (auto* d = std::get_if<DenseLayer<T>>(&model.layers[i])) {
            fn(d->weights, grads[i].weights);
            fn(d->bias, grads[i].bias);
        }
    }
}

// ---------------------------------------------------------------------------
// Human-readable summary (the `params` subcommand)
// ---------------------------------------------------------------------------

inline std::string describe_layer(const LayerDesc& desc) {
    std::ostringstream os;
    if (const auto* c = std::get_if<ConvDesc>(&desc)) {
        auto pad_name = [](PadMode m) { return m == PadMode::kSame ? "same" : "valid"; };
        os << "conv " << c->filters << "f kernel(" << c->kernel[0] << "," << c->kernel[1]
           << "," << c->kernel[2] << ") stride(" << c->stride[0] << "," << c->stride[1] << ","
           << c->stride[2] << ") pad(" << pad_name(c->pad[0]) << "," << pad_name(c->pad[1])
           << "," << pad_name(c->pad[2]) << ")";
    } else if (std::get_if<SwishDesc>(&desc)) {
        os << "swish";
    } else if (const auto* dr = std::get_if<DropoutDesc>(&desc)) {
        os << "dropout " << dr->rate;
    } else if (const auto* p = std::get_if<MaxPoolDesc>(&desc)) {
        os << "maxpool(" << p->pool[0] << "," << p->pool[1] << "," << p->pool[2] << ")";
    } else if (std::get_if<FlattenDesc>(&desc)) {
        os << "flatten";
    } else if (const auto* d = std::get_if<DenseDesc>(&desc)) {
        os << "dense " << d->units
           << (d->activation == Activation::kSwish ? " (swish)" : " (linear)");
    }
    return os.str();
}

inline std::string summarize(const ModelSpec& spec) {
    const auto trace = trace_shapes(spec);
    std::ostringstream os;
    os << "model: " << to_string(spec.kind);
    if (spec.kind == ModelKind::kCnn3d)
        os << " (" << to_string(spec.temporal_mode) << ", s=" << spec.stride_s << ")";
    if (spec.tiny) os << " [tiny]";
    os << "\ninput: " << to_string(spec.input_shape) << "\n";
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        std::string out =
            trace[i].grid.empty() ? "[" + std::to_string(trace[i].flat) + "]"
                                  : to_string(trace[i].grid);
        std::string name = describe_layer(spec.layers[i]);
        os << "  " << name;
        std::size_t col = name.size();
        do {
            os << ' ';
            ++col;
        } while (col < 64);
        os << out;
        if (trace[i].params) {
            for (std::size_t pad = out.size(); pad < 18; ++pad) os << ' ';
            os << trace[i].params;
        }
        os << "\n";
    }
    os << "total parameters: " << count_params(spec) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "SSIM", version, spec block, then every parameter
// tensor in layer order (weights then bias) as little-endian 32-bit floats.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "SSIM";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string spec_to_blob(const ModelSpec& spec, std::uint64_t seed) {
    std::ostringstream os;
    os << "kind=" << to_string(spec.kind) << "\n";
    os << "mode=" << to_string(spec.temporal_mode) << "\n";
    os << "s=" << spec.stride_s << "\n";
    os << "tiny=" << (spec.tiny ? 1 : 0) << "\n";
    os << "seed=" << seed << "\n";
    return os.str();
}

inline std::pair<ModelSpec, std::uint64_t> spec_from_blob(const std::string& blob,
                                                          std::uint64_t blob_offset) {
    std::string kind, mode;
    int s = 1, tiny = 0;
    std::uint64_t seed = 0;
    std::istringstream is(blob);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("checkpoint spec line without '=': \"" + line + "\"",
                             blob_offset);
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        try {
            if (key == "kind") kind = val;
            else if (key == "mode") mode = val;
            else if (key == "s") s = std::stoi(val);
            else if (key == "tiny") tiny = std::stoi(val);
            else if (key == "seed") seed = std::stoull(val);
            else throw ParseError("unknown checkpoint spec key \"" + key + "\"", blob_offset);
        } catch (const std::invalid_argument&) {
            throw ParseError("bad checkpoint spec value for \"" + key + "\"", blob_offset);
        } catch (const std::out_of_range&) {
            throw ParseError("out-of-range checkpoint spec value for \"" + key + "\"",
                             blob_offset);
        }
    }
    if (kind.empty())
        throw ParseError("checkpoint spec block is missing the model kind", blob_offset);
    ModelSpec spec;
    try {
        spec = make_model_spec(model_kind_from_string(kind), s,
                               mode.empty() ? TemporalMode::kSampled
                                            : temporal_mode_from_string(mode),
                               tiny != 0);
    } catch (const UsageError& e) {
        throw ParseError(std::string("checkpoint spec block: ") + e.what(), blob_offset);
    }
    return {spec, seed};
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 4);
    io::write_u32(out, kCheckpointVersion);
    const std::string blob = spec_to_blob(model.spec, model.seed);
    io::write_u32(out, static_cast<std::uint32_t>(blob.size()));
    io::write_bytes(out, blob.data(), blob.size());
    for_each_param(model, [&](const Tensor<T>& p) {
        for (std::size_t i = 0; i < p.size(); ++i)
            io::write_f32(out, static_cast<float>(p[i]));
    });
    if (!out) throw DataError("write failed for checkpoint: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::uint64_t pos = 0;
    io::expect_magic(in, kCheckpointMagic, pos, "checkpoint");
    const std::uint32_t version = io::read_u32(in, pos, "checkpoint version");
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint32_t blob_len = io::read_u32(in, pos, "checkpoint spec length");
    const std::uint64_t blob_offset = pos;
    std::string blob(blob_len, '\0');
    io::read_bytes(in, blob.data(), blob_len, pos, "checkpoint spec block");
    auto [spec, seed] = spec_from_blob(blob, blob_offset);

    Model<T> model = build_model<T>(spec, seed);
    for_each_param(model, [&](Tensor<T>& p) {
        std::vector<float> raw(p.size());
        io::read_f32_array(in, raw.data(), raw.size(), pos, "checkpoint parameters");
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(raw[i]);
    });
    // the container must end exactly after the last parameter
    char extra;
    in.read(&extra, 1);
    if (in.gcount() == 1)
        throw ParseError("trailing bytes after checkpoint parameters", pos);
    return model;
}

} // namespace ssi
