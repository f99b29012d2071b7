#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ssi/errors.hpp"
#include "ssi/rng.hpp"
#include "ssi/tensor.hpp"

namespace ssi {

enum class PadMode { kSame, kValid };
enum class Activation { kLinear, kSwish };

/// Output extent of one convolution axis.
/// same: ceil(in / stride); valid: floor((in - k) / stride) + 1.
inline std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                                      PadMode mode) {
    if (mode == PadMode::kSame) return (in + stride - 1) / stride;
    if (in < k)
        throw ShapeError("valid convolution needs input extent >= kernel extent, got " +
                         std::to_string(in) + " < " + std::to_string(k));
    return (in - k) / stride + 1;
}

/// Same padding spreads the k-1 extra positions as floor((k-1)/2) before,
/// remainder after. Padding k-1 in total makes the output extent
/// ceil(in / stride) for every stride.
inline std::pair<std::size_t, std::size_t> same_padding(std::size_t k) {
    const std::size_t before = (k - 1) / 2;
    return {before, (k - 1) - before};
}

// ---------------------------------------------------------------------------
// Layer parameter blocks
// ---------------------------------------------------------------------------

/// 3D convolution over (time, height, width); 2D convolution is the
/// kt = 1 special case of the same code path.
template <typename T>
struct ConvLayer {
    int filters = 0;
    std::array<int, 3> kernel{1, 1, 1};  // (kt, kh, kw)
    std::array<int, 3> stride{1, 1, 1};  // (st, sh, sw)
    std::array<PadMode, 3> pad{PadMode::kValid, PadMode::kSame, PadMode::kSame};
    Tensor<T> weights; // [kt, kh, kw, in_ch, filters]
    Tensor<T> bias;    // [filters]
};

template <typename T>
struct DenseLayer {
    Tensor<T> weights; // [in, out]
    Tensor<T> bias;    // [out]
    Activation activation = Activation::kLinear;
};

struct DropoutLayer {
    double rate = 0.0; // in [0, 1)
};

/// Non-overlapping pooling: stride equals the pool extents, trailing
/// remainder truncated.
struct MaxPoolLayer {
    std::array<int, 3> pool{1, 1, 1}; // (pt, ph, pw)
};

struct FlattenLayer {};
struct SwishLayer {};

// ---------------------------------------------------------------------------
// Forward caches (inputs to the matching backward call)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv3dCache {
    Tensor<T> padded;
    Shape input_shape;
};

template <typename T>
struct DenseCache {
    Tensor<T> input;   // [B, in]
    Tensor<T> preact;  // xW + b before activation
};

template <typename T>
struct DropoutCache {
    std::vector<std::uint8_t> mask; // empty when the pass was an identity
    T scale = 1;
};

struct MaxPoolCache {
    std::vector<std::size_t> argmax; // flat input index per output element
    Shape input_shape;
};

template <typename T>
struct SwishCache {
    Tensor<T> input;
};

struct FlattenCache {
    Shape input_shape;
};

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

template <typename T>
struct DenseGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

/// Repacks [kt,kh,kw,C,F] weights into per-filter contiguous rows of
/// length K = kt*kh*kw*C, index order (dt, dh, dw, c).
template <typename T>
std::vector<T> pack_filters(const Tensor<T>& weights) {
    const std::size_t kt = weights.extent(0), kh = weights.extent(1), kw = weights.extent(2);
    const std::size_t c = weights.extent(3), f = weights.extent(4);
    const std::size_t k = kt * kh * kw * c;
    std::vector<T> packed(f * k);
    const T* src = weights.data();
    for (std::size_t idx = 0; idx < k; ++idx)
        for (std::size_t fi = 0; fi < f; ++fi)
            packed[fi * k + idx] = src[idx * f + fi];
    return packed;
}

template <typename T>
PadAmounts conv_pads(const Tensor<T>& input, const ConvLayer<T>& layer) {
    PadAmounts pads(5, {0, 0});
    for (int a = 0; a < 3; ++a) {
        if (layer.pad[a] == PadMode::kSame)
            pads[a + 1] = same_padding(static_cast<std::size_t>(layer.kernel[a]));
        else
            conv_output_extent(input.extent(a + 1), layer.kernel[a], layer.stride[a],
                               PadMode::kValid); // validates in >= k
    }
    return pads;
}

} // namespace detail

template <typename T>
Shape conv3d_output_shape(const Shape& input, const ConvLayer<T>& layer) {
    Shape out(5);
    out[0] = input[0];
    for (int a = 0; a < 3; ++a)
        out[a + 1] = conv_output_extent(input[a + 1], layer.kernel[a], layer.stride[a],
                                        layer.pad[a]);
    out[4] = static_cast<std::size_t>(layer.filters);
    return out;
}

/// Cross-correlation (no kernel flip) over (time, height, width) with a
/// per-filter bias. Accumulation order per output element is (dt, dh, dw, c),
/// so the kt = 1 case reproduces a plain 2D convolution bit for bit.
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const ConvLayer<T>& layer,
                         Conv3dCache<T>* cache = nullptr) {
    if (input.rank() != 5)
        throw ShapeError("conv3d input must be rank-5 [B,T,H,W,C], got " +
                         to_string(input.shape()));
    if (input.extent(4) != layer.weights.extent(3))
        throw ShapeError("conv3d channel mismatch: input " + to_string(input.shape()) +
                         " vs weights " + to_string(layer.weights.shape()));

    const Tensor<T> padded = pad_constant(input, detail::conv_pads(input, layer), T(0));
    const Shape out_shape = conv3d_output_shape(input.shape(), layer);
    Tensor<T> out(out_shape);

    const std::size_t kt = layer.kernel[0], kh = layer.kernel[1], kw = layer.kernel[2];
    const std::size_t st = layer.stride[0], sh = layer.stride[1], sw = layer.stride[2];
    const std::size_t c = input.extent(4);
    const std::size_t f = static_cast<std::size_t>(layer.filters);
    const std::size_t k = kt * kh * kw * c;
    const std::vector<T> packed = detail::pack_filters(layer.weights);

    const std::size_t pt = padded.extent(1), ph = padded.extent(2), pw = padded.extent(3);
    const std::size_t row = kw * c;
    const T* in = padded.data();
    const T* bias = layer.bias.data();
    T* o = out.data();

    for (std::size_t b = 0; b < out_shape[0]; ++b)
        for (std::size_t ot = 0; ot < out_shape[1]; ++ot)
            for (std::size_t oh = 0; oh < out_shape[2]; ++oh)
                for (std::size_t ow = 0; ow < out_shape[3]; ++ow) {
                    const std::size_t it = ot * st, ih = oh * sh, iw = ow * sw;
                    for (std::size_t fi = 0; fi < f; ++fi) {
                        T acc = 0;
                        const T* wf = packed.data() + fi * k;
                        for (std::size_t dt = 0; dt < kt; ++dt)
                            for (std::size_t dh = 0; dh < kh; ++dh) {
                                const T* in_row =
                                    in + (((b * pt + it + dt) * ph + ih + dh) * pw + iw) * c;
                                const T* w_row = wf + (dt * kh + dh) * row;
                                for (std::size_t j = 0; j < row; ++j)
                                    acc += in_row[j] * w_row[j];
                            }
                        *o++ = acc + bias[fi];
                    }
                }

    if (cache) {
        cache->padded = padded;
        cache->input_shape = input.shape();
    }
    return out;
}

/// Exact gradients of conv3d_forward with respect to input, weights, bias.
template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& grad_out, const ConvLayer<T>& layer,
                             const Conv3dCache<T>& cache) {
    if (cache.padded.size() == 0 || cache.input_shape.empty())
        throw UsageError("conv3d_backward called without a cached forward pass");
    const Shape out_shape = conv3d_output_shape(cache.input_shape, layer);
    if (grad_out.shape() != out_shape)
        throw ShapeError("conv3d_backward grad shape " + to_string(grad_out.shape()) +
                         " does not match forward output " + to_string(out_shape));

    const std::size_t kt = layer.kernel[0], kh = layer.kernel[1], kw = layer.kernel[2];
    const std::size_t st = layer.stride[0], sh = layer.stride[1], sw = layer.stride[2];
    const std::size_t c = cache.input_shape[4];
    const std::size_t f = static_cast<std::size_t>(layer.filters);
    const std::size_t k = kt * kh * kw * c;
    const std::vector<T> packed = detail::pack_filters(layer.weights);
    std::vector<T> packed_grad(f * k, T(0));

    Tensor<T> grad_padded(cache.padded.shape());
    Tensor<T> grad_bias(Shape{f});

    const std::size_t pt = cache.padded.extent(1), ph = cache.padded.extent(2),
                      pw = cache.padded.extent(3);
    const std::size_t row = kw * c;
    const T* in = cache.padded.data();
    T* gin = grad_padded.data();
    T* gb = grad_bias.data();
    const T* go = grad_out.data();

    for (std::size_t b = 0; b < out_shape[0]; ++b)
        for (std::size_t ot = 0; ot < out_shape[1]; ++ot)
            for (std::size_t oh = 0; oh < out_shape[2]; ++oh)
                for (std::size_t ow = 0; ow < out_shape[3]; ++ow) {
                    const std::size_t it = ot * st, ih = oh * sh, iw = ow * sw;
                    for (std::size_t fi = 0; fi < f; ++fi) {
                        const T g = *go++;
                        gb[fi] += g;
                        const T* wf = packed.data() + fi * k;
                        T* wg = packed_grad.data() + fi * k;
                        for (std::size_t dt = 0; dt < kt; ++dt)
                            for (std::size_t dh = 0; dh < kh; ++dh) {
                                const std::size_t base =
                                    (((b * pt + it + dt) * ph + ih + dh) * pw + iw) * c;
                                const std::size_t wbase = (dt * kh + dh) * row;
                                for (std::size_t j = 0; j < row; ++j) {
                                    wg[wbase + j] += in[base + j] * g;
                                    gin[base + j] += wf[wbase + j] * g;
                                }
                            }
                    }
                }

    Tensor<T> grad_weights(layer.weights.shape());
    T* gw = grad_weights.data();
    for (std::size_t idx = 0; idx < k; ++idx)
        for (std::size_t fi = 0; fi < f; ++fi)
            gw[idx * f + fi] = packed_grad[fi * k + idx];

    Tensor<T> fake_input(cache.input_shape); // only for pad geometry
    ConvGrads<T> grads;
    grads.input = crop(grad_padded, detail::conv_pads(fake_input, layer));
    grads.weights = std::move(grad_weights);
    grads.bias = std::move(grad_bias);
    return grads;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
T sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T swish(T x) {
    return x * sigmoid(x);
}

/// d/dx [x * sigmoid(x)] = sigmoid(x) + x * sigmoid(x) * (1 - sigmoid(x)).
template <typename T>
T swish_grad(T x) {
    const T s = sigmoid(x);
    return s + x * s * (T(1) - s);
}

template <typename T>
Tensor<T> swish_forward(const Tensor<T>& x, SwishCache<T>* cache = nullptr) {
    if (cache) cache->input = x;
    return map(x, [](T v) { return swish(v); });
}

template <typename T>
Tensor<T> swish_backward(const Tensor<T>& grad_out, const SwishCache<T>& cache) {
    return zip(grad_out, cache.input, [](T g, T x) { return g * swish_grad(x); });
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled by 1/(1-rate) so inference is identity)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, const DropoutLayer& layer, bool train_mode,
                          Rng* rng, DropoutCache<T>* cache = nullptr) {
    if (layer.rate < 0.0 || layer.rate >= 1.0)
        throw UsageError("dropout rate must lie in [0, 1), got " + std::to_string(layer.rate));
    if (!train_mode || layer.rate == 0.0) {
        if (cache) {
            cache->mask.clear();
            cache->scale = 1;
        }
        return x;
    }
    if (!rng) throw UsageError("dropout in train mode needs an rng");

    const T scale = static_cast<T>(1.0 / (1.0 - layer.rate));
    Tensor<T> out(x.shape());
    std::vector<std::uint8_t> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool keep = rng->uniform() >= layer.rate;
        mask[i] = keep;
        out[i] = keep ? x[i] * scale : T(0);
    }
    if (cache) {
        cache->mask = std::move(mask);
        cache->scale = scale;
    } else {
        (void)mask;
    }
    return out;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const DropoutCache<T>& cache) {
    if (cache.mask.empty()) return grad_out; // forward was an identity
    if (cache.mask.size() != grad_out.size())
        throw ShapeError("dropout_backward grad size does not match the cached mask");
    Tensor<T> out(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        out[i] = cache.mask[i] ? grad_out[i] * cache.scale : T(0);
    return out;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& x, const MaxPoolLayer& layer,
                          MaxPoolCache* cache = nullptr) {
    if (x.rank() != 5)
        throw ShapeError("maxpool input must be rank-5 [B,T,H,W,C], got " +
                         to_string(x.shape()));
    const std::size_t pt = layer.pool[0], ph = layer.pool[1], pw = layer.pool[2];
    Shape out_shape{x.extent(0), x.extent(1) / pt, x.extent(2) / ph, x.extent(3) / pw,
                    x.extent(4)};
    if (out_shape[1] == 0 || out_shape[2] == 0 || out_shape[3] == 0)
        throw ShapeError("maxpool window " + std::to_string(pt) + "x" + std::to_string(ph) +
                         "x" + std::to_string(pw) + " larger than input " +
                         to_string(x.shape()));

    Tensor<T> out(out_shape);
    std::vector<std::size_t> argmax(out.size());
    const std::size_t ti = x.extent(1), hi = x.extent(2), wi = x.extent(3), ci = x.extent(4);

    std::size_t oi = 0;
    for (std::size_t b = 0; b < out_shape[0]; ++b)
        for (std::size_t ot = 0; ot < out_shape[1]; ++ot)
            for (std::size_t oh = 0; oh < out_shape[2]; ++oh)
                for (std::size_t ow = 0; ow < out_shape[3]; ++ow)
                    for (std::size_t c = 0; c < ci; ++c, ++oi) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_idx = 0;
                        // strict > keeps the lowest flat index on ties
                        for (std::size_t dt = 0; dt < pt; ++dt)
                            for (std::size_t dh = 0; dh < ph; ++dh)
                                for (std::size_t dw = 0; dw < pw; ++dw) {
                                    const std::size_t idx =
                                        (((b * ti + ot * pt + dt) * hi + oh * ph + dh) * wi +
                                         ow * pw + dw) *
                                            ci +
                                        c;
                                    if (x[idx] > best) {
                                        best = x[idx];
                                        best_idx = idx;
                                    }
                                }
                        out[oi] = best;
                        argmax[oi] = best_idx;
                    }

    if (cache) {
        cache->argmax = std::move(argmax);
        cache->input_shape = x.shape();
    }
    return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const MaxPoolCache& cache) {
    if (cache.input_shape.empty())
        throw UsageError("maxpool_backward called without a cached forward pass");
    if (grad_out.size() != cache.argmax.size())
        throw ShapeError("maxpool_backward grad size does not match the cached forward");
    Tensor<T> grad_in(cache.input_shape);
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        grad_in[cache.argmax[i]] += grad_out[i];
    return grad_in;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer,
                        DenseCache<T>* cache = nullptr) {
    if (x.rank() != 2)
        throw ShapeError("dense input must be rank-2 [batch, features], got " +
                         to_string(x.shape()));
    if (x.extent(1) != layer.weights.extent(0))
        throw ShapeError("dense feature mismatch: input " + to_string(x.shape()) +
                         " vs weights " + to_string(layer.weights.shape()));

    Tensor<T> z = matmul(x, layer.weights);
    const std::size_t out_dim = layer.weights.extent(1);
    T* zp = z.data();
    const T* bp = layer.bias.data();
    for (std::size_t r = 0; r < z.extent(0); ++r)
        for (std::size_t j = 0; j < out_dim; ++j) zp[r * out_dim + j] += bp[j];

    if (cache) {
        cache->input = x;
        cache->preact = z;
    }
    if (layer.activation == Activation::kSwish)
        return map(z, [](T v) { return swish(v); });
    return z;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& grad_out, const DenseLayer<T>& layer,
                             const DenseCache<T>& cache) {
    if (cache.input.size() == 0)
        throw UsageError("dense_backward called without a cached forward pass");
    if (!grad_out.same_shape(cache.preact))
        throw ShapeError("dense_backward grad shape " + to_string(grad_out.shape()) +
                         " does not match forward output " + to_string(cache.preact.shape()));

    Tensor<T> grad_z =
        layer.activation == Activation::kSwish
            ? zip(grad_out, cache.preact, [](T g, T z) { return g * swish_grad(z); })
            : grad_out;

    const std::size_t batch = cache.input.extent(0);
    const std::size_t in_dim = cache.input.extent(1);
    const std::size_t out_dim = layer.weights.extent(1);

    DenseGrads<T> grads{Tensor<T>(cache.input.shape()), Tensor<T>(layer.weights.shape()),
                        Tensor<T>(layer.bias.shape())};

    ConstMatrixMap<T> x(cache.input.data(), batch, in_dim);
    ConstMatrixMap<T> gz(grad_z.data(), batch, out_dim);
    ConstMatrixMap<T> w(layer.weights.data(), in_dim, out_dim);
    MatrixMap<T> gw(grads.weights.data(), in_dim, out_dim);
    MatrixMap<T> gx(grads.input.data(), batch, in_dim);
    MatrixMap<T> gb(grads.bias.data(), 1, out_dim);

    gw.noalias() = x.transpose() * gz;
    gx.noalias() = gz * w.transpose();
    gb = gz.colwise().sum();
    return grads;
}

} // namespace ssi
