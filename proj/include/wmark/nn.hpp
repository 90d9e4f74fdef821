#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "wmark/rng.hpp"
#include "wmark/tensor.hpp"

namespace wmark {

// Thrown when an engine operation produces a non-finite value. `layer` is the
// index of the offending layer, -1 when the loss itself is the culprit.
struct numeric_error : std::runtime_error {
    int layer;
    explicit numeric_error(const std::string& msg, int layer_index = -1)
        : std::runtime_error(msg), layer(layer_index) {}
};

enum class LayerKind : uint32_t {
    Dense = 1,     // y = x W + b, W: [in, out]
    Conv2d = 2,    // 3x3 kernel, stride 1, pad 1; W: [out_ch, in_ch, 3, 3]
    Relu = 3,
    MaxPool2 = 4,  // 2x2 window, stride 2
    Flatten = 5,
    Sigmoid = 6,
};

struct LayerSpec {
    LayerKind kind{};
    std::size_t in = 0;   // dense: input features / conv: input channels
    std::size_t out = 0;  // dense: output features / conv: output channels

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out}; }
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch) { return {LayerKind::Conv2d, in_ch, out_ch}; }
    static LayerSpec relu() { return {LayerKind::Relu, 0, 0}; }
    static LayerSpec sigmoid() { return {LayerKind::Sigmoid, 0, 0}; }
    static LayerSpec maxpool2() { return {LayerKind::MaxPool2, 0, 0}; }
    static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0}; }

    bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
};

// Shape of one sample after applying a layer. Throws on incompatibility.
std::vector<std::size_t> layer_output_shape(const LayerSpec& layer,
                                            const std::vector<std::size_t>& in_shape);

// Feed-forward model. Plain value type: copies are deep and never alias.
template <typename T>
struct ModelT {
    std::vector<std::size_t> input_shape;  // per sample, e.g. {1,16,16} or {64}
    std::size_t out_dim = 0;               // number of classes for classifiers
    std::vector<LayerSpec> layers;
    std::vector<TensorT<T>> weights;       // aligned with layers; empty when unparameterized
    std::vector<TensorT<T>> biases;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) n += weights[i].numel() + biases[i].numel();
        return n;
    }

    // Builds the model, validates shape compatibility layer by layer, and
    // He-initializes the parameters from `seed`.
    static ModelT make(std::vector<std::size_t> input_shape, std::vector<LayerSpec> layer_specs,
                       uint64_t seed) {
        ModelT m;
        m.input_shape = std::move(input_shape);
        m.layers = std::move(layer_specs);
        std::vector<std::size_t> cur = m.input_shape;
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            const LayerSpec& l = m.layers[i];
            cur = layer_output_shape(l, cur);
            switch (l.kind) {
                case LayerKind::Dense:
                    m.weights.emplace_back(std::vector<std::size_t>{l.in, l.out});
                    m.biases.emplace_back(std::vector<std::size_t>{l.out});
                    break;
                case LayerKind::Conv2d:
                    m.weights.emplace_back(std::vector<std::size_t>{l.out, l.in, 3, 3});
                    m.biases.emplace_back(std::vector<std::size_t>{l.out});
                    break;
                default:
                    m.weights.emplace_back();
                    m.biases.emplace_back();
            }
        }
        if (cur.size() != 1)
            throw std::invalid_argument("model: output must be a flat vector, got " +
                                        TensorT<T>::shape_str(cur));
        m.out_dim = cur[0];
        m.init_params(seed);
        return m;
    }

    void init_params(uint64_t seed) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (!layers[i].has_params()) continue;
            CounterRng rng(seed, /*stream=*/i + 1);
            std::size_t fan_in = layers[i].kind == LayerKind::Dense ? layers[i].in
                                                                    : layers[i].in * 9;
            double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (T& w : weights[i].data) w = static_cast<T>(rng.gaussian() * scale);
            for (T& b : biases[i].data) b = T(0);
        }
    }
};

using Model = ModelT<float>;

// Activations recorded during a forward pass. acts[0] is the input batch,
// acts[i+1] the output of layer i.
template <typename T>
struct TraceT {
    std::vector<TensorT<T>> acts;
    const TensorT<T>& logits() const { return acts.back(); }
};
using Trace = TraceT<float>;

template <typename T>
struct GradientsT {
    std::vector<TensorT<T>> dweights;  // aligned with model layers
    std::vector<TensorT<T>> dbiases;
    TensorT<T> dinput;                 // gradient w.r.t. the input batch
    double loss = 0.0;
};
using Gradients = GradientsT<float>;

namespace detail {

template <typename T>
void dense_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y) {
    std::size_t n = x.shape[0], din = w.shape[0], dout = w.shape[1];
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = &x.data[i * din];
        T* yi = &y.data[i * dout];
        for (std::size_t j = 0; j < dout; ++j) yi[j] = b.data[j];
        for (std::size_t k = 0; k < din; ++k) {
            T xv = xi[k];
            if (xv == T(0)) continue;
            const T* wk = &w.data[k * dout];
            for (std::size_t j = 0; j < dout; ++j) yi[j] += xv * wk[j];
        }
    }
}

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, TensorT<T>& y) {
    std::size_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    std::size_t co = w.shape[0];
    for (std::size_t img = 0; img < n; ++img) {
        for (std::size_t oc = 0; oc < co; ++oc) {
            T* yp = &y.data[((img * co + oc) * h) * wd];
            std::fill(yp, yp + h * wd, b.data[oc]);
            for (std::size_t ic = 0; ic < ci; ++ic) {
                const T* xp = &x.data[((img * ci + ic) * h) * wd];
                const T* wp = &w.data[((oc * ci + ic) * 3) * 3];
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        T wv = wp[ky * 3 + kx];
                        if (wv == T(0)) continue;
                        // output row oy reads input row oy + ky - 1
                        std::size_t oy0 = (ky == 0) ? 1 : 0;
                        std::size_t oy1 = (ky == 2) ? h - 1 : h;
                        std::size_t ox0 = (kx == 0) ? 1 : 0;
                        std::size_t ox1 = (kx == 2) ? wd - 1 : wd;
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            const T* xrow = xp + (oy + ky - 1) * wd + (kx - 1);
                            T* yrow = yp + oy * wd;
                            for (std::size_t ox = ox0; ox < ox1; ++ox)
                                yrow[ox] += wv * xrow[ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Forward pass recording every intermediate activation. Throws numeric_error
// (with the layer index) if any layer emits a non-finite value.
template <typename T>
TraceT<T> forward_trace(const ModelT<T>& m, const TensorT<T>& batch) {
    if (batch.ndim() != m.input_shape.size() + 1 ||
        !std::equal(m.input_shape.begin(), m.input_shape.end(), batch.shape.begin() + 1))
        throw std::invalid_argument("forward: batch shape " + TensorT<T>::shape_str(batch.shape) +
                                    " does not match model input " +
                                    TensorT<T>::shape_str(m.input_shape));
    TraceT<T> tr;
    tr.acts.reserve(m.layers.size() + 1);
    tr.acts.push_back(batch);
    std::size_t n = batch.shape[0];
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const LayerSpec& l = m.layers[li];
        const TensorT<T>& x = tr.acts.back();
        std::vector<std::size_t> sample_shape(x.shape.begin() + 1, x.shape.end());
        std::vector<std::size_t> out_shape = layer_output_shape(l, sample_shape);
        out_shape.insert(out_shape.begin(), n);
        TensorT<T> y(out_shape);
        switch (l.kind) {
            case LayerKind::Dense:
                detail::dense_forward(x, m.weights[li], m.biases[li], y);
                break;
            case LayerKind::Conv2d:
                detail::conv2d_forward(x, m.weights[li], m.biases[li], y);
                break;
            case LayerKind::Relu:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
                break;
            case LayerKind::Sigmoid:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    y.data[i] = T(1) / (T(1) + std::exp(-x.data[i]));
                break;
            case LayerKind::MaxPool2: {
                std::size_t c = x.shape[1], h = x.shape[2], w = x.shape[3];
                for (std::size_t img = 0; img < n; ++img)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t oy = 0; oy < h / 2; ++oy)
                            for (std::size_t ox = 0; ox < w / 2; ++ox) {
                                T best = x.at4(img, ch, 2 * oy, 2 * ox);
                                for (std::size_t dy = 0; dy < 2; ++dy)
                                    for (std::size_t dx = 0; dx < 2; ++dx) {
                                        T v = x.at4(img, ch, 2 * oy + dy, 2 * ox + dx);
                                        if (v > best) best = v;
                                    }
                                y.at4(img, ch, oy, ox) = best;
                            }
                break;
            }
            case LayerKind::Flatten:
                y.data = x.data;
                break;
        }
        if (!y.all_finite())
            throw numeric_error("non-finite activation after layer " + std::to_string(li),
                                static_cast<int>(li));
        tr.acts.push_back(std::move(y));
    }
    return tr;
}

// Inference-only forward: returns the logits batch [n, out_dim].
template <typename T>
TensorT<T> forward(const ModelT<T>& m, const TensorT<T>& batch) {
    return forward_trace(m, batch).acts.back();
}

// Backpropagate an upstream gradient on the logits through the recorded
// trace. Returns parameter gradients plus the gradient w.r.t. the input.
template <typename T>
GradientsT<T> backward(const ModelT<T>& m, const TraceT<T>& tr, const TensorT<T>& dlogits) {
    if (!dlogits.same_shape(tr.acts.back()))
        throw std::invalid_argument("backward: dlogits shape mismatch");
    GradientsT<T> g;
    g.dweights.resize(m.layers.size());
    g.dbiases.resize(m.layers.size());
    TensorT<T> dy = dlogits;
    for (std::size_t li = m.layers.size(); li-- > 0;) {
        const LayerSpec& l = m.layers[li];
        const TensorT<T>& x = tr.acts[li];
        TensorT<T> dx(x.shape);
        switch (l.kind) {
            case LayerKind::Dense: {
                std::size_t n = x.shape[0], din = l.in, dout = l.out;
                g.dweights[li] = TensorT<T>(m.weights[li].shape);
                g.dbiases[li] = TensorT<T>(m.biases[li].shape);
                for (std::size_t i = 0; i < n; ++i) {
                    const T* xi = &x.data[i * din];
                    const T* dyi = &dy.data[i * dout];
                    for (std::size_t j = 0; j < dout; ++j) g.dbiases[li].data[j] += dyi[j];
                    for (std::size_t k = 0; k < din; ++k) {
                        const T* wk = &m.weights[li].data[k * dout];
                        T* dwk = &g.dweights[li].data[k * dout];
                        T acc = T(0);
                        T xv = xi[k];
                        for (std::size_t j = 0; j < dout; ++j) {
                            acc += dyi[j] * wk[j];
                            dwk[j] += xv * dyi[j];
                        }
                        dx.data[i * din + k] = acc;
                    }
                }
                break;
            }
            case LayerKind::Conv2d: {
                std::size_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
                std::size_t co = l.out;
                g.dweights[li] = TensorT<T>(m.weights[li].shape);
                g.dbiases[li] = TensorT<T>(m.biases[li].shape);
                for (std::size_t img = 0; img < n; ++img)
                    for (std::size_t oc = 0; oc < co; ++oc) {
                        const T* dyp = &dy.data[((img * co + oc) * h) * wd];
                        for (std::size_t i = 0; i < h * wd; ++i) g.dbiases[li].data[oc] += dyp[i];
                        for (std::size_t ic = 0; ic < ci; ++ic) {
                            const T* xp = &x.data[((img * ci + ic) * h) * wd];
                            T* dxp = &dx.data[((img * ci + ic) * h) * wd];
                            const T* wp = &m.weights[li].data[((oc * ci + ic) * 3) * 3];
                            T* dwp = &g.dweights[li].data[((oc * ci + ic) * 3) * 3];
                            for (std::size_t ky = 0; ky < 3; ++ky)
                                for (std::size_t kx = 0; kx < 3; ++kx) {
                                    std::size_t oy0 = (ky == 0) ? 1 : 0;
                                    std::size_t oy1 = (ky == 2) ? h - 1 : h;
                                    std::size_t ox0 = (kx == 0) ? 1 : 0;
                                    std::size_t ox1 = (kx == 2) ? wd - 1 : wd;
                                    T wv = wp[ky * 3 + kx];
                                    T dwacc = T(0);
                                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                        const T* xrow = xp + (oy + ky - 1) * wd + (kx - 1);
                                        T* dxrow = dxp + (oy + ky - 1) * wd + (kx - 1);
                                        const T* dyrow = dyp + oy * wd;
                                        for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                            dwacc += dyrow[ox] * xrow[ox];
                                            dxrow[ox] += dyrow[ox] * wv;
                                        }
                                    }
                                    dwp[ky * 3 + kx] += dwacc;
                                }
                        }
                    }
                break;
            }
            case LayerKind::Relu:
                for (std::size_t i = 0; i < x.numel(); ++i)
                    dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
                break;
            case LayerKind::Sigmoid: {
                const TensorT<T>& y = tr.acts[li + 1];
                for (std::size_t i = 0; i < x.numel(); ++i)
                    dx.data[i] = dy.data[i] * y.data[i] * (T(1) - y.data[i]);
                break;
            }
            case LayerKind::MaxPool2: {
                std::size_t c = x.shape[1], h = x.shape[2], w = x.shape[3];
                for (std::size_t img = 0; img < x.shape[0]; ++img)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t oy = 0; oy < h / 2; ++oy)
                            for (std::size_t ox = 0; ox < w / 2; ++ox) {
                                // recompute argmax; ties go to the first cell scanned
                                std::size_t by = 2 * oy, bx = 2 * ox;
                                T best = x.at4(img, ch, by, bx);
                                for (std::size_t dy2 = 0; dy2 < 2; ++dy2)
                                    for (std::size_t dx2 = 0; dx2 < 2; ++dx2) {
                                        T v = x.at4(img, ch, 2 * oy + dy2, 2 * ox + dx2);
                                        if (v > best) {
                                            best = v;
                                            by = 2 * oy + dy2;
                                            bx = 2 * ox + dx2;
                                        }
                                    }
                                dx.at4(img, ch, by, bx) += dy.at4(img, ch, oy, ox);
                            }
                break;
            }
            case LayerKind::Flatten:
                dx.data = dy.data;
                break;
        }
        dy = std::move(dx);
    }
    g.dinput = std::move(dy);
    return g;
}

// ---- losses ----

template <typename T>
struct LossOut {
    double value = 0.0;
    TensorT<T> dlogits;
};

// Mean cross-entropy of softmax(logits) against integer labels.
template <typename T>
LossOut<T> cross_entropy_with_grad(const TensorT<T>& logits, std::span<const int> labels) {
    if (logits.ndim() != 2 || logits.shape[0] != labels.size())
        throw std::invalid_argument("cross_entropy: logits must be [n, C] with n labels");
    std::size_t n = logits.shape[0], c = logits.shape[1];
    LossOut<T> out;
    out.dlogits = TensorT<T>(logits.shape);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= c)
            throw std::invalid_argument("cross_entropy: label out of range");
        const T* row = &logits.data[i * c];
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
        double lse = static_cast<double>(mx) + std::log(sum);
        total += lse - static_cast<double>(row[label]);
        for (std::size_t j = 0; j < c; ++j) {
            double p = std::exp(static_cast<double>(row[j] - mx)) / sum;
            out.dlogits.data[i * c + j] =
                static_cast<T>((p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / n);
        }
    }
    out.value = total / static_cast<double>(n);
    return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels);

// Mean absolute elementwise difference between two logit batches.
template <typename T>
LossOut<T> l1_logits_with_grad(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("l1_logits: shape mismatch");
    LossOut<T> out;
    out.dlogits = TensorT<T>(a.shape);
    double total = 0.0;
    double inv = 1.0 / static_cast<double>(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        total += std::abs(d);
        out.dlogits.data[i] = static_cast<T>(d > 0 ? inv : (d < 0 ? -inv : 0.0));
    }
    out.value = total * inv;
    return out;
}

double l1_logits(const Tensor& a, const Tensor& b);

// ---- spec-level convenience ops ----

struct CeTarget {
    std::vector<int> labels;
};
struct L1Target {
    Tensor logits;
};
using LossTarget = std::variant<CeTarget, L1Target>;

Gradients grad(const Model& m, const Tensor& batch, const LossTarget& target);
void sgd_step(Model& m, const Gradients& g, double lr);

struct Dataset {
    Tensor images;            // [n, ...sample shape]
    std::vector<int> labels;  // size n, each in [0, C)
    Tensor logits;            // optional teacher logits [n, C]; empty if unused

    std::size_t size() const { return labels.size(); }
    void validate(std::size_t num_classes) const;
    Dataset subset(const std::vector<std::size_t>& idx) const;
};

enum class LossKind { CrossEntropy, L1ToTargets };

struct TrainConfig {
    double lr = 0.05;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> loss;      // per epoch
    std::vector<double> accuracy;  // per epoch, on the training data
    bool diverged = false;
};

TrainReport train(Model& m, const Dataset& data, const TrainConfig& cfg,
                  LossKind loss = LossKind::CrossEntropy);

double evaluate_accuracy(const Model& m, const Dataset& data);

// Argmax with ties broken toward the lowest class index.
int argmax_row(const float* row, std::size_t c);
std::vector<int> predict(const Model& m, const Tensor& batch);

}  // namespace wmark
