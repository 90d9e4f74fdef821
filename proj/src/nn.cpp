#include "wmark/nn.hpp"

#include <numeric>

namespace wmark {

std::vector<std::size_t> layer_output_shape(const LayerSpec& layer,
                                            const std::vector<std::size_t>& in_shape) {
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("layer shape: " + why + " (input " +
                                    Tensor::shape_str(in_shape) + ")");
    };
    switch (layer.kind) {
        case LayerKind::Dense:
            if (in_shape.size() != 1) fail("dense expects a flat vector");
            if (in_shape[0] != layer.in) fail("dense input width mismatch");
            if (layer.out == 0) fail("dense output width must be positive");
            return {layer.out};
        case LayerKind::Conv2d:
            if (in_shape.size() != 3) fail("conv2d expects [channels, h, w]");
            if (in_shape[0] != layer.in) fail("conv2d channel mismatch");
            if (in_shape[1] < 2 || in_shape[2] < 2) fail("conv2d spatial dims too small");
            if (layer.out == 0) fail("conv2d output channels must be positive");
            return {layer.out, in_shape[1], in_shape[2]};
        case LayerKind::Relu:
        case LayerKind::Sigmoid:
            return in_shape;
        case LayerKind::MaxPool2:
            if (in_shape.size() != 3) fail("maxpool expects [channels, h, w]");
            if (in_shape[1] % 2 != 0 || in_shape[2] % 2 != 0) fail("maxpool dims must be even");
            return {in_shape[0], in_shape[1] / 2, in_shape[2] / 2};
        case LayerKind::Flatten: {
            std::size_t n = 1;
            for (std::size_t d : in_shape) n *= d;
            return {n};
        }
    }
    fail("unknown layer kind");
    return {};
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
    return cross_entropy_with_grad(logits, labels).value;
}

double l1_logits(const Tensor& a, const Tensor& b) { return l1_logits_with_grad(a, b).value; }

Gradients grad(const Model& m, const Tensor& batch, const LossTarget& target) {
    Trace tr = forward_trace(m, batch);
    LossOut<float> lo;
    if (const auto* ce = std::get_if<CeTarget>(&target)) {
        lo = cross_entropy_with_grad(tr.logits(), ce->labels);
    } else {
        lo = l1_logits_with_grad(tr.logits(), std::get<L1Target>(target).logits);
    }
    if (!std::isfinite(lo.value)) throw numeric_error("non-finite loss");
    Gradients g = backward(m, tr, lo.dlogits);
    g.loss = lo.value;
    return g;
}

void sgd_step(Model& m, const Gradients& g, double lr) {
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        if (!m.layers[li].has_params()) continue;
        if (!g.dweights[li].same_shape(m.weights[li]) || !g.dbiases[li].same_shape(m.biases[li]))
            throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                        std::to_string(li));
        float f = static_cast<float>(lr);
        for (std::size_t i = 0; i < m.weights[li].numel(); ++i)
            m.weights[li].data[i] -= f * g.dweights[li].data[i];
        for (std::size_t i = 0; i < m.biases[li].numel(); ++i)
            m.biases[li].data[i] -= f * g.dbiases[li].data[i];
    }
}

void Dataset::validate(std::size_t num_classes) const {
    if (images.ndim() < 2 || images.shape[0] != labels.size())
        throw std::invalid_argument("dataset: images/labels size mismatch");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
            throw std::invalid_argument("dataset: label out of range");
    if (logits.numel() != 0 &&
        (logits.ndim() != 2 || logits.shape[0] != labels.size() || logits.shape[1] != num_classes))
        throw std::invalid_argument("dataset: logits shape mismatch");
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    std::vector<std::size_t> sshape(images.shape.begin() + 1, images.shape.end());
    std::size_t stride = Tensor::numel_of(sshape);
    std::vector<std::size_t> out_shape = images.shape;
    out_shape[0] = idx.size();
    out.images = Tensor(out_shape);
    out.labels.reserve(idx.size());
    bool with_logits = logits.numel() != 0;
    if (with_logits) out.logits = Tensor({idx.size(), logits.shape[1]});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::size_t s = idx[i];
        if (s >= size()) throw std::out_of_range("dataset subset: index out of range");
        std::copy_n(&images.data[s * stride], stride, &out.images.data[i * stride]);
        out.labels.push_back(labels[s]);
        if (with_logits)
            std::copy_n(&logits.data[s * logits.shape[1]], logits.shape[1],
                        &out.logits.data[i * logits.shape[1]]);
    }
    return out;
}

TrainReport train(Model& m, const Dataset& data, const TrainConfig& cfg, LossKind loss) {
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (loss == LossKind::L1ToTargets && data.logits.numel() == 0)
        throw std::invalid_argument("train: L1 loss needs target logits in the dataset");
    data.validate(m.out_dim);

    TrainReport report;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        CounterRng rng(cfg.seed, /*stream=*/epoch + 1);
        // Fisher-Yates over the index vector; the RNG stream is a pure
        // function of (seed, epoch) so training order is reproducible.
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t stop = std::min(start + cfg.batch_size, order.size());
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
            Dataset mb = data.subset(idx);
            LossTarget target;
            if (loss == LossKind::CrossEntropy)
                target = CeTarget{mb.labels};
            else
                target = L1Target{mb.logits};
            Gradients g;
            try {
                g = grad(m, mb.images, target);
            } catch (const numeric_error&) {
                report.diverged = true;
                return report;
            }
            sgd_step(m, g, cfg.lr);
            epoch_loss += g.loss;
            ++batches;
        }
        report.loss.push_back(epoch_loss / static_cast<double>(batches));
        report.accuracy.push_back(evaluate_accuracy(m, data));
    }
    return report;
}

int argmax_row(const float* row, std::size_t c) {
    int best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

std::vector<int> predict(const Model& m, const Tensor& batch) {
    Tensor logits = forward(m, batch);
    std::vector<int> out(logits.shape[0]);
    for (std::size_t i = 0; i < logits.shape[0]; ++i)
        out[i] = argmax_row(&logits.data[i * logits.shape[1]], logits.shape[1]);
    return out;
}

double evaluate_accuracy(const Model& m, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
    // Batched to bound peak memory on large datasets.
    std::size_t n = data.size();
    std::size_t hits = 0;
    const std::size_t chunk = 256;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        std::size_t stop = std::min(start + chunk, n);
        idx.resize(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Dataset mb = data.subset(idx);
        std::vector<int> pred = predict(m, mb.images);
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == mb.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace wmark
