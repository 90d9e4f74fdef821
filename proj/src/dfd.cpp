#include "wmark/dfd.hpp"

#include <cmath>

#include "wmark/rng.hpp"

namespace wmark {

namespace {

Tensor sample_latents(std::size_t n, std::size_t dim, CounterRng& rng) {
    Tensor z({n, dim});
    for (float& v : z.data) v = static_cast<float>(rng.gaussian());
    return z;
}

Tensor reshape_to_images(Tensor flat, const std::vector<std::size_t>& image_shape) {
    std::vector<std::size_t> shape;
    shape.push_back(flat.shape[0]);
    shape.insert(shape.end(), image_shape.begin(), image_shape.end());
    return Tensor(std::move(shape), std::move(flat.data));
}

// Mean of the per-sample max softmax probability; a chance-level model sits
// near 1/C on random inputs while a trained one is confident.
double probe_confidence(const Model& m, std::uint64_t seed) {
    CounterRng rng(seed, 9001);
    std::vector<std::size_t> shape = m.input_shape;
    shape.insert(shape.begin(), 64);
    Tensor x(shape);
    for (float& v : x.data) v = static_cast<float>(rng.uniform());
    Tensor logits = forward(m, x);
    double total = 0.0;
    std::size_t n = logits.shape[0], c = logits.shape[1];
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = &logits.data[i * c];
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0, top = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(static_cast<double>(row[j]) - mx);
            sum += e;
            top = std::max(top, e);
        }
        total += top / sum;
    }
    return total / static_cast<double>(n);
}

}  // namespace

Tensor Generator::generate(const Tensor& z_batch) const {
    Tensor flat = forward(net, z_batch);
    for (float& v : flat.data) v = std::min(1.0f, std::max(0.0f, v));
    return reshape_to_images(std::move(flat), image_shape);
}

Generator make_generator(std::size_t latent_dim, std::vector<std::size_t> image_shape,
                         std::uint64_t seed) {
    if (latent_dim == 0) throw std::invalid_argument("make_generator: latent_dim must be positive");
    std::size_t pixels = Tensor::numel_of(image_shape);
    Generator g;
    g.latent_dim = latent_dim;
    g.image_shape = std::move(image_shape);
    g.net = Model::make({latent_dim},
                        {LayerSpec::dense(latent_dim, 256), LayerSpec::relu(),
                         LayerSpec::dense(256, pixels), LayerSpec::sigmoid()},
                        seed);
    return g;
}

DistillResult distill(const Model& teacher, std::size_t latent_dim, std::size_t steps,
                      const TrainConfig& cfg, const Model* student_init,
                      const Dataset* reference) {
    if (steps == 0) throw std::invalid_argument("distill: steps must be at least 1");
    if (cfg.batch_size == 0) throw std::invalid_argument("distill: batch_size must be positive");

    DistillResult res;
    res.generator = make_generator(latent_dim, teacher.input_shape, cfg.seed);
    if (student_init) {
        if (student_init->input_shape != teacher.input_shape ||
            student_init->out_dim != teacher.out_dim)
            throw std::invalid_argument("distill: student_init shape mismatch");
        res.student = *student_init;
    } else {
        res.student = Model::make(teacher.input_shape, teacher.layers, cfg.seed + 0x5EEDULL);
    }
    if (reference && reference->size() > 0) {
        res.teacher_at_chance =
            evaluate_accuracy(teacher, *reference) < 2.0 / static_cast<double>(teacher.out_dim);
    } else {
        res.teacher_at_chance = probe_confidence(teacher, cfg.seed) <
                                1.5 / static_cast<double>(teacher.out_dim);
    }

    CounterRng latent_rng(cfg.seed, 1);
    for (std::size_t step = 0; step < steps; ++step) {
        bool generator_turn = (step % 6) == 5;
        Tensor z = sample_latents(cfg.batch_size, latent_dim, latent_rng);
        try {
            Trace tr_g = forward_trace(res.generator.net, z);
            Tensor x = reshape_to_images(tr_g.logits(), res.generator.image_shape);
            if (generator_turn) {
                // Ascend the discrepancy; the loss gradient reaches the
                // generator through both classifiers' input gradients.
                Trace tr_s = forward_trace(res.student, x);
                Trace tr_t = forward_trace(teacher, x);
                LossOut<float> d_s = l1_logits_with_grad(tr_s.logits(), tr_t.logits());
                LossOut<float> d_t = l1_logits_with_grad(tr_t.logits(), tr_s.logits());
                Tensor dx_s = backward(res.student, tr_s, d_s.dlogits).dinput;
                Tensor dx_t = backward(teacher, tr_t, d_t.dlogits).dinput;
                Tensor dflat({z.shape[0], tr_g.logits().shape[1]});
                for (std::size_t i = 0; i < dflat.numel(); ++i)
                    dflat.data[i] = dx_s.data[i] + dx_t.data[i];
                Gradients g = backward(res.generator.net, tr_g, dflat);
                sgd_step(res.generator.net, g, -cfg.lr);
                res.discrepancy.push_back(d_s.value);
            } else {
                Tensor t_logits = forward(teacher, x);
                Gradients g = grad(res.student, x, L1Target{t_logits});
                sgd_step(res.student, g, cfg.lr);
                res.discrepancy.push_back(g.loss);
            }
        } catch (const numeric_error&) {
            res.diverged = true;
            return res;
        }
    }
    return res;
}

AnchorSet sample_anchors(const Generator& gen, const Model& teacher, std::size_t count,
                         std::uint64_t seed) {
    if (count == 0) throw std::invalid_argument("sample_anchors: count must be at least 1");
    CounterRng rng(seed, 2);
    std::vector<std::size_t> img_shape = gen.image_shape;
    img_shape.insert(img_shape.begin(), count);
    AnchorSet set;
    set.images = Tensor(img_shape);
    set.logits = Tensor({count, teacher.out_dim});
    set.labels.reserve(count);
    std::size_t pixels = Tensor::numel_of(gen.image_shape);
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < count; start += chunk) {
        std::size_t n = std::min(chunk, count - start);
        Tensor z = sample_latents(n, gen.latent_dim, rng);
        Tensor imgs = gen.generate(z);
        Tensor logits = forward(teacher, imgs);
        std::copy(imgs.data.begin(), imgs.data.end(), set.images.data.begin() + start * pixels);
        std::copy(logits.data.begin(), logits.data.end(),
                  set.logits.data.begin() + start * teacher.out_dim);
        for (std::size_t i = 0; i < n; ++i)
            set.labels.push_back(argmax_row(&logits.data[i * teacher.out_dim], teacher.out_dim));
    }
    return set;
}

AnchorSet sample_anchors_stratified(const Generator& gen, const Model& teacher,
                                    std::size_t count, std::uint64_t seed, double noise_sigma,
                                    std::size_t oversample) {
    if (count == 0) throw std::invalid_argument("sample_anchors_stratified: count must be at least 1");
    if (oversample == 0) throw std::invalid_argument("sample_anchors_stratified: oversample must be at least 1");
    const std::size_t C = teacher.out_dim;
    AnchorSet pool = sample_anchors(gen, teacher, count * oversample, seed);
    std::size_t quota = (count + C - 1) / C;
    std::vector<std::vector<std::size_t>> byclass(C);
    for (std::size_t i = 0; i < pool.labels.size(); ++i)
        byclass[static_cast<std::size_t>(pool.labels[i])].push_back(i);
    std::vector<char> used(pool.labels.size(), 0);
    std::vector<std::size_t> chosen;
    chosen.reserve(count);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t k = 0; k < byclass[c].size() && k < quota; ++k) {
            chosen.push_back(byclass[c][k]);
            used[byclass[c][k]] = 1;
        }
    for (std::size_t i = 0; chosen.size() < count && i < pool.labels.size(); ++i)
        if (!used[i]) chosen.push_back(i);
    if (chosen.size() > count) chosen.resize(count);

    CounterRng rng(seed, 9);
    std::vector<Tensor> imgs;
    imgs.reserve(chosen.size());
    for (std::size_t c : chosen) {
        Tensor img = pool.images.row(c);
        if (noise_sigma > 0.0)
            for (float& v : img.data)
                v = static_cast<float>(std::clamp(
                    static_cast<double>(v) + noise_sigma * rng.gaussian(), 0.0, 1.0));
        imgs.push_back(std::move(img));
    }
    AnchorSet set;
    set.images = stack_rows(imgs);
    set.logits = forward(teacher, set.images);
    set.labels.reserve(imgs.size());
    for (std::size_t i = 0; i < imgs.size(); ++i)
        set.labels.push_back(argmax_row(&set.logits.data[i * C], C));
    return set;
}

double anchor_discrepancy(const Generator& gen, const Model& a, const Model& b,
                          std::size_t count, std::uint64_t seed) {
    AnchorSet set = sample_anchors(gen, a, count, seed);
    double total = 0.0;
    std::size_t done = 0;
    const std::size_t chunk = 64;
    std::vector<std::size_t> idx;
    while (done < count) {
        std::size_t n = std::min(chunk, count - done);
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = done + i;
        Dataset mb = set.subset(idx);
        total += l1_logits(forward(b, mb.images), mb.logits) * static_cast<double>(n);
        done += n;
    }
    return total / static_cast<double>(count);
}

double anchor_agreement(const Generator& gen, const Model& a, const Model& b, std::size_t count,
                        std::uint64_t seed) {
    AnchorSet set = sample_anchors(gen, a, count, seed);
    std::size_t hits = 0, done = 0;
    const std::size_t chunk = 64;
    std::vector<std::size_t> idx;
    while (done < count) {
        std::size_t n = std::min(chunk, count - done);
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = done + i;
        Dataset mb = set.subset(idx);
        std::vector<int> pb = predict(b, mb.images);
        for (std::size_t i = 0; i < n; ++i)
            if (pb[i] == mb.labels[i]) ++hits;
        done += n;
    }
    return static_cast<double>(hits) / static_cast<double>(count);
}

}  // namespace wmark
