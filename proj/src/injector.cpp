#include "wmark/injector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmark/rng.hpp"

namespace wmark {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return CounterRng::mix(seed ^ (salt * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull));
}

Tensor as_batch1(const Tensor& image) { return stack_rows(std::vector<Tensor>{image}); }

Dataset single_sample(const Tensor& image, int label) {
    Dataset ds;
    ds.images = as_batch1(image);
    ds.labels = {label};
    return ds;
}

Dataset anchors_as_dataset(const AnchorSet& anchors) {
    Dataset ds;
    ds.images = anchors.images;
    ds.labels = anchors.labels;
    return ds;
}

Dataset trigger_dataset(const TriggerSet& set) {
    std::vector<Tensor> images;
    std::vector<int> labels;
    images.reserve(set.rows.size());
    labels.reserve(set.rows.size());
    for (const TriggerRow& row : set.rows) {
        images.push_back(row.image);
        labels.push_back(row.label);
    }
    Dataset ds;
    ds.images = stack_rows(images);
    ds.labels = std::move(labels);
    return ds;
}

// acc += coeff * g, over every parameter gradient of matching layers.
void axpy_grads(Gradients& acc, const Gradients& g, double coeff) {
    if (acc.dweights.size() != g.dweights.size()) {
        throw std::invalid_argument("axpy_grads: layer count mismatch");
    }
    const float c = static_cast<float>(coeff);
    for (std::size_t i = 0; i < acc.dweights.size(); ++i) {
        for (std::size_t j = 0; j < acc.dweights[i].data.size(); ++j) {
            acc.dweights[i].data[j] += c * g.dweights[i].data[j];
        }
        for (std::size_t j = 0; j < acc.dbiases[i].data.size(); ++j) {
            acc.dbiases[i].data[j] += c * g.dbiases[i].data[j];
        }
    }
}

// Rescales the parameter gradients so their joint l2 norm is at most
// max_norm. max_norm <= 0 disables clipping.
void clip_grads(Gradients& g, double max_norm) {
    if (max_norm <= 0.0) {
        return;
    }
    double sq = 0.0;
    for (const Tensor& t : g.dweights) {
        for (float v : t.data) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
    }
    for (const Tensor& t : g.dbiases) {
        for (float v : t.data) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) {
        return;
    }
    const float f = static_cast<float>(max_norm / norm);
    for (Tensor& t : g.dweights) {
        for (float& v : t.data) {
            v *= f;
        }
    }
    for (Tensor& t : g.dbiases) {
        for (float& v : t.data) {
            v *= f;
        }
    }
}

void run_finetune(Model& m, const Dataset& ds, const PostTriggerConfig& cfg, std::uint64_t seed,
                  std::size_t round) {
    TrainConfig tc;
    tc.lr = cfg.finetune_lr;
    tc.batch_size = std::min(cfg.finetune_batch, ds.labels.size());
    tc.epochs = cfg.finetune_epochs;
    tc.seed = seed;
    TrainReport rep = train(m, ds, tc);
    if (rep.diverged) {
        throw std::runtime_error("post-trigger generation: fine-tune diverged at round " +
                                 std::to_string(round));
    }
}

}  // namespace

void PostTriggerConfig::validate() const {
    if (lambda1 < 0.0 || !std::isfinite(lambda1)) {
        throw std::invalid_argument("post-trigger config: lambda1 must be finite and >= 0");
    }
    if (pixel_lr <= 0.0 || !std::isfinite(pixel_lr)) {
        throw std::invalid_argument("post-trigger config: pixel_lr must be finite and > 0");
    }
    if (finetune_lr <= 0.0 || !std::isfinite(finetune_lr)) {
        throw std::invalid_argument("post-trigger config: finetune_lr must be finite and > 0");
    }
    if (finetune_batch == 0) {
        throw std::invalid_argument("post-trigger config: finetune_batch must be >= 1");
    }
    if (q_iters > 0 && anchors_per_iter == 0) {
        throw std::invalid_argument("post-trigger config: anchors_per_iter must be >= 1");
    }
}

void InjectionConfig::validate() const {
    if (scheme != InjectionScheme::Solely && scheme != InjectionScheme::WithTrainingData &&
        scheme != InjectionScheme::WithAnchors) {
        throw std::invalid_argument("injection config: unknown scheme");
    }
    if (backdoor != BackdoorKind::Trigger && backdoor != BackdoorKind::PostTrigger) {
        throw std::invalid_argument("injection config: unknown backdoor kind");
    }
    if (lambda2 < 0.0 || !std::isfinite(lambda2)) {
        throw std::invalid_argument("injection config: lambda2 must be finite and >= 0");
    }
    if (anchor_count == 0) {
        throw std::invalid_argument("injection config: anchor_count must be >= 1");
    }
    if (!(trigger_acc_target > 0.0) || trigger_acc_target > 1.0) {
        throw std::invalid_argument("injection config: trigger_acc_target must be in (0, 1]");
    }
    if (min_epochs > max_epochs) {
        throw std::invalid_argument("injection config: min_epochs must not exceed max_epochs");
    }
    if (lr <= 0.0 || !std::isfinite(lr)) {
        throw std::invalid_argument("injection config: lr must be finite and > 0");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("injection config: batch_size must be >= 1");
    }
    if (anchor_grad_clip < 0.0 || !std::isfinite(anchor_grad_clip)) {
        throw std::invalid_argument("injection config: anchor_grad_clip must be finite and >= 0");
    }
    if (anchor_noise_sigma < 0.0 || !std::isfinite(anchor_noise_sigma)) {
        throw std::invalid_argument("injection config: anchor_noise_sigma must be finite and >= 0");
    }
    if (anchor_oversample == 0) {
        throw std::invalid_argument("injection config: anchor_oversample must be >= 1");
    }
    if (backdoor == BackdoorKind::PostTrigger) {
        post_trigger.validate();
    }
}

Tensor generate_post_trigger(const Model& clean, const Generator& gen, const Tensor& trigger,
                             int label, const PostTriggerConfig& cfg, std::uint64_t seed,
                             PostTriggerDiag* diag) {
    cfg.validate();
    if (trigger.shape != clean.input_shape) {
        throw std::invalid_argument("post-trigger: trigger shape " +
                                    Tensor::shape_str(trigger.shape) + " does not match model input " +
                                    Tensor::shape_str(clean.input_shape));
    }
    if (label < 0 || static_cast<std::size_t>(label) >= clean.out_dim) {
        throw std::invalid_argument("post-trigger: label " + std::to_string(label) + " out of range");
    }

    Tensor p = trigger;
    // Proximal shrink toward the original trigger, applied after each
    // cross-entropy step: exact minimizer of the quadratic term plus the
    // step-size-scaled distance to the gradient update.
    const double shrink = 2.0 * cfg.pixel_lr * cfg.lambda1;
    Model surrogate = clean;

    for (std::size_t q = 0; q < cfg.q_iters; ++q) {
        // The surrogate restarts from the clean model every round so it
        // tracks what an attacker's fine-tune would see, not an accumulation
        // of previous rounds.
        surrogate = clean;
        run_finetune(surrogate, single_sample(p, label), cfg, mix_seed(seed, 3 * q + 1), q);
        AnchorSet anchors =
            sample_anchors(gen, clean, cfg.anchors_per_iter, mix_seed(seed, 3 * q + 2));
        run_finetune(surrogate, anchors_as_dataset(anchors), cfg, mix_seed(seed, 3 * q + 3), q);

        try {
            for (std::size_t s = 0; s < cfg.pixel_steps; ++s) {
                Gradients g = grad(surrogate, as_batch1(p), CeTarget{{label}});
                for (std::size_t i = 0; i < p.data.size(); ++i) {
                    double stepped = static_cast<double>(p.data[i]) -
                                     cfg.pixel_lr * static_cast<double>(g.dinput.data[i]);
                    double prox = (stepped + shrink * static_cast<double>(trigger.data[i])) /
                                  (1.0 + shrink);
                    p.data[i] = static_cast<float>(std::clamp(prox, 0.0, 1.0));
                }
            }
        } catch (const numeric_error& e) {
            throw std::runtime_error("post-trigger generation: pixel step diverged at round " +
                                     std::to_string(q) + " (" + e.what() + ")");
        }
    }

    if (diag != nullptr) {
        Trace t = forward_trace(surrogate, as_batch1(p));
        const std::vector<int> labels = {label};
        LossOut<float> ce = cross_entropy_with_grad(t.acts.back(), labels);
        diag->final_ce = ce.value;
        diag->surrogate_agrees = argmax_row(t.acts.back().data.data(), clean.out_dim) == label;
    }
    return p;
}

double image_l1(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("image_l1: shape mismatch " + Tensor::shape_str(a.shape) +
                                    " vs " + Tensor::shape_str(b.shape));
    }
    if (a.data.empty()) {
        throw std::invalid_argument("image_l1: empty tensors");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        sum += std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    }
    return sum / static_cast<double>(a.data.size());
}

double trigger_accuracy(const Model& m, const TriggerSet& set) {
    if (set.rows.empty()) {
        return 1.0;
    }
    return evaluate_accuracy(m, trigger_dataset(set));
}

namespace {

// One pass over the triggers with the anchor regularizer. Anchors carry the
// clean model's logits; the l1 pull toward them keeps the watermarked model
// aligned with clean behavior away from the trigger support.
void anchor_scheme_epoch(Model& m, const Dataset& trig, const AnchorSet& anchors, double coeff,
                         double lr, std::size_t batch_size, double grad_clip,
                         std::uint64_t shuffle_seed) {
    const std::size_t n = trig.labels.size();
    const std::size_t s = anchors.labels.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    CounterRng rng(shuffle_seed, 1);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }

    // Anchor batches track trigger batches at the S/N size ratio so one epoch
    // consumes both sets roughly once.
    std::size_t cursor = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t bt = std::min(batch_size, n - start);
        std::vector<Tensor> imgs;
        std::vector<int> labels;
        imgs.reserve(bt);
        labels.reserve(bt);
        for (std::size_t k = 0; k < bt; ++k) {
            imgs.push_back(trig.images.row(order[start + k]));
            labels.push_back(trig.labels[order[start + k]]);
        }
        Gradients g = grad(m, stack_rows(imgs), CeTarget{labels});

        std::size_t ba = (bt * s + n / 2) / n;
        ba = std::clamp<std::size_t>(ba, 1, s);
        std::vector<Tensor> aimgs;
        std::vector<Tensor> alogits;
        aimgs.reserve(ba);
        alogits.reserve(ba);
        for (std::size_t k = 0; k < ba; ++k) {
            const std::size_t idx = (cursor + k) % s;
            aimgs.push_back(anchors.images.row(idx));
            alogits.push_back(anchors.logits.row(idx));
        }
        cursor = (cursor + ba) % s;
        Gradients ga = grad(m, stack_rows(aimgs), L1Target{stack_rows(alogits)});
        axpy_grads(g, ga, coeff);
        // A model trained to near-zero loss produces violent cross-entropy
        // gradients on fresh triggers; without the clip the first epoch can
        // undo most of its accuracy before the anchor term reacts.
        clip_grads(g, grad_clip);
        sgd_step(m, g, lr);
    }
}

// Pure anchor pass for an empty trigger set. At initialization the model
// equals clean, the logit differences are exactly zero, and every update is
// a bitwise no-op; the pass still exercises the full gradient path.
void anchor_only_epoch(Model& m, const AnchorSet& anchors, double coeff, double lr,
                       std::size_t batch_size) {
    const std::size_t s = anchors.labels.size();
    for (std::size_t start = 0; start < s; start += batch_size) {
        const std::size_t b = std::min(batch_size, s - start);
        std::vector<Tensor> imgs;
        std::vector<Tensor> logits;
        for (std::size_t k = 0; k < b; ++k) {
            imgs.push_back(anchors.images.row(start + k));
            logits.push_back(anchors.logits.row(start + k));
        }
        Gradients ga = grad(m, stack_rows(imgs), L1Target{stack_rows(logits)});
        for (Tensor& t : ga.dweights) {
            for (float& v : t.data) {
                v *= static_cast<float>(coeff);
            }
        }
        for (Tensor& t : ga.dbiases) {
            for (float& v : t.data) {
                v *= static_cast<float>(coeff);
            }
        }
        sgd_step(m, ga, lr);
    }
}

}  // namespace

WatermarkPackage inject(const Model& clean, const TriggerSet& triggers, const EncoderSpec& encoder,
                        const Generator* gen, const Dataset* train_data,
                        const InjectionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    encoder.validate();
    const bool needs_gen =
        cfg.scheme == InjectionScheme::WithAnchors || cfg.backdoor == BackdoorKind::PostTrigger;
    if (needs_gen && gen == nullptr) {
        throw std::invalid_argument("inject: this scheme/backdoor combination needs a generator");
    }
    if (cfg.scheme == InjectionScheme::WithTrainingData) {
        if (train_data == nullptr) {
            throw std::invalid_argument("inject: scheme WithTrainingData needs training data");
        }
        train_data->validate(clean.out_dim);
        if (train_data->images.shape.size() < 2 ||
            std::vector<std::size_t>(train_data->images.shape.begin() + 1,
                                     train_data->images.shape.end()) != clean.input_shape) {
            throw std::invalid_argument("inject: training data shape does not match the model");
        }
    }
    const int num_classes = static_cast<int>(clean.out_dim);
    for (std::size_t i = 0; i < triggers.rows.size(); ++i) {
        const TriggerRow& row = triggers.rows[i];
        if (row.image.shape != clean.input_shape) {
            throw std::invalid_argument("inject: trigger row " + std::to_string(i) +
                                        " image shape does not match the model input");
        }
        if (row.label < 0 || row.label >= num_classes) {
            throw std::invalid_argument("inject: trigger row " + std::to_string(i) +
                                        " label out of range");
        }
    }

    WatermarkPackage pkg;
    pkg.trigger_set = triggers;
    pkg.encoder = encoder;
    pkg.n_codes = triggers.rows.size();
    pkg.num_classes = num_classes;
    pkg.scheme = cfg.scheme;
    pkg.backdoor = cfg.backdoor;
    pkg.lambda2 = cfg.lambda2;
    pkg.seed = seed;

    if (cfg.backdoor == BackdoorKind::PostTrigger) {
        for (std::size_t i = 0; i < triggers.rows.size(); ++i) {
            Tensor post = generate_post_trigger(clean, *gen, triggers.rows[i].image,
                                                triggers.rows[i].label, cfg.post_trigger,
                                                mix_seed(seed, 0x9000 + i));
            pkg.epsilon = std::max(pkg.epsilon, image_l1(triggers.rows[i].image, post));
            pkg.trigger_set.rows[i].image = std::move(post);
        }
    }

    Model wm = clean;
    const std::size_t n = pkg.trigger_set.rows.size();

    // The anchor coefficient scales the regularizer the way summing the full
    // loss over N triggers and S anchors would, independent of batch split.
    const double coeff =
        cfg.lambda2 * static_cast<double>(cfg.anchor_count) / static_cast<double>(std::max<std::size_t>(n, 1));

    const auto draw_anchors = [&](std::uint64_t salt) {
        if (cfg.anchor_oversample > 1) {
            return sample_anchors_stratified(*gen, clean, cfg.anchor_count, mix_seed(seed, salt),
                                             cfg.anchor_noise_sigma, cfg.anchor_oversample);
        }
        return sample_anchors(*gen, clean, cfg.anchor_count, mix_seed(seed, salt));
    };

    if (n == 0) {
        if (cfg.scheme == InjectionScheme::WithAnchors && cfg.max_epochs > 0) {
            anchor_only_epoch(wm, draw_anchors(0xA000), coeff, cfg.lr, 64);
        }
        pkg.model_wm = std::move(wm);
        pkg.trigger_accuracy = 1.0;
        return pkg;
    }

    Dataset trig = trigger_dataset(pkg.trigger_set);

    // Scheme WithTrainingData mixes a fixed sample of real training data into
    // the trigger epochs; the sample is drawn once so every epoch revisits
    // the same images.
    Dataset mixed;
    if (cfg.scheme == InjectionScheme::WithTrainingData) {
        const std::size_t avail = train_data->labels.size();
        const std::size_t take = std::min(cfg.anchor_count, avail);
        CounterRng rng(mix_seed(seed, 0xD000), 1);
        std::vector<std::size_t> idx(avail);
        for (std::size_t i = 0; i < avail; ++i) {
            idx[i] = i;
        }
        for (std::size_t i = 0; i < take; ++i) {
            std::swap(idx[i], idx[i + rng.below(avail - i)]);
        }
        std::vector<Tensor> imgs;
        std::vector<int> labels;
        imgs.reserve(n + take);
        labels.reserve(n + take);
        for (std::size_t i = 0; i < n; ++i) {
            imgs.push_back(trig.images.row(i));
            labels.push_back(trig.labels[i]);
        }
        for (std::size_t i = 0; i < take; ++i) {
            imgs.push_back(train_data->images.row(idx[i]));
            labels.push_back(train_data->labels[idx[i]]);
        }
        mixed.images = stack_rows(imgs);
        mixed.labels = std::move(labels);
    }

    double acc = trigger_accuracy(wm, pkg.trigger_set);
    std::size_t epoch = 0;
    while ((acc < cfg.trigger_acc_target || epoch < cfg.min_epochs) && epoch < cfg.max_epochs) {
        switch (cfg.scheme) {
            case InjectionScheme::Solely: {
                TrainConfig tc;
                tc.lr = cfg.lr;
                tc.batch_size = std::min(cfg.batch_size, n);
                tc.epochs = 1;
                tc.seed = mix_seed(seed, 0xB000 + epoch);
                TrainReport rep = train(wm, trig, tc);
                if (rep.diverged) {
                    throw std::runtime_error("inject: training diverged at epoch " +
                                             std::to_string(epoch));
                }
                break;
            }
            case InjectionScheme::WithTrainingData: {
                TrainConfig tc;
                tc.lr = cfg.lr;
                tc.batch_size = std::min(cfg.batch_size, mixed.labels.size());
                tc.epochs = 1;
                tc.seed = mix_seed(seed, 0xB000 + epoch);
                TrainReport rep = train(wm, mixed, tc);
                if (rep.diverged) {
                    throw std::runtime_error("inject: training diverged at epoch " +
                                             std::to_string(epoch));
                }
                break;
            }
            case InjectionScheme::WithAnchors: {
                AnchorSet anchors = draw_anchors(0xA000 + epoch);
                try {
                    anchor_scheme_epoch(wm, trig, anchors, coeff, cfg.lr,
                                        std::min(cfg.batch_size, n), cfg.anchor_grad_clip,
                                        mix_seed(seed, 0xC000 + epoch));
                } catch (const numeric_error& e) {
                    throw std::runtime_error("inject: training diverged at epoch " +
                                             std::to_string(epoch) + " (" + std::string(e.what()) +
                                             ")");
                }
                break;
            }
        }
        acc = trigger_accuracy(wm, pkg.trigger_set);
        ++epoch;
    }

    pkg.model_wm = std::move(wm);
    pkg.trigger_accuracy = acc;
    pkg.below_target = acc < cfg.trigger_acc_target;
    return pkg;
}

}  // namespace wmark
