#include "wmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "wmark/codec.hpp"
#include "wmark/rng.hpp"

namespace wmark {

VerificationResult verify_package_model(const WatermarkPackage& pkg, const Model& model,
                                        double tau) {
    VerificationConfig cfg;
    cfg.tau = tau;
    cfg.num_classes = pkg.num_classes;
    if (pkg.backdoor == BackdoorKind::PostTrigger) {
        cfg.match_mode = MatchMode::Fuzzy;
        cfg.epsilon = pkg.epsilon;
    }
    const Evidence ev = build_evidence(pkg, pkg.trigger_set.size(), 0);
    return verify(model, ev, pkg.encoder, cfg);
}

AttackOutcome fine_tune_attack(const WatermarkPackage& pkg, const Dataset& data,
                               std::size_t epochs, const TrainConfig& cfg,
                               const Dataset* eval_data) {
    if (data.size() == 0) {
        throw std::invalid_argument("fine_tune_attack: tuning data is empty");
    }
    const Dataset& eval = eval_data ? *eval_data : data;

    AttackOutcome out;
    out.model_attacked = pkg.model_wm;
    out.normal_acc_curve.push_back(evaluate_accuracy(out.model_attacked, eval));
    out.trigger_acc_curve.push_back(trigger_accuracy(out.model_attacked, pkg.trigger_set));

    for (std::size_t e = 0; e < epochs; ++e) {
        TrainConfig step = cfg;
        step.epochs = 1;
        step.seed = cfg.seed + e;
        train(out.model_attacked, data, step);
        out.normal_acc_curve.push_back(evaluate_accuracy(out.model_attacked, eval));
        out.trigger_acc_curve.push_back(trigger_accuracy(out.model_attacked, pkg.trigger_set));
    }
    out.verification_after = verify_package_model(pkg, out.model_attacked);
    return out;
}

AttackOutcome adversarial_tune_attack(const WatermarkPackage& pkg, const EncoderSpec& encoder,
                                      int c_adv, std::size_t w, std::size_t epochs,
                                      std::uint64_t seed, const Dataset& eval_data,
                                      const TrainConfig& cfg) {
    if (c_adv < 0 || c_adv >= pkg.num_classes) {
        throw std::invalid_argument("adversarial_tune_attack: c_adv " + std::to_string(c_adv) +
                                    " outside [0, " + std::to_string(pkg.num_classes) + ")");
    }
    encoder.validate();

    // Forged codes are raw PRNG bytes; nothing links them to the owner's
    // chain, which is the attacker's whole handicap.
    Dataset forged;
    if (w > 0) {
        CounterRng rng(seed, 1);
        std::vector<Tensor> imgs;
        imgs.reserve(w);
        forged.labels.assign(w, c_adv);
        for (std::size_t i = 0; i < w; ++i) {
            Code c;
            for (std::size_t b = 0; b < kCodeBytes; b += 8) {
                const std::uint64_t v = rng.next_u64();
                for (std::size_t k = 0; k < 8; ++k) {
                    c.bytes[b + k] = static_cast<std::uint8_t>(v >> (8 * k));
                }
            }
            imgs.push_back(encode_trigger(encoder, c));
        }
        forged.images = stack_rows(imgs);
    }

    AttackOutcome out;
    out.model_attacked = pkg.model_wm;
    out.normal_acc_curve.push_back(evaluate_accuracy(out.model_attacked, eval_data));
    out.trigger_acc_curve.push_back(trigger_accuracy(out.model_attacked, pkg.trigger_set));

    for (std::size_t e = 0; e < epochs && w > 0; ++e) {
        TrainConfig step = cfg;
        step.epochs = 1;
        step.seed = cfg.seed + e;
        step.batch_size = std::min(cfg.batch_size, w);
        train(out.model_attacked, forged, step);
        out.normal_acc_curve.push_back(evaluate_accuracy(out.model_attacked, eval_data));
        out.trigger_acc_curve.push_back(trigger_accuracy(out.model_attacked, pkg.trigger_set));
    }
    out.verification_after = verify_package_model(pkg, out.model_attacked);
    return out;
}

namespace {

void prune_global(Model& m, double fraction) {
    std::vector<float> mags;
    for (const Tensor& w : m.weights) {
        for (float v : w.data) {
            mags.push_back(std::fabs(v));
        }
    }
    if (mags.empty() || fraction == 0.0) {
        return;
    }
    const std::size_t cut = static_cast<std::size_t>(fraction * static_cast<double>(mags.size()));
    if (cut == 0) {
        return;
    }
    std::nth_element(mags.begin(), mags.begin() + (cut - 1), mags.end());
    const float threshold = mags[cut - 1];
    // Everything at or below the threshold magnitude goes; ties may prune a
    // few extra weights, which is irrelevant at these scales.
    for (Tensor& w : m.weights) {
        for (float& v : w.data) {
            if (std::fabs(v) <= threshold) {
                v = 0.0f;
            }
        }
    }
}

}  // namespace

std::vector<AttackOutcome> prune_attack(const WatermarkPackage& pkg,
                                        const std::vector<double>& fractions,
                                        const Dataset& eval_data) {
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        if (fractions[i] < 0.0 || fractions[i] >= 1.0) {
            throw std::invalid_argument("prune_attack: fractions must lie in [0, 1)");
        }
        if (i > 0 && fractions[i] < fractions[i - 1]) {
            throw std::invalid_argument("prune_attack: fractions must be ascending");
        }
    }

    const double base_normal = evaluate_accuracy(pkg.model_wm, eval_data);
    const double base_trigger = trigger_accuracy(pkg.model_wm, pkg.trigger_set);

    std::vector<AttackOutcome> outs;
    outs.reserve(fractions.size());
    for (double f : fractions) {
        AttackOutcome out;
        out.model_attacked = pkg.model_wm;
        prune_global(out.model_attacked, f);
        out.normal_acc_curve = {base_normal, evaluate_accuracy(out.model_attacked, eval_data)};
        out.trigger_acc_curve = {base_trigger,
                                 trigger_accuracy(out.model_attacked, pkg.trigger_set)};
        out.verification_after = verify_package_model(pkg, out.model_attacked);
        outs.push_back(std::move(out));
    }
    return outs;
}

}  // namespace wmark
