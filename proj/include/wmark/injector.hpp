#pragma once

#include <cstdint>
#include <optional>

#include "wmark/codec.hpp"
#include "wmark/dfd.hpp"
#include "wmark/nn.hpp"

namespace wmark {

struct PostTriggerConfig {
    double lambda1 = 0.5;           // weight of the stay-close-to-trigger term
    std::size_t q_iters = 30;       // outer refinement rounds
    std::size_t anchors_per_iter = 100;
    std::size_t pixel_steps = 20;   // image-space steps per round
    double pixel_lr = 0.05;
    std::size_t finetune_epochs = 3;
    double finetune_lr = 0.05;
    std::size_t finetune_batch = 32;

    void validate() const;
};

struct PostTriggerDiag {
    double final_ce = 0.0;        // cross-entropy of the last surrogate on the result
    bool surrogate_agrees = false;  // last surrogate argmax equals the target label
};

// Hardens one trigger image so it survives fine-tuning. Each round builds a
// surrogate of the attack: fine-tune a fresh clean copy on (image, label),
// then on fresh teacher-labeled anchors; the image then takes pixel_steps
// proximal steps against that surrogate, minimizing cross-entropy while a
// closed-form shrink handles the lambda1 * ||P - T||^2 term, clamping to
// [0,1] after every step. q_iters == 0 returns the trigger unchanged.
// Throws std::runtime_error naming the round index if a fine-tune diverges.
Tensor generate_post_trigger(const Model& clean, const Generator& gen, const Tensor& trigger,
                             int label, const PostTriggerConfig& cfg, std::uint64_t seed,
                             PostTriggerDiag* diag = nullptr);

enum class InjectionScheme : std::uint32_t {
    Solely = 1,            // cross-entropy on the triggers alone
    WithTrainingData = 2,  // triggers plus a fixed sample of real training data
    WithAnchors = 3,       // triggers plus an l1 logit anchor term against the clean model
};

enum class BackdoorKind : std::uint32_t {
    Trigger = 1,
    PostTrigger = 2,
};

struct InjectionConfig {
    InjectionScheme scheme = InjectionScheme::WithAnchors;
    BackdoorKind backdoor = BackdoorKind::Trigger;
    double lambda2 = 5.0;
    std::size_t anchor_count = 500;  // S; also the training-sample count for WithTrainingData
    double trigger_acc_target = 0.90;
    std::size_t max_epochs = 200;
    // Epoch floor before the accuracy stop check applies. Reaching the trigger
    // target in the first few epochs leaves the rest of the model only partly
    // repaired; the floor forces extra consolidation passes. Must not exceed
    // max_epochs.
    std::size_t min_epochs = 0;
    double lr = 0.05;
    std::size_t batch_size = 8;  // trigger minibatch; anchor batches scale by S/N
    // Anchor-scheme stabilizers. A trained model near zero loss emits huge
    // first-epoch gradients on fresh triggers; the clip keeps those steps from
    // wrecking it (0 disables). Stratified sampling with pixel noise spreads
    // anchors across classes when the generator collapses onto a few.
    double anchor_grad_clip = 5.0;
    double anchor_noise_sigma = 0.10;
    std::size_t anchor_oversample = 8;  // 1 draws anchors unstratified
    PostTriggerConfig post_trigger;  // only read when backdoor == PostTrigger

    void validate() const;
};

struct WatermarkPackage {
    Model model_wm;
    // Rows hold the injected images: plain triggers, or post-triggers when
    // backdoor == PostTrigger (labels still come from the code map).
    TriggerSet trigger_set;
    EncoderSpec encoder;
    std::size_t n_codes = 0;  // N
    int num_classes = 0;      // C
    InjectionScheme scheme = InjectionScheme::WithAnchors;
    BackdoorKind backdoor = BackdoorKind::Trigger;
    double lambda2 = 5.0;
    // Calibrated fuzzy-match radius: the largest per-pixel mean l1 distance
    // between any plain trigger and its injected image. Zero for plain
    // trigger packages.
    double epsilon = 0.0;
    double trigger_accuracy = 0.0;  // on its own trigger set, at return time
    bool below_target = false;
    std::uint64_t seed = 0;
};

// Mean absolute per-pixel difference between two equal-shaped images.
double image_l1(const Tensor& a, const Tensor& b);

// Fraction of trigger rows the model classifies to the row label.
double trigger_accuracy(const Model& m, const TriggerSet& set);

// Embeds the trigger set into a copy of `clean`, stopping once accuracy on
// the triggers reaches cfg.trigger_acc_target (below_target is set when
// max_epochs runs out first). `gen` is required for scheme WithAnchors and
// for backdoor PostTrigger; `train_data` for scheme WithTrainingData.
WatermarkPackage inject(const Model& clean, const TriggerSet& triggers, const EncoderSpec& encoder,
                        const Generator* gen, const Dataset* train_data,
                        const InjectionConfig& cfg, std::uint64_t seed);

}  // namespace wmark
