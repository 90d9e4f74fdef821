#pragma once

#include <cstdint>
#include <vector>

#include "wmark/injector.hpp"
#include "wmark/nn.hpp"
#include "wmark/verifier.hpp"

namespace wmark {

// Result of one attack on a watermarked package. The package itself is never
// touched; the attacked model is an independent copy. Curve index 0 is the
// state before any attack step, so both curves hold steps+1 points and their
// last entries match a fresh evaluation of model_attacked.
struct AttackOutcome {
    Model model_attacked;
    std::vector<double> normal_acc_curve;
    std::vector<double> trigger_acc_curve;
    VerificationResult verification_after;
};

// Ownership check used by every attack report: full-window evidence against
// the attacked model, fuzzy matching with the package's calibrated radius
// for post-trigger packages and exact matching otherwise.
VerificationResult verify_package_model(const WatermarkPackage& pkg, const Model& model,
                                        double tau = 0.05);

// Continues ordinary training on attacker data. Normal accuracy is measured
// on eval_data when given, else on the tuning data itself. cfg.epochs is
// ignored in favor of `epochs` so a caller cannot request two different
// lengths.
AttackOutcome fine_tune_attack(const WatermarkPackage& pkg, const Dataset& data,
                               std::size_t epochs, const TrainConfig& cfg,
                               const Dataset* eval_data = nullptr);

// Tunes the model on W forged triggers built from random codes, all labeled
// c_adv, to herd trigger-like inputs into one class. The forged codes come
// from `seed` and are unrelated to any key. Normal accuracy is measured on
// eval_data.
AttackOutcome adversarial_tune_attack(const WatermarkPackage& pkg, const EncoderSpec& encoder,
                                      int c_adv, std::size_t w, std::size_t epochs,
                                      std::uint64_t seed, const Dataset& eval_data,
                                      const TrainConfig& cfg = {});

// Zeroes the smallest-magnitude weights globally, one outcome per fraction.
// Biases stay. Fractions must be ascending and inside [0, 1). Each outcome's
// curves hold the unpruned baseline and the post-pruning point.
std::vector<AttackOutcome> prune_attack(const WatermarkPackage& pkg,
                                        const std::vector<double>& fractions,
                                        const Dataset& eval_data);

}  // namespace wmark
