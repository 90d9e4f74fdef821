#pragma once

#include <cstdint>
#include <vector>

#include "wmark/nn.hpp"

namespace wmark {

// Latent-to-image network. The net ends in a sigmoid so raw outputs already
// sit in (0,1); generate() clamps anyway to honor the [0,1] contract.
struct Generator {
    std::size_t latent_dim = 64;
    std::vector<std::size_t> image_shape;  // per sample, e.g. {1,16,16}
    Model net;                             // input {latent_dim}, output H*W

    // z_batch: [n, latent_dim] -> images [n, image_shape...], clamped.
    Tensor generate(const Tensor& z_batch) const;
};

Generator make_generator(std::size_t latent_dim, std::vector<std::size_t> image_shape,
                         std::uint64_t seed);

// Anchor rows: images with the teacher's logits and argmax labels attached.
using AnchorSet = Dataset;

struct DistillResult {
    Generator generator;
    Model student;
    // Per-step mean l1 logit discrepancy, in optimization order.
    std::vector<double> discrepancy;
    // True when the teacher looks untrained, making distillation vacuous.
    // With a reference dataset this is measured accuracy below 2/C; without
    // one it falls back to a confidence probe that only catches teachers
    // whose outputs are near-uniform on random inputs.
    bool teacher_at_chance = false;
    // True when a non-finite value aborted the loop; partial state returned.
    bool diverged = false;
};

// Adversarial data-free distillation. Cycles five student steps (minimizing
// the student-teacher l1 logit gap on generated images) and one generator
// step (maximizing it, ascending through both networks' input gradients).
// Latents are standard normal, cfg.batch_size per step. The teacher is
// read-only. `student_init` (when given) seeds the student with an existing
// model instead of a fresh He initialization; it must match the teacher's
// topology. `reference` (when given) is labeled data used only for the
// at-chance warning flag.
DistillResult distill(const Model& teacher, std::size_t latent_dim, std::size_t steps,
                      const TrainConfig& cfg, const Model* student_init = nullptr,
                      const Dataset* reference = nullptr);

// `count` generator images with the teacher's logits and labels. Fresh
// latents derive from `seed` only.
AnchorSet sample_anchors(const Generator& gen, const Model& teacher, std::size_t count,
                         std::uint64_t seed);

// Class-stratified variant for generators whose raw output concentrates on a
// few labels. Draws `count * oversample` candidates, keeps up to
// ceil(count/C) per class, tops up with leftovers, then perturbs each kept
// image with clamped Gaussian pixel noise. Logits and labels come from the
// teacher on the perturbed images, so rows stay self-consistent. The result
// can still be lopsided when the generator never emits some class at all.
AnchorSet sample_anchors_stratified(const Generator& gen, const Model& teacher,
                                    std::size_t count, std::uint64_t seed,
                                    double noise_sigma = 0.10, std::size_t oversample = 8);

// Mean l1 logit gap between the two models on `count` fresh anchors.
double anchor_discrepancy(const Generator& gen, const Model& a, const Model& b,
                          std::size_t count, std::uint64_t seed);

// Fraction of `count` fresh anchors where the two models agree on the argmax.
double anchor_agreement(const Generator& gen, const Model& a, const Model& b, std::size_t count,
                        std::uint64_t seed);

}  // namespace wmark
