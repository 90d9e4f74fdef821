#pragma once

#include <cstdint>
#include <string>

#include "wmark/nn.hpp"

namespace wmark {

// Built-in classification task: each class owns a random 5x5 glyph that is
// bilinearly upscaled to 16x16; samples apply a wrap-around pixel shift and
// additive Gaussian noise, then clamp to [0,1]. Everything derives from
// `seed`, so two runs produce identical tensors.
struct SyntheticTaskSpec {
    int num_classes = 10;
    std::size_t train_size = 1500;
    std::size_t test_size = 500;
    double noise_sigma = 0.10;
    int max_shift = 2;
    std::uint64_t seed = 1;
};

struct TaskData {
    Dataset train;
    Dataset test;
};

// Class counts differ by at most one when a split size is not divisible by
// num_classes.
TaskData make_synthetic_task(const SyntheticTaskSpec& spec);

// Single sample of the given class, without noise or shift. Shape {1,16,16}.
Tensor synthetic_glyph(const SyntheticTaskSpec& spec, int cls);

// IDX-format pair (big-endian magics 0x00000803 images / 0x00000801 labels).
// Pixels are scaled from bytes to [0,1]; images get shape [n,1,rows,cols].
// Throws std::runtime_error naming the offending path on malformed files or
// when the two files disagree on the sample count.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace wmark
