#pragma once

#include <string>

#include "wmark/nn.hpp"

namespace wmark {

// Checkpoint container, all fields little-endian:
//   bytes 0..3   magic "WMDL"
//   u32          format version (currently 1)
//   u32          flags; bit 0 set = generator network (outputs are an image
//                to be clamped to [0,1] by the consumer)
//   u32          input rank, then u32 per input dimension
//   u32          layer count, then per layer: u32 kind, u32 in, u32 out
//   f32[]        parameters in layer order, weights before biases
// The file must end exactly after the last parameter.

struct CheckpointMeta {
    bool is_generator = false;
};

void save_model(const std::string& path, const Model& m, const CheckpointMeta& meta = {});

struct LoadedModel {
    Model model;
    CheckpointMeta meta;
};

// Throws std::runtime_error naming the path on malformed or truncated files.
LoadedModel load_model(const std::string& path);

}  // namespace wmark
