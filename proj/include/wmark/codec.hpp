#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmark/nn.hpp"
#include "wmark/tensor.hpp"

namespace wmark {

inline constexpr std::size_t kCodeBytes = 32;

// Fixed-width binary identity unit. Value type, totally ordered.
struct Code {
    std::array<std::uint8_t, kCodeBytes> bytes{};
    auto operator<=>(const Code&) const = default;
};

std::string to_hex(const Code& c);
Code code_from_hex(std::string_view hex);  // throws std::invalid_argument on bad input

// SHA-256 of `parts` concatenated, prefixed by the domain-separation `tag`.
// Every derived quantity below uses a distinct tag so the roles of the hash
// never collide: 0x01/0x02 chain tail, 0x03 chain reduction, 0x04 label,
// 0x05 trigger pixels, 0x06 latent extension.
std::array<std::uint8_t, 32> tagged_hash(std::uint8_t tag,
                                         std::initializer_list<std::span<const std::uint8_t>> parts);

// Last two elements of the code chain, derived from an arbitrary-length key.
std::pair<Code, Code> derive_tail(std::span<const std::uint8_t> key);
std::pair<Code, Code> derive_tail(std::string_view key);

// One step of the reverse chain: the predecessor of the pair (a, b).
Code reduce(const Code& a, const Code& b);

// Ordered codes u_1..u_N with u_n == reduce(u_{n+1}, u_{n+2}) for n <= N-2.
struct CodeSequence {
    std::vector<Code> codes;
    std::size_t size() const { return codes.size(); }
};

CodeSequence build_sequence(std::span<const std::uint8_t> key, std::size_t n);
CodeSequence build_sequence(std::string_view key, std::size_t n);

// True iff every interior element reduces from its two successors.
bool sequence_consistent(const CodeSequence& seq);

enum class EncoderVariant : std::uint32_t {
    SeededNoise = 1,       // i.i.d. Gaussian(0.5, 0.15^2) pixels, clamped, PRNG seeded from the code
    GeneratorLatent = 2,   // image = clamp01(G(z)), z derived from the code bytes
    ContinuousLinear = 3,  // 0.5 + sum of per-bit basis patterns, geometrically decaying weights
};

// Pure, deterministic code-to-image map. For GeneratorLatent the generator
// network is shared, never owned; encode output shape always equals
// image_shape regardless of variant.
struct EncoderSpec {
    EncoderVariant variant = EncoderVariant::SeededNoise;
    std::vector<std::size_t> image_shape;  // per sample, e.g. {1,16,16}
    std::size_t latent_dim = 32;           // GeneratorLatent only
    std::uint64_t basis_seed = 1;          // ContinuousLinear only
    std::shared_ptr<const Model> generator_net;  // GeneratorLatent only

    void validate() const;
};

// Standard-normal latent derived from the code: byte i maps to the inverse
// normal CDF of (byte + 0.5)/256. Dims past 32 consume bytes from the chained
// extension blocks H(0x06|code), H(0x06|prev block), ...
Tensor code_to_latent(const Code& code, std::size_t latent_dim);

Tensor encode_trigger(const EncoderSpec& spec, const Code& code);

// Pseudorandom class assignment: first 8 bytes of H(0x04|code), read
// big-endian, reduced mod C.
int assign_label(const Code& code, int num_classes);

// PRNG seed for the SeededNoise variant: first 8 bytes of H(0x05|code),
// big-endian.
std::uint64_t trigger_seed(const Code& code);

struct TriggerRow {
    Code code;
    Tensor image;
    int label = 0;
};

struct TriggerSet {
    std::vector<TriggerRow> rows;
    std::size_t size() const { return rows.size(); }
};

TriggerSet build_trigger_set(const CodeSequence& seq, const EncoderSpec& spec, int num_classes);

// Re-derives every row from its code and compares exactly.
bool trigger_set_consistent(const TriggerSet& set, const EncoderSpec& spec, int num_classes);

}  // namespace wmark
