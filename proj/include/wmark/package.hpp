#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmark/injector.hpp"
#include "wmark/verifier.hpp"

namespace wmark {

// Package directory layout:
//   model.wmdl       watermarked classifier (checkpoint format)
//   triggers.json    {"rows":[{"code_hex","label","image_b64"}]}
//   meta.json        scalars plus the encoder description
//   generator.wmdl   only for generator-backed encoders
// Images are base64 over raw little-endian f32, so a save/load cycle is
// bitwise exact. Trigger rows keep their injected images; for post-trigger
// packages those differ from what the codes alone would regenerate.
void save_package(const std::string& dir, const WatermarkPackage& pkg);

// Throws std::runtime_error naming the offending file on missing, malformed,
// or internally inconsistent content.
WatermarkPackage load_package(const std::string& dir);

// Evidence document: {"K","K_prime","rows":[{"code_hex","label","image_b64"}]}
// in exactly that field order, rows in window order. The flat pixel payload
// carries no shape, so loading takes the image shape from the caller (the
// verifying side already knows it from the encoder under test).
void save_evidence(const std::string& path, const Evidence& ev);
Evidence load_evidence(const std::string& path, const std::vector<std::size_t>& image_shape);

// Name round-trips for the enums that appear in documents and CLI flags.
std::string scheme_name(InjectionScheme s);
InjectionScheme scheme_from_name(std::string_view name);
std::string backdoor_name(BackdoorKind b);
BackdoorKind backdoor_from_name(std::string_view name);
std::string encoder_name(EncoderVariant v);
EncoderVariant encoder_from_name(std::string_view name);

// RFC 4648 alphabet with padding; decode rejects noncanonical input.
std::string base64_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace wmark
