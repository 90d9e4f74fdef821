#include "wmark/codec.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "wmark/rng.hpp"

namespace wmark {

namespace {

// Acklam's rational approximation of the inverse standard-normal CDF.
// Absolute error below 1.2e-9 on (0,1), far inside f32 resolution.
double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    if (p <= 0.0 || p >= 1.0) throw std::invalid_argument("inverse_normal_cdf: p outside (0,1)");
    if (p < plow) {
        double q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > phigh) {
        double q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    double q = p - 0.5, r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

std::uint64_t read_be64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

std::span<const std::uint8_t> code_span(const Code& c) {
    return {c.bytes.data(), c.bytes.size()};
}

}  // namespace

std::array<std::uint8_t, 32> tagged_hash(
    std::uint8_t tag, std::initializer_list<std::span<const std::uint8_t>> parts) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("tagged_hash: EVP_MD_CTX_new failed");
    std::array<std::uint8_t, 32> out{};
    unsigned int out_len = 0;
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx, &tag, 1) == 1;
    for (auto part : parts)
        ok = ok && EVP_DigestUpdate(ctx, part.data(), part.size()) == 1;
    ok = ok && EVP_DigestFinal_ex(ctx, out.data(), &out_len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok || out_len != 32) throw std::runtime_error("tagged_hash: digest failed");
    return out;
}

std::string to_hex(const Code& c) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(2 * kCodeBytes);
    for (std::uint8_t b : c.bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0x0f]);
    }
    return s;
}

Code code_from_hex(std::string_view hex) {
    if (hex.size() != 2 * kCodeBytes)
        throw std::invalid_argument("code_from_hex: expected 64 hex chars, got " +
                                    std::to_string(hex.size()));
    auto nibble = [](char ch) -> int {
        if (ch >= '0' && ch <= '9') return ch - '0';
        if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
        if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
        throw std::invalid_argument("code_from_hex: invalid hex character");
    };
    Code c;
    for (std::size_t i = 0; i < kCodeBytes; ++i)
        c.bytes[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
    return c;
}

std::pair<Code, Code> derive_tail(std::span<const std::uint8_t> key) {
    Code a, b;
    a.bytes = tagged_hash(0x01, {key});
    b.bytes = tagged_hash(0x02, {key});
    return {a, b};
}

std::pair<Code, Code> derive_tail(std::string_view key) {
    return derive_tail(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(key.data()), key.size()));
}

Code reduce(const Code& a, const Code& b) {
    Code out;
    out.bytes = tagged_hash(0x03, {code_span(a), code_span(b)});
    return out;
}

CodeSequence build_sequence(std::span<const std::uint8_t> key, std::size_t n) {
    if (n < 2) throw std::invalid_argument("build_sequence: length must be at least 2");
    auto [second_last, last] = derive_tail(key);
    CodeSequence seq;
    seq.codes.resize(n);
    seq.codes[n - 2] = second_last;
    seq.codes[n - 1] = last;
    for (std::size_t i = n - 2; i-- > 0;)
        seq.codes[i] = reduce(seq.codes[i + 1], seq.codes[i + 2]);
    return seq;
}

CodeSequence build_sequence(std::string_view key, std::size_t n) {
    return build_sequence(std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(key.data()), key.size()),
                          n);
}

bool sequence_consistent(const CodeSequence& seq) {
    if (seq.codes.size() < 2) return false;
    for (std::size_t i = 0; i + 2 < seq.codes.size(); ++i)
        if (!(seq.codes[i] == reduce(seq.codes[i + 1], seq.codes[i + 2]))) return false;
    return true;
}

void EncoderSpec::validate() const {
    if (image_shape.empty()) throw std::invalid_argument("encoder: image_shape empty");
    (void)Tensor::numel_of(image_shape);
    if (variant == EncoderVariant::GeneratorLatent) {
        if (latent_dim == 0) throw std::invalid_argument("encoder: latent_dim must be positive");
        if (!generator_net) throw std::invalid_argument("encoder: generator network missing");
        if (generator_net->input_shape != std::vector<std::size_t>{latent_dim})
            throw std::invalid_argument("encoder: generator input dim mismatch");
        if (generator_net->out_dim != Tensor::numel_of(image_shape))
            throw std::invalid_argument("encoder: generator output does not fill image shape");
    }
}

Tensor code_to_latent(const Code& code, std::size_t latent_dim) {
    if (latent_dim == 0) throw std::invalid_argument("code_to_latent: latent_dim must be positive");
    Tensor z({latent_dim});
    std::array<std::uint8_t, 32> block = code.bytes;
    std::size_t consumed = 0;
    for (std::size_t i = 0; i < latent_dim; ++i) {
        if (consumed == block.size()) {
            block = tagged_hash(0x06, {std::span<const std::uint8_t>(block.data(), block.size())});
            consumed = 0;
        }
        double p = (static_cast<double>(block[consumed++]) + 0.5) / 256.0;
        z.data[i] = static_cast<float>(inverse_normal_cdf(p));
    }
    return z;
}

std::uint64_t trigger_seed(const Code& code) {
    auto h = tagged_hash(0x05, {code_span(code)});
    return read_be64(h.data());
}

namespace {

Tensor encode_seeded_noise(const EncoderSpec& spec, const Code& code) {
    Tensor img(spec.image_shape);
    CounterRng rng(trigger_seed(code), 0);
    for (float& v : img.data) {
        double p = 0.5 + 0.15 * rng.gaussian();
        v = static_cast<float>(std::min(1.0, std::max(0.0, p)));
    }
    return img;
}

Tensor encode_generator_latent(const EncoderSpec& spec, const Code& code) {
    Tensor z = code_to_latent(code, spec.latent_dim);
    Tensor batch({std::size_t{1}, spec.latent_dim}, z.data);
    Tensor out = forward(*spec.generator_net, batch);
    Tensor img(spec.image_shape);
    for (std::size_t i = 0; i < img.numel(); ++i)
        img.data[i] = std::min(1.0f, std::max(0.0f, out.data[i]));
    return img;
}

// Basis pattern weights decay geometrically with the bit index, so flipping
// a high-index bit moves the image by at most 0.08 * 0.97^i in any pixel.
Tensor encode_continuous_linear(const EncoderSpec& spec, const Code& code) {
    Tensor img(spec.image_shape);
    std::fill(img.data.begin(), img.data.end(), 0.5f);
    for (std::size_t bit = 0; bit < kCodeBytes * 8; ++bit) {
        bool set = (code.bytes[bit / 8] >> (7 - bit % 8)) & 1;
        if (!set) continue;
        double w = 0.08 * std::pow(0.97, static_cast<double>(bit));
        CounterRng rng(spec.basis_seed, bit + 1);
        for (float& v : img.data)
            v += static_cast<float>(w * (2.0 * rng.uniform() - 1.0));
    }
    for (float& v : img.data) v = std::min(1.0f, std::max(0.0f, v));
    return img;
}

}  // namespace

Tensor encode_trigger(const EncoderSpec& spec, const Code& code) {
    spec.validate();
    switch (spec.variant) {
        case EncoderVariant::SeededNoise:
            return encode_seeded_noise(spec, code);
        case EncoderVariant::GeneratorLatent:
            return encode_generator_latent(spec, code);
        case EncoderVariant::ContinuousLinear:
            return encode_continuous_linear(spec, code);
    }
    throw std::invalid_argument("encode_trigger: unknown variant");
}

int assign_label(const Code& code, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("assign_label: need at least one class");
    auto h = tagged_hash(0x04, {code_span(code)});
    return static_cast<int>(read_be64(h.data()) % static_cast<std::uint64_t>(num_classes));
}

TriggerSet build_trigger_set(const CodeSequence& seq, const EncoderSpec& spec, int num_classes) {
    if (seq.codes.size() < 2) throw std::invalid_argument("build_trigger_set: sequence too short");
    spec.validate();
    TriggerSet set;
    set.rows.reserve(seq.codes.size());
    for (const Code& code : seq.codes) {
        TriggerRow row;
        row.code = code;
        row.image = encode_trigger(spec, code);
        row.label = assign_label(code, num_classes);
        set.rows.push_back(std::move(row));
    }
    return set;
}

bool trigger_set_consistent(const TriggerSet& set, const EncoderSpec& spec, int num_classes) {
    for (const TriggerRow& row : set.rows) {
        if (row.label != assign_label(row.code, num_classes)) return false;
        Tensor want = encode_trigger(spec, row.code);
        if (!want.same_shape(row.image) || want.data != row.image.data) return false;
    }
    return true;
}

}  // namespace wmark
