#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <set>

#include "wmark/codec.hpp"
#include "wmark/rng.hpp"

using namespace wmark;

namespace {

Code random_code(CounterRng& rng) {
    Code c;
    for (std::size_t i = 0; i < kCodeBytes; i += 8) {
        std::uint64_t v = rng.next_u64();
        for (std::size_t j = 0; j < 8; ++j) c.bytes[i + j] = static_cast<std::uint8_t>(v >> (8 * j));
    }
    return c;
}

std::size_t bits_differing(const Code& a, const Code& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < kCodeBytes; ++i)
        n += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(a.bytes[i] ^ b.bytes[i])));
    return n;
}

}  // namespace

// Golden digests below were produced with an independent SHA-256
// implementation (Python hashlib) and frozen.

TEST_CASE("tail derivation matches frozen vectors and is deterministic") {
    auto [a, b] = derive_tail(std::string_view{});
    CHECK(to_hex(a) == "4bf5122f344554c53bde2ebb8cd2b7e3d1600ad631c385a5d7cce23c7785459a");
    CHECK(to_hex(b) == "dbc1b4c900ffe48d575b5da5c638040125f65db0fe3e24494b76ea986457d986");
    auto [a2, b2] = derive_tail(std::string_view{});
    CHECK(a == a2);
    CHECK(b == b2);

    auto [ka, kb] = derive_tail(std::string_view{"key"});
    CHECK(to_hex(ka) == "01993870138f27d9369b5ab3b1c7431109e8926ea0e695a3f604d67f6be156f3");
    CHECK(to_hex(kb) == "a1f552b7798c27cbf42efc91d74e3995e97af574c70d20496f702fb0f470f9d6");
}

TEST_CASE("one-bit key changes flip about half of all tail bits") {
    auto [a1, a2] = derive_tail(std::string_view{"a"});
    auto [b1, b2] = derive_tail(std::string_view{"b"});
    std::size_t diff = bits_differing(a1, b1) + bits_differing(a2, b2);
    CHECK(diff == 254);  // frozen; 512 bits total
    CHECK(diff > 0.4 * 512);
    CHECK(diff < 0.6 * 512);
}

TEST_CASE("chain reduction matches its frozen vector and is order sensitive") {
    Code zero{};
    Code r = reduce(zero, zero);
    CHECK(to_hex(r) == "dc48a742ae32cfd66352372d6120ed14d6629fc166246b05ff8b03e23804701f");
    CHECK(reduce(zero, zero) == r);

    CounterRng rng(1, 0);
    for (int i = 0; i < 1000; ++i) {
        Code a = random_code(rng), b = random_code(rng);
        if (a == b) continue;
        CHECK_FALSE(reduce(a, b) == reduce(b, a));
    }
}

TEST_CASE("a two-element sequence is exactly the derived tail") {
    CodeSequence seq = build_sequence(std::string_view{"desk"}, 2);
    auto [a, b] = derive_tail(std::string_view{"desk"});
    REQUIRE(seq.size() == 2);
    CHECK(seq.codes[0] == a);
    CHECK(seq.codes[1] == b);
    CHECK(sequence_consistent(seq));
}

TEST_CASE("sequence construction rejects lengths below two") {
    CHECK_THROWS_AS(build_sequence(std::string_view{"k"}, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_sequence(std::string_view{"k"}, 0), std::invalid_argument);
}

TEST_CASE("a four-element chain matches frozen vectors end to end") {
    CodeSequence seq = build_sequence(std::string_view{"k"}, 4);
    REQUIRE(seq.size() == 4);
    CHECK(to_hex(seq.codes[0]) ==
          "6e6379a84e25d1ca1530761e416e71a930a41e92766c6a8b88ebfc77bbac8af2");
    CHECK(to_hex(seq.codes[1]) ==
          "867eea13c555a80c04b62dba4356f3b2023066048228cba14c2f5462a8374655");
    CHECK(to_hex(seq.codes[2]) ==
          "b78902b850cd9a0a1a3d8ed55ece0fbba58cdd839e7e09856f17082c1bdd78f9");
    CHECK(to_hex(seq.codes[3]) ==
          "a9d0aef8fdc40f4545d941bb3a1c5094c80ec7dd3d184f0ff6959b6e8666f474");
}

TEST_CASE("every interior link of a fifty-element chain verifies") {
    CodeSequence seq = build_sequence(std::string_view{"owner"}, 50);
    REQUIRE(seq.size() == 50);
    CHECK(sequence_consistent(seq));
    for (std::size_t i = 0; i + 2 < 50; ++i)
        CHECK(seq.codes[i] == reduce(seq.codes[i + 1], seq.codes[i + 2]));
    // Tampering with one element breaks consistency.
    CodeSequence bad = seq;
    bad.codes[10].bytes[0] ^= 1;
    CHECK_FALSE(sequence_consistent(bad));
}

TEST_CASE("sequences of different lengths share only their tail derivation") {
    CodeSequence s10 = build_sequence(std::string_view{"k2"}, 10);
    CodeSequence s12 = build_sequence(std::string_view{"k2"}, 12);
    CHECK(s10.codes[8] == s12.codes[10]);
    CHECK(s10.codes[9] == s12.codes[11]);
    // Aligned by distance from the end, earlier elements still agree;
    // aligned by index from the front they do not.
    CHECK(s10.codes[0] == s12.codes[2]);
    CHECK_FALSE(s10.codes[0] == s12.codes[0]);
}

TEST_CASE("forging the next code by brute force never closes a chain link") {
    CodeSequence seq = build_sequence(std::string_view{"secret-owner-key"}, 5);
    const Code& u_n = seq.codes[0];
    const Code& u_n1 = seq.codes[1];
    CounterRng rng(424242, 0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < (1u << 20); ++i) {
        Code cand = random_code(rng);
        if (reduce(u_n1, cand) == u_n) ++hits;
    }
    CHECK(hits == 0);
}

TEST_CASE("seeded-noise triggers are deterministic with calibrated statistics") {
    EncoderSpec spec;
    spec.variant = EncoderVariant::SeededNoise;
    spec.image_shape = {1, 16, 16};
    CounterRng rng(7, 0);
    Code c = random_code(rng);
    Tensor img1 = encode_trigger(spec, c);
    Tensor img2 = encode_trigger(spec, c);
    CHECK(img1.data == img2.data);
    CHECK(img1.shape == std::vector<std::size_t>{1, 16, 16});

    double mean = 0.0;
    std::size_t clipped = 0;
    for (float v : img1.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        mean += v;
        if (v == 0.0f || v == 1.0f) ++clipped;
    }
    mean /= static_cast<double>(img1.numel());
    CHECK(std::abs(mean - 0.5) < 0.02);
    // sigma 0.15 puts the clamp 3.3 sigma away; clipping must stay rare
    CHECK(static_cast<double>(clipped) / static_cast<double>(img1.numel()) < 0.05);
}

TEST_CASE("distinct random codes produce well-separated noise triggers") {
    EncoderSpec spec;
    spec.variant = EncoderVariant::SeededNoise;
    spec.image_shape = {1, 16, 16};
    CounterRng rng(8, 0);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 20; ++i) imgs.push_back(encode_trigger(spec, random_code(rng)));
    for (std::size_t i = 0; i < imgs.size(); ++i)
        for (std::size_t j = i + 1; j < imgs.size(); ++j) {
            double l2 = 0.0;
            for (std::size_t k = 0; k < imgs[i].numel(); ++k) {
                double d = static_cast<double>(imgs[i].data[k]) - imgs[j].data[k];
                l2 += d * d;
            }
            CHECK(std::sqrt(l2) > 1.0);
        }
}

TEST_CASE("continuous-linear triggers move within the flipped bit's weight") {
    EncoderSpec spec;
    spec.variant = EncoderVariant::ContinuousLinear;
    spec.image_shape = {1, 8, 8};
    Code base{};
    base.bytes[3] = 0x5a;
    base.bytes[17] = 0xc3;

    SUBCASE("lowest-order bit") {
        Code flipped = base;
        flipped.bytes[31] ^= 0x01;  // bit index 255, weight 0.08 * 0.97^255
        Tensor a = encode_trigger(spec, base);
        Tensor b = encode_trigger(spec, flipped);
        double w = 0.08 * std::pow(0.97, 255.0);
        for (std::size_t i = 0; i < a.numel(); ++i)
            CHECK(std::abs(static_cast<double>(a.data[i]) - b.data[i]) <= w + 1e-9);
    }
    SUBCASE("highest-order bit") {
        Code flipped = base;
        flipped.bytes[0] ^= 0x80;  // bit index 0, weight 0.08
        Tensor a = encode_trigger(spec, base);
        Tensor b = encode_trigger(spec, flipped);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i)
            max_diff = std::max(max_diff,
                                std::abs(static_cast<double>(a.data[i]) - b.data[i]));
        CHECK(max_diff <= 0.08 + 1e-9);
        CHECK(max_diff > 0.0);
    }
}

TEST_CASE("generator-latent triggers run the network and clamp its output") {
    auto net = std::make_shared<Model>(Model::make(
        {16}, {LayerSpec::dense(16, 24), LayerSpec::relu(), LayerSpec::dense(24, 16)}, 3));
    // Inflate the last layer so raw outputs stray outside [0,1].
    for (float& w : net->weights[2].data) w *= 10.0f;
    EncoderSpec spec;
    spec.variant = EncoderVariant::GeneratorLatent;
    spec.image_shape = {1, 4, 4};
    spec.latent_dim = 16;
    spec.generator_net = net;
    CounterRng rng(9, 0);
    Code c = random_code(rng);
    Tensor img = encode_trigger(spec, c);
    CHECK(img.shape == std::vector<std::size_t>{1, 4, 4});
    for (float v : img.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(encode_trigger(spec, c).data == img.data);

    EncoderSpec missing = spec;
    missing.generator_net = nullptr;
    CHECK_THROWS_AS((void)encode_trigger(missing, c), std::invalid_argument);
    EncoderSpec mismatched = spec;
    mismatched.latent_dim = 8;
    CHECK_THROWS_AS((void)encode_trigger(mismatched, c), std::invalid_argument);
}

TEST_CASE("code-derived latents start from the code bytes and extend by hashing") {
    Code c;
    for (std::size_t i = 0; i < kCodeBytes; ++i) c.bytes[i] = static_cast<std::uint8_t>(0xAB);
    Tensor z32 = code_to_latent(c, 32);
    Tensor z40 = code_to_latent(c, 40);
    REQUIRE(z32.numel() == 32);
    REQUIRE(z40.numel() == 40);
    for (std::size_t i = 0; i < 32; ++i) CHECK(z32.data[i] == z40.data[i]);
    // Bytes 0xAB all map to the same variate.
    for (std::size_t i = 1; i < 32; ++i) CHECK(z32.data[i] == z32.data[0]);
    // The extension block differs from the code bytes, so dim 32 onward moves.
    CHECK(z40.data[32] != z40.data[31]);
    CHECK_THROWS_AS((void)code_to_latent(c, 0), std::invalid_argument);
}

TEST_CASE("code-derived latents are statistically standard normal") {
    CounterRng rng(11, 0);
    double sum = 0.0, sum2 = 0.0;
    const std::size_t codes = 200, dim = 32;
    for (std::size_t i = 0; i < codes; ++i) {
        Tensor z = code_to_latent(random_code(rng), dim);
        for (float v : z.data) {
            sum += v;
            sum2 += static_cast<double>(v) * v;
        }
    }
    double n = static_cast<double>(codes * dim);
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(var > 0.9);
    CHECK(var < 1.1);
}

TEST_CASE("label assignment is deterministic, bounded and uniform") {
    Code golden;
    for (std::size_t i = 0; i < kCodeBytes; ++i) golden.bytes[i] = static_cast<std::uint8_t>(0xAB);
    CHECK(assign_label(golden, 10) == 6);  // frozen
    CHECK(trigger_seed(golden) == 202681033520768524ULL);  // frozen
    CHECK(assign_label(golden, 1) == 0);
    CHECK_THROWS_AS((void)assign_label(golden, 0), std::invalid_argument);

    CounterRng rng(21, 0);
    std::array<std::size_t, 10> freq{};
    const std::size_t trials = 10000;
    for (std::size_t i = 0; i < trials; ++i) {
        int l = assign_label(random_code(rng), 10);
        REQUIRE(l >= 0);
        REQUIRE(l < 10);
        ++freq[static_cast<std::size_t>(l)];
    }
    double chi2 = 0.0;
    for (std::size_t f : freq) {
        CHECK(f > 900);
        CHECK(f < 1100);
        double d = static_cast<double>(f) - 1000.0;
        chi2 += d * d / 1000.0;
    }
    CHECK(chi2 < 21.666);  // chi-square, 9 dof, p = 0.01
}

TEST_CASE("trigger sets are consistent rederivable rows") {
    EncoderSpec spec;
    spec.variant = EncoderVariant::SeededNoise;
    spec.image_shape = {1, 8, 8};

    CodeSequence minimal = build_sequence(std::string_view{"m"}, 2);
    TriggerSet small = build_trigger_set(minimal, spec, 10);
    REQUIRE(small.size() == 2);
    CHECK(trigger_set_consistent(small, spec, 10));

    CodeSequence seq = build_sequence(std::string_view{"owner"}, 50);
    TriggerSet set = build_trigger_set(seq, spec, 10);
    REQUIRE(set.size() == 50);
    for (const TriggerRow& row : set.rows) {
        CHECK(row.label == assign_label(row.code, 10));
        CHECK(encode_trigger(spec, row.code).data == row.image.data);
    }
    CHECK(trigger_set_consistent(set, spec, 10));

    TriggerSet tampered = set;
    tampered.rows[7].image.data[13] += 0.25f;
    CHECK_FALSE(trigger_set_consistent(tampered, spec, 10));
    TriggerSet relabeled = set;
    relabeled.rows[3].label = (relabeled.rows[3].label + 1) % 10;
    CHECK_FALSE(trigger_set_consistent(relabeled, spec, 10));
}

TEST_CASE("label histograms over many keys stay near uniform") {
    EncoderSpec spec;
    spec.variant = EncoderVariant::SeededNoise;
    spec.image_shape = {1, 4, 4};
    std::array<std::size_t, 10> freq{};
    for (int k = 0; k < 20; ++k) {
        CodeSequence seq = build_sequence(std::string_view{std::string("key") + std::to_string(k)}, 50);
        TriggerSet set = build_trigger_set(seq, spec, 10);
        for (const TriggerRow& row : set.rows) ++freq[static_cast<std::size_t>(row.label)];
    }
    double chi2 = 0.0;
    for (std::size_t f : freq) {
        double d = static_cast<double>(f) - 100.0;
        chi2 += d * d / 100.0;
    }
    CHECK(chi2 < 27.877);  // chi-square, 9 dof, p = 0.001
}

TEST_CASE("hex serialization round-trips and rejects malformed input") {
    CounterRng rng(31, 0);
    for (int i = 0; i < 50; ++i) {
        Code c = random_code(rng);
        std::string h = to_hex(c);
        CHECK(h.size() == 64);
        CHECK(code_from_hex(h) == c);
    }
    CHECK_THROWS_AS((void)code_from_hex("abcd"), std::invalid_argument);
    std::string bad(64, 'g');
    CHECK_THROWS_AS((void)code_from_hex(bad), std::invalid_argument);
    std::string upper = to_hex(Code{});
    for (char& ch : upper) ch = static_cast<char>(std::toupper(ch));
    CHECK(code_from_hex(upper) == Code{});
}
