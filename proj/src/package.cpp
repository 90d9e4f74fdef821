#include "wmark/package.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "wmark/checkpoint.hpp"
#include "wmark/codec.hpp"

namespace wmark {

namespace {

// Insertion-ordered JSON keeps every document's field order canonical, so
// identical inputs serialize to identical bytes.
using Json = nlohmann::ordered_json;

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

Json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("package: cannot open " + path);
    }
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw std::runtime_error("package: " + path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text << '\n';
    if (!out) {
        throw std::runtime_error("package: cannot write " + path);
    }
}

std::string image_to_b64(const Tensor& t) {
    std::vector<std::uint8_t> raw(t.data.size() * 4);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint32_t v;
        std::memcpy(&v, &t.data[i], 4);
        for (int b = 0; b < 4; ++b) {
            raw[4 * i + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(v >> (8 * b));
        }
    }
    return base64_encode(raw);
}

Tensor image_from_b64(const std::string& text, const std::vector<std::size_t>& shape,
                      const std::string& path) {
    std::vector<std::uint8_t> raw;
    try {
        raw = base64_decode(text);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("package: " + path + ": " + e.what());
    }
    Tensor t(shape);
    if (raw.size() != t.data.size() * 4) {
        throw std::runtime_error("package: " + path + ": image payload is " +
                                 std::to_string(raw.size()) + " bytes, shape " +
                                 Tensor::shape_str(shape) + " needs " +
                                 std::to_string(t.data.size() * 4));
    }
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::uint32_t v = 0;
        for (int b = 3; b >= 0; --b) {
            v = (v << 8) | raw[4 * i + static_cast<std::size_t>(b)];
        }
        std::memcpy(&t.data[i], &v, 4);
    }
    return t;
}

Json row_to_json(const Code& code, const Tensor& image, int label) {
    Json row;
    row["code_hex"] = to_hex(code);
    row["label"] = label;
    row["image_b64"] = image_to_b64(image);
    return row;
}

}  // namespace

void save_package(const std::string& dir, const WatermarkPackage& pkg) {
    pkg.encoder.validate();
    std::filesystem::create_directories(dir);

    save_model(dir + "/model.wmdl", pkg.model_wm);
    if (pkg.encoder.variant == EncoderVariant::GeneratorLatent) {
        save_model(dir + "/generator.wmdl", *pkg.encoder.generator_net, {.is_generator = true});
    }

    Json trig;
    trig["rows"] = Json::array();
    for (const TriggerRow& row : pkg.trigger_set.rows) {
        trig["rows"].push_back(row_to_json(row.code, row.image, row.label));
    }
    write_text(dir + "/triggers.json", trig.dump(2));

    Json meta;
    meta["format_version"] = 1;
    meta["n_codes"] = pkg.n_codes;
    meta["num_classes"] = pkg.num_classes;
    meta["scheme"] = scheme_name(pkg.scheme);
    meta["backdoor"] = backdoor_name(pkg.backdoor);
    meta["lambda2"] = pkg.lambda2;
    meta["epsilon"] = pkg.epsilon;
    meta["trigger_accuracy"] = pkg.trigger_accuracy;
    meta["below_target"] = pkg.below_target;
    meta["seed"] = pkg.seed;
    Json enc;
    enc["variant"] = encoder_name(pkg.encoder.variant);
    enc["image_shape"] = pkg.encoder.image_shape;
    enc["latent_dim"] = pkg.encoder.latent_dim;
    enc["basis_seed"] = pkg.encoder.basis_seed;
    meta["encoder"] = enc;
    write_text(dir + "/meta.json", meta.dump(2));
}

WatermarkPackage load_package(const std::string& dir) {
    const std::string meta_path = dir + "/meta.json";
    const Json meta = read_json(meta_path);

    WatermarkPackage pkg;
    try {
        if (meta.at("format_version").get<int>() != 1) {
            throw std::runtime_error("package: " + meta_path + ": unsupported format version");
        }
        pkg.n_codes = meta.at("n_codes").get<std::size_t>();
        pkg.num_classes = meta.at("num_classes").get<int>();
        pkg.scheme = scheme_from_name(meta.at("scheme").get<std::string>());
        pkg.backdoor = backdoor_from_name(meta.at("backdoor").get<std::string>());
        pkg.lambda2 = meta.at("lambda2").get<double>();
        pkg.epsilon = meta.at("epsilon").get<double>();
        pkg.trigger_accuracy = meta.at("trigger_accuracy").get<double>();
        pkg.below_target = meta.at("below_target").get<bool>();
        pkg.seed = meta.at("seed").get<std::uint64_t>();
        const Json& enc = meta.at("encoder");
        pkg.encoder.variant = encoder_from_name(enc.at("variant").get<std::string>());
        pkg.encoder.image_shape = enc.at("image_shape").get<std::vector<std::size_t>>();
        pkg.encoder.latent_dim = enc.at("latent_dim").get<std::size_t>();
        pkg.encoder.basis_seed = enc.at("basis_seed").get<std::uint64_t>();
    } catch (const Json::exception& e) {
        throw std::runtime_error("package: " + meta_path + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("package: " + meta_path + ": " + e.what());
    }

    LoadedModel lm = load_model(dir + "/model.wmdl");
    if (lm.meta.is_generator) {
        throw std::runtime_error("package: " + dir + "/model.wmdl is a generator checkpoint");
    }
    pkg.model_wm = std::move(lm.model);

    if (pkg.encoder.variant == EncoderVariant::GeneratorLatent) {
        LoadedModel gen = load_model(dir + "/generator.wmdl");
        if (!gen.meta.is_generator) {
            throw std::runtime_error("package: " + dir +
                                     "/generator.wmdl is not a generator checkpoint");
        }
        pkg.encoder.generator_net = std::make_shared<const Model>(std::move(gen.model));
    }

    const std::string trig_path = dir + "/triggers.json";
    const Json trig = read_json(trig_path);
    try {
        for (const Json& row : trig.at("rows")) {
            TriggerRow tr;
            tr.code = code_from_hex(row.at("code_hex").get<std::string>());
            tr.label = row.at("label").get<int>();
            tr.image = image_from_b64(row.at("image_b64").get<std::string>(),
                                      pkg.encoder.image_shape, trig_path);
            pkg.trigger_set.rows.push_back(std::move(tr));
        }
    } catch (const Json::exception& e) {
        throw std::runtime_error("package: " + trig_path + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("package: " + trig_path + ": " + e.what());
    }
    if (pkg.trigger_set.size() != pkg.n_codes) {
        throw std::runtime_error("package: " + trig_path + " holds " +
                                 std::to_string(pkg.trigger_set.size()) + " rows, meta says " +
                                 std::to_string(pkg.n_codes));
    }

    pkg.encoder.validate();
    return pkg;
}

void save_evidence(const std::string& path, const Evidence& ev) {
    Json doc;
    doc["K"] = ev.rows.size();
    doc["K_prime"] = ev.k_prime;
    doc["rows"] = Json::array();
    for (const EvidenceRow& row : ev.rows) {
        doc["rows"].push_back(row_to_json(row.code, row.image, row.label));
    }
    write_text(path, doc.dump(2));
}

Evidence load_evidence(const std::string& path, const std::vector<std::size_t>& image_shape) {
    const Json doc = read_json(path);
    Evidence ev;
    try {
        const std::size_t k = doc.at("K").get<std::size_t>();
        ev.k_prime = doc.at("K_prime").get<std::size_t>();
        for (const Json& row : doc.at("rows")) {
            EvidenceRow er;
            er.code = code_from_hex(row.at("code_hex").get<std::string>());
            er.label = row.at("label").get<int>();
            er.image = image_from_b64(row.at("image_b64").get<std::string>(), image_shape, path);
            ev.rows.push_back(std::move(er));
        }
        if (ev.rows.size() != k) {
            throw std::runtime_error("package: " + path + " holds " +
                                     std::to_string(ev.rows.size()) + " rows, K says " +
                                     std::to_string(k));
        }
    } catch (const Json::exception& e) {
        throw std::runtime_error("package: " + path + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("package: " + path + ": " + e.what());
    }
    return ev;
}

std::string scheme_name(InjectionScheme s) {
    switch (s) {
        case InjectionScheme::Solely: return "solely";
        case InjectionScheme::WithTrainingData: return "with_training_data";
        case InjectionScheme::WithAnchors: return "with_anchors";
    }
    throw std::invalid_argument("scheme_name: unknown scheme");
}

InjectionScheme scheme_from_name(std::string_view name) {
    if (name == "solely") return InjectionScheme::Solely;
    if (name == "with_training_data") return InjectionScheme::WithTrainingData;
    if (name == "with_anchors") return InjectionScheme::WithAnchors;
    throw std::invalid_argument("unknown scheme name: " + std::string(name));
}

std::string backdoor_name(BackdoorKind b) {
    switch (b) {
        case BackdoorKind::Trigger: return "trigger";
        case BackdoorKind::PostTrigger: return "post_trigger";
    }
    throw std::invalid_argument("backdoor_name: unknown kind");
}

BackdoorKind backdoor_from_name(std::string_view name) {
    if (name == "trigger") return BackdoorKind::Trigger;
    if (name == "post_trigger") return BackdoorKind::PostTrigger;
    throw std::invalid_argument("unknown backdoor name: " + std::string(name));
}

std::string encoder_name(EncoderVariant v) {
    switch (v) {
        case EncoderVariant::SeededNoise: return "seeded_noise";
        case EncoderVariant::GeneratorLatent: return "generator_latent";
        case EncoderVariant::ContinuousLinear: return "continuous_linear";
    }
    throw std::invalid_argument("encoder_name: unknown variant");
}

EncoderVariant encoder_from_name(std::string_view name) {
    if (name == "seeded_noise") return EncoderVariant::SeededNoise;
    if (name == "generator_latent") return EncoderVariant::GeneratorLatent;
    if (name == "continuous_linear") return EncoderVariant::ContinuousLinear;
    throw std::invalid_argument("unknown encoder name: " + std::string(name));
}

std::string base64_encode(std::span<const std::uint8_t> data) {
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                                (static_cast<std::uint32_t>(data[i + 1]) << 8) |
                                static_cast<std::uint32_t>(data[i + 2]);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(kB64Alphabet[(v >> 6) & 63]);
        out.push_back(kB64Alphabet[v & 63]);
    }
    const std::size_t rest = data.size() - i;
    if (rest == 1) {
        const std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.append("==");
    } else if (rest == 2) {
        const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                                (static_cast<std::uint32_t>(data[i + 1]) << 8);
        out.push_back(kB64Alphabet[(v >> 18) & 63]);
        out.push_back(kB64Alphabet[(v >> 12) & 63]);
        out.push_back(kB64Alphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw std::invalid_argument("base64: length must be a multiple of 4");
    }
    std::array<std::int8_t, 256> lut;
    lut.fill(-1);
    for (int i = 0; i < 64; ++i) {
        lut[static_cast<std::uint8_t>(kB64Alphabet[i])] = static_cast<std::int8_t>(i);
    }

    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        int pad = 0;
        std::uint32_t v = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            const char c = text[i + j];
            if (c == '=') {
                // Padding may only close the final quantum, in the last one
                // or two positions.
                if (!last || j < 2 || (j == 2 && text[i + 3] != '=')) {
                    throw std::invalid_argument("base64: misplaced padding");
                }
                ++pad;
                v <<= 6;
                continue;
            }
            const std::int8_t s = lut[static_cast<std::uint8_t>(c)];
            if (s < 0) {
                throw std::invalid_argument("base64: invalid character");
            }
            v = (v << 6) | static_cast<std::uint32_t>(s);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

}  // namespace wmark
