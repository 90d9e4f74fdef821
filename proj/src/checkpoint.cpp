#include "wmark/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace wmark {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagGenerator = 1u << 0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    const std::string& path;

    std::uint32_t u32() {
        if (pos + 4 > buf.size())
            throw std::runtime_error("checkpoint " + path + ": truncated");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | buf[pos + static_cast<std::size_t>(i)];
        pos += 4;
        return v;
    }

    float f32() {
        std::uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

}  // namespace

void save_model(const std::string& path, const Model& m, const CheckpointMeta& meta) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'W', 'M', 'D', 'L'});
    put_u32(out, kVersion);
    put_u32(out, meta.is_generator ? kFlagGenerator : 0);
    put_u32(out, static_cast<std::uint32_t>(m.input_shape.size()));
    for (std::size_t d : m.input_shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(m.layers.size()));
    for (const LayerSpec& l : m.layers) {
        put_u32(out, static_cast<std::uint32_t>(l.kind));
        put_u32(out, static_cast<std::uint32_t>(l.in));
        put_u32(out, static_cast<std::uint32_t>(l.out));
    }
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        for (float w : m.weights[li].data) put_f32(out, w);
        for (float b : m.biases[li].data) put_f32(out, b);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint " + path + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint " + path + ": write failed");
}

LoadedModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint " + path + ": cannot open");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    Reader r{buf, 0, path};
    if (buf.size() < 4 || std::memcmp(buf.data(), "WMDL", 4) != 0)
        throw std::runtime_error("checkpoint " + path + ": bad magic");
    r.pos = 4;
    std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint " + path + ": unsupported version " +
                                 std::to_string(version));
    std::uint32_t flags = r.u32();
    std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8)
        throw std::runtime_error("checkpoint " + path + ": implausible input rank");
    std::vector<std::size_t> input_shape;
    for (std::uint32_t i = 0; i < rank; ++i) input_shape.push_back(r.u32());
    std::uint32_t nlayers = r.u32();
    if (nlayers == 0 || nlayers > 1024)
        throw std::runtime_error("checkpoint " + path + ": implausible layer count");
    std::vector<LayerSpec> layers;
    for (std::uint32_t i = 0; i < nlayers; ++i) {
        LayerSpec l;
        std::uint32_t kind = r.u32();
        if (kind < 1 || kind > 6)
            throw std::runtime_error("checkpoint " + path + ": unknown layer kind " +
                                     std::to_string(kind));
        l.kind = static_cast<LayerKind>(kind);
        l.in = r.u32();
        l.out = r.u32();
        layers.push_back(l);
    }

    LoadedModel out;
    out.meta.is_generator = (flags & kFlagGenerator) != 0;
    try {
        out.model = Model::make(std::move(input_shape), std::move(layers), 0);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("checkpoint " + path + ": inconsistent layer table (" +
                                 e.what() + ")");
    }
    for (std::size_t li = 0; li < out.model.layers.size(); ++li) {
        for (float& w : out.model.weights[li].data) w = r.f32();
        for (float& b : out.model.biases[li].data) b = r.f32();
    }
    if (r.pos != buf.size())
        throw std::runtime_error("checkpoint " + path + ": trailing bytes after parameters");
    return out;
}

}  // namespace wmark
