#include "wmark/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "wmark/rng.hpp"

namespace wmark {

namespace {

constexpr std::size_t kSide = 16;
constexpr std::size_t kGlyphSide = 5;

// Bilinear upscale of a kGlyphSide square to a kSide square, border-clamped.
void upscale_glyph(const std::vector<float>& glyph, float* out) {
    const double scale = static_cast<double>(kGlyphSide) / static_cast<double>(kSide);
    for (std::size_t y = 0; y < kSide; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * scale - 0.5;
        double fy = std::floor(sy);
        double wy = sy - fy;
        std::ptrdiff_t y0 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fy), 0,
                                                       kGlyphSide - 1);
        std::ptrdiff_t y1 = std::clamp<std::ptrdiff_t>(y0 + 1, 0, kGlyphSide - 1);
        for (std::size_t x = 0; x < kSide; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * scale - 0.5;
            double fx = std::floor(sx);
            double wx = sx - fx;
            std::ptrdiff_t x0 = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(fx), 0,
                                                           kGlyphSide - 1);
            std::ptrdiff_t x1 = std::clamp<std::ptrdiff_t>(x0 + 1, 0, kGlyphSide - 1);
            double top = glyph[static_cast<std::size_t>(y0) * kGlyphSide +
                               static_cast<std::size_t>(x0)] *
                             (1 - wx) +
                         glyph[static_cast<std::size_t>(y0) * kGlyphSide +
                               static_cast<std::size_t>(x1)] *
                             wx;
            double bot = glyph[static_cast<std::size_t>(y1) * kGlyphSide +
                               static_cast<std::size_t>(x0)] *
                             (1 - wx) +
                         glyph[static_cast<std::size_t>(y1) * kGlyphSide +
                               static_cast<std::size_t>(x1)] *
                             wx;
            out[y * kSide + x] = static_cast<float>(top * (1 - wy) + bot * wy);
        }
    }
}

std::vector<std::vector<float>> base_images(const SyntheticTaskSpec& spec) {
    std::vector<std::vector<float>> bases;
    for (int c = 0; c < spec.num_classes; ++c) {
        CounterRng rng(spec.seed, 1000 + static_cast<std::uint64_t>(c));
        std::vector<float> glyph(kGlyphSide * kGlyphSide);
        for (float& v : glyph) v = rng.uniform() < 0.5 ? 0.1f : 0.9f;
        std::vector<float> base(kSide * kSide);
        upscale_glyph(glyph, base.data());
        bases.push_back(std::move(base));
    }
    return bases;
}

Dataset make_split(const SyntheticTaskSpec& spec,
                   const std::vector<std::vector<float>>& bases, std::size_t count,
                   std::uint64_t stream) {
    Dataset d;
    d.images = Tensor({count, 1, kSide, kSide});
    d.labels.reserve(count);
    CounterRng rng(spec.seed, stream);
    const int span = 2 * spec.max_shift + 1;
    for (std::size_t i = 0; i < count; ++i) {
        int cls = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
        const std::vector<float>& base = bases[static_cast<std::size_t>(cls)];
        int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) - spec.max_shift;
        int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(span))) - spec.max_shift;
        float* out = &d.images.data[i * kSide * kSide];
        for (std::size_t y = 0; y < kSide; ++y)
            for (std::size_t x = 0; x < kSide; ++x) {
                std::size_t sy = static_cast<std::size_t>(
                    (static_cast<int>(y) - dy + static_cast<int>(kSide)) % static_cast<int>(kSide));
                std::size_t sx = static_cast<std::size_t>(
                    (static_cast<int>(x) - dx + static_cast<int>(kSide)) % static_cast<int>(kSide));
                double v = base[sy * kSide + sx] + spec.noise_sigma * rng.gaussian();
                out[y * kSide + x] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
        d.labels.push_back(cls);
    }
    return d;
}

}  // namespace

Tensor synthetic_glyph(const SyntheticTaskSpec& spec, int cls) {
    if (cls < 0 || cls >= spec.num_classes)
        throw std::invalid_argument("synthetic_glyph: class out of range");
    auto bases = base_images(spec);
    Tensor img({1, kSide, kSide});
    std::copy(bases[static_cast<std::size_t>(cls)].begin(),
              bases[static_cast<std::size_t>(cls)].end(), img.data.begin());
    return img;
}

TaskData make_synthetic_task(const SyntheticTaskSpec& spec) {
    if (spec.num_classes < 2) throw std::invalid_argument("synthetic task: need at least 2 classes");
    if (spec.train_size == 0 || spec.test_size == 0)
        throw std::invalid_argument("synthetic task: split sizes must be positive");
    if (spec.max_shift < 0 || spec.max_shift >= static_cast<int>(kSide))
        throw std::invalid_argument("synthetic task: shift out of range");
    auto bases = base_images(spec);
    TaskData t;
    t.train = make_split(spec, bases, spec.train_size, 1);
    t.test = make_split(spec, bases, spec.test_size, 2);
    return t;
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
    std::uint8_t b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx " + path + ": truncated header");
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw std::runtime_error("idx " + images_path + ": cannot open");
    if (read_be32(fi, images_path) != 0x00000803u)
        throw std::runtime_error("idx " + images_path + ": bad image magic");
    std::uint32_t n = read_be32(fi, images_path);
    std::uint32_t rows = read_be32(fi, images_path);
    std::uint32_t cols = read_be32(fi, images_path);
    if (n == 0 || rows == 0 || cols == 0)
        throw std::runtime_error("idx " + images_path + ": empty dimensions");
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * rows * cols);
    if (!fi.read(reinterpret_cast<char*>(pixels.data()),
                 static_cast<std::streamsize>(pixels.size())))
        throw std::runtime_error("idx " + images_path + ": truncated pixel data");

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw std::runtime_error("idx " + labels_path + ": cannot open");
    if (read_be32(fl, labels_path) != 0x00000801u)
        throw std::runtime_error("idx " + labels_path + ": bad label magic");
    std::uint32_t nl = read_be32(fl, labels_path);
    if (nl != n)
        throw std::runtime_error("idx " + labels_path + ": label count " + std::to_string(nl) +
                                 " does not match image count " + std::to_string(n));
    std::vector<std::uint8_t> labels(nl);
    if (!fl.read(reinterpret_cast<char*>(labels.data()),
                 static_cast<std::streamsize>(labels.size())))
        throw std::runtime_error("idx " + labels_path + ": truncated label data");

    Dataset d;
    d.images = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < pixels.size(); ++i)
        d.images.data[i] = static_cast<float>(pixels[i]) / 255.0f;
    d.labels.assign(labels.begin(), labels.end());
    return d;
}

}  // namespace wmark
