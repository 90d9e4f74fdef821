#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "wmark/dataset.hpp"

using namespace wmark;

TEST_CASE("the synthetic task is deterministic, balanced and in range") {
    SyntheticTaskSpec spec;
    spec.train_size = 200;
    spec.test_size = 100;
    spec.seed = 5;
    TaskData a = make_synthetic_task(spec);
    TaskData b = make_synthetic_task(spec);
    CHECK(a.train.images.data == b.train.images.data);
    CHECK(a.test.images.data == b.test.images.data);
    CHECK(a.train.labels == b.train.labels);

    CHECK(a.train.images.shape == std::vector<std::size_t>{200, 1, 16, 16});
    CHECK(a.test.images.shape == std::vector<std::size_t>{100, 1, 16, 16});
    std::array<int, 10> freq{};
    for (int l : a.train.labels) ++freq[static_cast<std::size_t>(l)];
    for (int f : freq) CHECK(f == 20);
    for (float v : a.train.images.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    SyntheticTaskSpec other = spec;
    other.seed = 6;
    TaskData c = make_synthetic_task(other);
    CHECK(c.train.images.data != a.train.images.data);
}

TEST_CASE("class glyphs are distinct noiseless prototypes") {
    SyntheticTaskSpec spec;
    for (int c = 0; c < 10; ++c) {
        Tensor g = synthetic_glyph(spec, c);
        CHECK(g.shape == std::vector<std::size_t>{1, 16, 16});
        for (int c2 = c + 1; c2 < 10; ++c2) {
            Tensor h = synthetic_glyph(spec, c2);
            double dist = 0.0;
            for (std::size_t i = 0; i < g.numel(); ++i)
                dist += std::abs(static_cast<double>(g.data[i]) - h.data[i]);
            CHECK(dist / static_cast<double>(g.numel()) > 0.05);
        }
    }
    CHECK_THROWS_AS((void)synthetic_glyph(spec, 10), std::invalid_argument);
    CHECK_THROWS_AS((void)synthetic_glyph(spec, -1), std::invalid_argument);
}

TEST_CASE("spec validation rejects degenerate tasks") {
    SyntheticTaskSpec spec;
    spec.num_classes = 1;
    CHECK_THROWS_AS((void)make_synthetic_task(spec), std::invalid_argument);
    spec = SyntheticTaskSpec{};
    spec.train_size = 0;
    CHECK_THROWS_AS((void)make_synthetic_task(spec), std::invalid_argument);
    spec = SyntheticTaskSpec{};
    spec.max_shift = 16;
    CHECK_THROWS_AS((void)make_synthetic_task(spec), std::invalid_argument);
}

TEST_CASE("the desk classifier learns the synthetic task well past ninety percent") {
    SyntheticTaskSpec spec;
    spec.train_size = 1200;
    spec.test_size = 300;
    spec.seed = 17;
    TaskData task = make_synthetic_task(spec);

    std::vector<LayerSpec> arch = {
        LayerSpec::conv2d(1, 8),  LayerSpec::relu(),    LayerSpec::maxpool2(),
        LayerSpec::conv2d(8, 16), LayerSpec::relu(),    LayerSpec::maxpool2(),
        LayerSpec::flatten(),     LayerSpec::dense(16 * 4 * 4, 64),
        LayerSpec::relu(),        LayerSpec::dense(64, 10)};
    Model m = Model::make({1, 16, 16}, arch, 17);
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.batch_size = 32;
    cfg.epochs = 10;
    cfg.seed = 17;
    TrainReport rep = train(m, task.train, cfg);
    CHECK_FALSE(rep.diverged);
    CHECK(evaluate_accuracy(m, task.test) >= 0.9);
}

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

}  // namespace

TEST_CASE("idx pairs load with scaling and strict validation") {
    const std::string img_path = "/tmp/wmark_test_images.idx";
    const std::string lab_path = "/tmp/wmark_test_labels.idx";

    std::vector<unsigned char> img;
    push_be32(img, 0x00000803u);
    push_be32(img, 2);  // samples
    push_be32(img, 2);  // rows
    push_be32(img, 3);  // cols
    for (unsigned char p : {0, 51, 102, 153, 204, 255, 255, 204, 153, 102, 51, 0})
        img.push_back(p);
    std::vector<unsigned char> lab;
    push_be32(lab, 0x00000801u);
    push_be32(lab, 2);
    lab.push_back(4);
    lab.push_back(9);
    write_bytes(img_path, img);
    write_bytes(lab_path, lab);

    Dataset d = load_idx(img_path, lab_path);
    CHECK(d.images.shape == std::vector<std::size_t>{2, 1, 2, 3});
    CHECK(d.labels == std::vector<int>{4, 9});
    CHECK(d.images.data[0] == 0.0f);
    CHECK(d.images.data[1] == doctest::Approx(51.0 / 255.0));
    CHECK(d.images.data[5] == 1.0f);

    SUBCASE("bad image magic") {
        auto bad = img;
        bad[3] = 0x01;
        write_bytes(img_path, bad);
        CHECK_THROWS_WITH_AS(load_idx(img_path, lab_path), doctest::Contains("magic"),
                             std::runtime_error);
    }
    SUBCASE("bad label magic") {
        auto bad = lab;
        bad[3] = 0x03;
        write_bytes(lab_path, bad);
        CHECK_THROWS_WITH_AS(load_idx(img_path, lab_path), doctest::Contains("magic"),
                             std::runtime_error);
    }
    SUBCASE("label count mismatch") {
        std::vector<unsigned char> bad;
        push_be32(bad, 0x00000801u);
        push_be32(bad, 3);
        bad.insert(bad.end(), {1, 2, 3});
        write_bytes(lab_path, bad);
        CHECK_THROWS_WITH_AS(load_idx(img_path, lab_path), doctest::Contains("does not match"),
                             std::runtime_error);
    }
    SUBCASE("truncated pixels") {
        auto bad = img;
        bad.resize(bad.size() - 2);
        write_bytes(img_path, bad);
        CHECK_THROWS_WITH_AS(load_idx(img_path, lab_path), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("missing file") {
        std::remove("/tmp/wmark_missing.idx");
        CHECK_THROWS_WITH_AS(load_idx("/tmp/wmark_missing.idx", lab_path),
                             doctest::Contains("cannot open"), std::runtime_error);
    }
}
