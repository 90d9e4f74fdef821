#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "wmark/dataset.hpp"
#include "wmark/dfd.hpp"
#include "wmark/rng.hpp"

using namespace wmark;

namespace {

// Compact classifier so the five-seed loop stays fast.
Model small_teacher(const TaskData& task, uint64_t seed) {
    Model m = Model::make({1, 16, 16},
                          {LayerSpec::conv2d(1, 4), LayerSpec::relu(), LayerSpec::maxpool2(),
                           LayerSpec::flatten(), LayerSpec::dense(4 * 8 * 8, 10)},
                          seed);
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.batch_size = 32;
    cfg.epochs = 8;
    cfg.seed = seed;
    train(m, task.train, cfg);
    return m;
}

TaskData small_task() {
    SyntheticTaskSpec spec;
    spec.train_size = 600;
    spec.test_size = 200;
    spec.seed = 3;
    return make_synthetic_task(spec);
}

}  // namespace

TEST_CASE("generators emit correctly shaped clamped images") {
    Generator g = make_generator(16, {1, 8, 8}, 4);
    CounterRng rng(4, 0);
    Tensor z({5, 16});
    for (float& v : z.data) v = static_cast<float>(rng.gaussian());
    Tensor imgs = g.generate(z);
    CHECK(imgs.shape == std::vector<std::size_t>{5, 1, 8, 8});
    for (float v : imgs.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(g.generate(z).data == imgs.data);
    CHECK_THROWS_AS((void)make_generator(0, {1, 8, 8}, 1), std::invalid_argument);
}

TEST_CASE("a student that starts as the teacher copy never moves") {
    TaskData task = small_task();
    Model teacher = small_teacher(task, 1);
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.batch_size = 16;
    cfg.seed = 2;
    Generator fresh = make_generator(16, teacher.input_shape, cfg.seed);
    DistillResult r = distill(teacher, 16, 30, cfg, &teacher);
    CHECK_FALSE(r.diverged);
    for (double d : r.discrepancy) CHECK(d == 0.0);
    for (std::size_t li = 0; li < teacher.layers.size(); ++li) {
        CHECK(r.student.weights[li].data == teacher.weights[li].data);
        CHECK(r.student.biases[li].data == teacher.biases[li].data);
    }
    // Zero discrepancy also means zero generator gradient.
    for (std::size_t li = 0; li < fresh.net.layers.size(); ++li)
        CHECK(r.generator.net.weights[li].data == fresh.net.weights[li].data);
}

TEST_CASE("distillation is deterministic per seed") {
    TaskData task = small_task();
    Model teacher = small_teacher(task, 2);
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.batch_size = 16;
    cfg.seed = 9;
    DistillResult a = distill(teacher, 16, 60, cfg);
    DistillResult b = distill(teacher, 16, 60, cfg);
    CHECK(a.discrepancy == b.discrepancy);
    for (std::size_t li = 0; li < a.student.layers.size(); ++li)
        CHECK(a.student.weights[li].data == b.student.weights[li].data);
    for (std::size_t li = 0; li < a.generator.net.layers.size(); ++li)
        CHECK(a.generator.net.weights[li].data == b.generator.net.weights[li].data);
}

TEST_CASE("distillation rejects zero steps and mismatched student seeds") {
    TaskData task = small_task();
    Model teacher = small_teacher(task, 3);
    TrainConfig cfg;
    CHECK_THROWS_AS((void)distill(teacher, 16, 0, cfg), std::invalid_argument);
    Model other = Model::make({4}, {LayerSpec::dense(4, 10)}, 1);
    CHECK_THROWS_AS((void)distill(teacher, 16, 5, cfg, &other), std::invalid_argument);
}

TEST_CASE("the at-chance warning trips on untrained teachers given reference data") {
    TaskData task = small_task();
    Model untrained = Model::make({1, 16, 16},
                                  {LayerSpec::conv2d(1, 4), LayerSpec::relu(),
                                   LayerSpec::maxpool2(), LayerSpec::flatten(),
                                   LayerSpec::dense(4 * 8 * 8, 10)},
                                  99);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.batch_size = 16;
    cfg.seed = 1;
    DistillResult r = distill(untrained, 16, 1, cfg, nullptr, &task.test);
    CHECK(r.teacher_at_chance);

    Model teacher = small_teacher(task, 4);
    DistillResult r2 = distill(teacher, 16, 1, cfg, nullptr, &task.test);
    CHECK_FALSE(r2.teacher_at_chance);

    // Data-free fallback flags a teacher with exactly uniform outputs.
    Model flat = untrained;
    for (Tensor& w : flat.weights) std::fill(w.data.begin(), w.data.end(), 0.0f);
    for (Tensor& b : flat.biases) std::fill(b.data.begin(), b.data.end(), 0.0f);
    DistillResult r3 = distill(flat, 16, 1, cfg);
    CHECK(r3.teacher_at_chance);
    DistillResult r4 = distill(teacher, 16, 1, cfg);
    CHECK_FALSE(r4.teacher_at_chance);
}

TEST_CASE("anchors reproduce the teacher exactly and deterministically") {
    TaskData task = small_task();
    Model teacher = small_teacher(task, 5);
    Generator g = make_generator(16, teacher.input_shape, 8);
    AnchorSet a = sample_anchors(g, teacher, 100, 77);
    AnchorSet b = sample_anchors(g, teacher, 100, 77);
    REQUIRE(a.size() == 100);
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels == b.labels);
    CHECK(a.logits.data == b.logits.data);
    for (float v : a.images.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    // Stored logits equal a fresh forward pass bit for bit, labels its argmax.
    Tensor again = forward(teacher, a.images);
    CHECK(again.data == a.logits.data);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.labels[i] == argmax_row(&a.logits.data[i * 10], 10));

    AnchorSet c = sample_anchors(g, teacher, 100, 78);
    CHECK(c.images.data != a.images.data);
    CHECK_THROWS_AS((void)sample_anchors(g, teacher, 0, 1), std::invalid_argument);
}

TEST_CASE("distillation closes the student-teacher gap across seeds") {
    TaskData task = small_task();
    int improved = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Model teacher = small_teacher(task, seed);
        TrainConfig cfg;
        cfg.lr = 0.1;
        cfg.batch_size = 32;
        cfg.seed = seed * 11;
        Model fresh_student = Model::make(teacher.input_shape, teacher.layers,
                                          cfg.seed + 0x5EEDULL);
        Generator fresh_gen = make_generator(32, teacher.input_shape, cfg.seed);
        double before = anchor_discrepancy(fresh_gen, teacher, fresh_student, 200, 500 + seed);
        DistillResult r = distill(teacher, 32, 600, cfg);
        REQUIRE_FALSE(r.diverged);
        double after = anchor_discrepancy(r.generator, teacher, r.student, 200, 500 + seed);
        if (after < before) ++improved;
    }
    CHECK(improved >= 4);
}

TEST_CASE("a long desk-scale run reaches strong anchor agreement") {
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
    Model teacher = Model::make({1, 16, 16}, arch, 17);
    TrainConfig tc;
    tc.lr = 0.1;
    tc.batch_size = 32;
    tc.epochs = 10;
    tc.seed = 17;
    train(teacher, task.train, tc);
    REQUIRE(evaluate_accuracy(teacher, task.test) > 0.95);

    TrainConfig dc;
    dc.lr = 0.1;
    dc.batch_size = 64;
    dc.seed = 5;
    DistillResult r = distill(teacher, 64, 2000, dc);
    REQUIRE_FALSE(r.diverged);
    double agree = anchor_agreement(r.generator, teacher, r.student, 1000, 999);
    CHECK(agree >= 0.70);

    Model untrained = Model::make(teacher.input_shape, teacher.layers, 12345);
    double baseline = anchor_agreement(r.generator, teacher, untrained, 1000, 999);
    CHECK(agree > baseline);
}
