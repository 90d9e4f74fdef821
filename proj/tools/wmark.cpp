// Command-line workbench tying the library together: train a clean model,
// distill a generator, embed a watermark package, emit and check evidence,
// run attacks, and tabulate capacity. Every command writes a summary.json
// whose config_hash field is the SHA-256 of its resolved parameters, so any
// output traces back to the exact invocation that produced it.
//
// Exit codes: 0 success (verify: Pass), 1 failed check (verify: Fail;
// train-clean: accuracy floor unmet), 2 usage or file errors, 3 embed ended
// below the trigger-accuracy target.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <openssl/sha.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "wmark/attacks.hpp"
#include "wmark/capacity.hpp"
#include "wmark/checkpoint.hpp"
#include "wmark/codec.hpp"
#include "wmark/dataset.hpp"
#include "wmark/dfd.hpp"
#include "wmark/injector.hpp"
#include "wmark/nn.hpp"
#include "wmark/package.hpp"
#include "wmark/verifier.hpp"

using Json = nlohmann::ordered_json;
using namespace wmark;

namespace {

std::string config_hash(const Json& cfg) {
    const std::string text = cfg.dump();
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (int i = 0; i < 8; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

void write_summary(const std::string& dir, const Json& cfg, Json results) {
    std::filesystem::create_directories(dir);
    Json doc;
    doc["config_hash"] = config_hash(cfg);
    doc["config"] = cfg;
    doc["results"] = std::move(results);
    std::ofstream out(dir + "/summary.json", std::ios::trunc);
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + dir + "/summary.json");
}

// Builtin synthetic task or an IDX quartet; shared by every command that
// touches data.
struct TaskFlags {
    int classes = 10;
    std::size_t train_size = 1500;
    std::size_t test_size = 500;
    double sigma = 0.10;
    int shift = 2;
    std::uint64_t task_seed = 1;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;

    void attach(CLI::App* cmd) {
        cmd->add_option("--classes", classes, "Class count of the builtin task");
        cmd->add_option("--train-size", train_size, "Builtin task training samples");
        cmd->add_option("--test-size", test_size, "Builtin task test samples");
        cmd->add_option("--sigma", sigma, "Builtin task pixel noise");
        cmd->add_option("--shift", shift, "Builtin task max pixel shift");
        cmd->add_option("--task-seed", task_seed, "Builtin task generation seed");
        auto* a = cmd->add_option("--idx-train-images", idx_train_images, "IDX training images");
        auto* b = cmd->add_option("--idx-train-labels", idx_train_labels, "IDX training labels");
        auto* c = cmd->add_option("--idx-test-images", idx_test_images, "IDX test images");
        auto* d = cmd->add_option("--idx-test-labels", idx_test_labels, "IDX test labels");
        a->needs(b)->needs(c)->needs(d);
        b->needs(a);
        c->needs(a);
        d->needs(a);
    }

    bool uses_idx() const { return !idx_train_images.empty(); }

    TaskData resolve() const {
        if (uses_idx()) {
            TaskData data;
            data.train = load_idx(idx_train_images, idx_train_labels);
            data.test = load_idx(idx_test_images, idx_test_labels);
            return data;
        }
        SyntheticTaskSpec spec;
        spec.num_classes = classes;
        spec.train_size = train_size;
        spec.test_size = test_size;
        spec.noise_sigma = sigma;
        spec.max_shift = shift;
        spec.seed = task_seed;
        return make_synthetic_task(spec);
    }

    Json to_json() const {
        Json j;
        if (uses_idx()) {
            j["idx_train_images"] = idx_train_images;
            j["idx_train_labels"] = idx_train_labels;
            j["idx_test_images"] = idx_test_images;
            j["idx_test_labels"] = idx_test_labels;
        } else {
            j["classes"] = classes;
            j["train_size"] = train_size;
            j["test_size"] = test_size;
            j["sigma"] = sigma;
            j["shift"] = shift;
            j["task_seed"] = task_seed;
        }
        return j;
    }
};

Model build_arch(const std::string& name, const std::vector<std::size_t>& input_shape,
                 int classes, std::uint64_t seed) {
    const std::size_t out = static_cast<std::size_t>(classes);
    if (name == "desk") {
        if (input_shape.size() != 3 || input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0) {
            throw std::runtime_error("arch desk needs CxHxW input with H, W divisible by 4");
        }
        const std::size_t flat = 16 * (input_shape[1] / 4) * (input_shape[2] / 4);
        std::vector<LayerSpec> arch = {
            LayerSpec::conv2d(input_shape[0], 8), LayerSpec::relu(), LayerSpec::maxpool2(),
            LayerSpec::conv2d(8, 16), LayerSpec::relu(), LayerSpec::maxpool2(),
            LayerSpec::flatten(), LayerSpec::dense(flat, 64), LayerSpec::relu(),
            LayerSpec::dense(64, out)};
        return Model::make(input_shape, arch, seed);
    }
    if (name == "dense") {
        std::vector<LayerSpec> arch = {LayerSpec::flatten(),
                                       LayerSpec::dense(Tensor::numel_of(input_shape), 64),
                                       LayerSpec::relu(), LayerSpec::dense(64, out)};
        return Model::make(input_shape, arch, seed);
    }
    throw std::runtime_error("unknown architecture preset: " + name);
}

std::vector<std::size_t> sample_shape(const Dataset& d) {
    return std::vector<std::size_t>(d.images.shape.begin() + 1, d.images.shape.end());
}

Generator generator_from_file(const std::string& path,
                              const std::vector<std::size_t>& image_shape) {
    LoadedModel lm = load_model(path);
    if (!lm.meta.is_generator) {
        throw std::runtime_error(path + " is not a generator checkpoint");
    }
    if (lm.model.out_dim != Tensor::numel_of(image_shape)) {
        throw std::runtime_error(path + " output size does not match image shape " +
                                 Tensor::shape_str(image_shape));
    }
    Generator gen;
    gen.latent_dim = lm.model.input_shape.at(0);
    gen.image_shape = image_shape;
    gen.net = std::move(lm.model);
    return gen;
}

void write_csv(const std::string& path, const std::string& hash, const std::string& header,
               const std::vector<std::string>& rows) {
    std::ofstream out(path, std::ios::trunc);
    out << "# config " << hash << '\n' << header << '\n';
    for (const std::string& row : rows) out << row << '\n';
    if (!out) throw std::runtime_error("cannot write " + path);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Json verification_json(const VerificationResult& res) {
    Json j;
    j["pass"] = res.pass;
    j["chain_intact"] = res.chain_intact;
    j["acc"] = res.acc;
    j["mu_hat"] = res.mu_hat;
    j["sigma_hat"] = res.sigma_hat;
    j["statistic"] = res.statistic;
    std::size_t image = 0, label = 0, model = 0, chain = 0;
    for (const RowCheck& row : res.per_row) {
        image += row.image_match ? 1 : 0;
        label += row.label_match ? 1 : 0;
        model += row.model_match ? 1 : 0;
        chain += row.chain_ok ? 1 : 0;
    }
    j["rows"] = res.per_row.size();
    j["image_match"] = image;
    j["label_match"] = label;
    j["model_match"] = model;
    j["chain_ok"] = chain;
    return j;
}

void print_verification(const VerificationResult& res) {
    const Json j = verification_json(res);
    std::printf("decision    %s\n", res.pass ? "Pass" : "Fail");
    std::printf("mu_hat      %.6f\n", res.mu_hat);
    std::printf("sigma_hat   %.6f\n", res.sigma_hat);
    std::printf("statistic   %.6g\n", res.statistic);
    std::printf("rows        %zu (image %zu, label %zu, model %zu, chain %zu, all-four %zu)\n",
                res.per_row.size(), j["image_match"].get<std::size_t>(),
                j["label_match"].get<std::size_t>(), j["model_match"].get<std::size_t>(),
                j["chain_ok"].get<std::size_t>(), res.acc);
}

// ---------------------------------------------------------------- train-clean

struct TrainCleanArgs {
    TaskFlags task;
    std::string out_dir = "out-train";
    std::string arch = "desk";
    double lr = 0.1;
    std::size_t batch = 32;
    std::size_t epochs = 10;
    std::uint64_t seed = 7;
    double floor = 0.9;
};

int run_train_clean(const TrainCleanArgs& a) {
    TaskData task = a.task.resolve();
    Model model = build_arch(a.arch, sample_shape(task.train), a.task.classes, a.seed);

    TrainConfig tc;
    tc.lr = a.lr;
    tc.batch_size = a.batch;
    tc.epochs = a.epochs;
    tc.seed = a.seed;
    train(model, task.train, tc);

    const double train_acc = evaluate_accuracy(model, task.train);
    const double test_acc = evaluate_accuracy(model, task.test);

    Json cfg = a.task.to_json();
    cfg["command"] = "train-clean";
    cfg["arch"] = a.arch;
    cfg["lr"] = a.lr;
    cfg["batch"] = a.batch;
    cfg["epochs"] = a.epochs;
    cfg["seed"] = a.seed;
    cfg["floor"] = a.floor;

    std::filesystem::create_directories(a.out_dir);
    save_model(a.out_dir + "/model.wmdl", model);

    Json results;
    results["train_accuracy"] = train_acc;
    results["test_accuracy"] = test_acc;
    results["floor_met"] = test_acc >= a.floor;
    write_summary(a.out_dir, cfg, results);

    std::printf("train %.4f test %.4f (floor %.2f)\n", train_acc, test_acc, a.floor);
    if (test_acc < a.floor) {
        std::fprintf(stderr, "error: test accuracy %.4f below floor %.2f\n", test_acc, a.floor);
        return 1;
    }
    return 0;
}

// -------------------------------------------------------------------- distill

struct DistillArgs {
    std::string model_path;
    std::string out_dir = "out-distill";
    std::size_t latent = 32;
    std::size_t steps = 2000;
    double lr = 0.1;
    std::size_t batch = 32;
    std::uint64_t seed = 7;
    double agreement_floor = 0.0;
};

int run_distill(const DistillArgs& a) {
    LoadedModel lm = load_model(a.model_path);
    if (lm.meta.is_generator) {
        throw std::runtime_error(a.model_path + " is a generator, expected a classifier");
    }

    TrainConfig dc;
    dc.lr = a.lr;
    dc.batch_size = a.batch;
    dc.seed = a.seed;
    DistillResult dr = distill(lm.model, a.latent, a.steps, dc);

    const double agreement = anchor_agreement(dr.generator, lm.model, dr.student, 256, a.seed);

    Json cfg;
    cfg["command"] = "distill";
    cfg["model"] = a.model_path;
    cfg["latent"] = a.latent;
    cfg["steps"] = a.steps;
    cfg["lr"] = a.lr;
    cfg["batch"] = a.batch;
    cfg["seed"] = a.seed;

    std::filesystem::create_directories(a.out_dir);
    save_model(a.out_dir + "/generator.wmdl", dr.generator.net, {.is_generator = true});

    Json results;
    results["student_agreement"] = agreement;
    results["final_discrepancy"] = dr.discrepancy.empty() ? 0.0 : dr.discrepancy.back();
    results["teacher_at_chance"] = dr.teacher_at_chance;
    results["diverged"] = dr.diverged;
    write_summary(a.out_dir, cfg, results);

    std::printf("student agreement %.4f over %zu steps\n", agreement, a.steps);
    if (dr.diverged) {
        std::fprintf(stderr, "error: distillation diverged\n");
        return 1;
    }
    if (agreement < a.agreement_floor) {
        std::fprintf(stderr, "error: agreement %.4f below floor %.2f\n", agreement,
                     a.agreement_floor);
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------- embed

struct EmbedArgs {
    TaskFlags task;
    std::string model_path;
    std::string generator_path;
    std::string out_dir = "out-package";
    std::string key;
    std::size_t n = 50;
    std::string scheme = "with_anchors";
    std::string backdoor = "trigger";
    std::string encoder = "seeded_noise";
    std::size_t latent_dim = 32;
    std::uint64_t basis_seed = 1;
    double lambda2 = 5.0;
    std::size_t anchors = 500;
    double target = 0.9;
    std::size_t max_epochs = 200;
    std::size_t min_epochs = 0;
    double lr = 0.05;
    std::size_t batch = 8;
    std::uint64_t seed = 7;
    PostTriggerConfig post;
};

int run_embed(const EmbedArgs& a) {
    LoadedModel lm = load_model(a.model_path);
    if (lm.meta.is_generator) {
        throw std::runtime_error(a.model_path + " is a generator, expected a classifier");
    }
    const Model& clean = lm.model;

    InjectionConfig cfg;
    cfg.scheme = scheme_from_name(a.scheme);
    cfg.backdoor = backdoor_from_name(a.backdoor);
    cfg.lambda2 = a.lambda2;
    cfg.anchor_count = a.anchors;
    cfg.trigger_acc_target = a.target;
    cfg.max_epochs = a.max_epochs;
    cfg.min_epochs = a.min_epochs;
    cfg.lr = a.lr;
    cfg.batch_size = a.batch;
    cfg.post_trigger = a.post;

    EncoderSpec enc;
    enc.variant = encoder_from_name(a.encoder);
    enc.image_shape = clean.input_shape;
    enc.latent_dim = a.latent_dim;
    enc.basis_seed = a.basis_seed;

    const bool needs_gen = cfg.scheme == InjectionScheme::WithAnchors ||
                           cfg.backdoor == BackdoorKind::PostTrigger ||
                           enc.variant == EncoderVariant::GeneratorLatent;
    Generator gen;
    if (needs_gen) {
        if (a.generator_path.empty()) {
            throw std::runtime_error(
                "this scheme/backdoor/encoder combination needs --generator");
        }
        gen = generator_from_file(a.generator_path, clean.input_shape);
        if (enc.variant == EncoderVariant::GeneratorLatent) {
            enc.latent_dim = gen.latent_dim;
            enc.generator_net = std::make_shared<const Model>(gen.net);
        }
    }

    TaskData task;
    Dataset* train_data = nullptr;
    const bool needs_task = cfg.scheme == InjectionScheme::WithTrainingData;
    task = a.task.resolve();
    if (needs_task) train_data = &task.train;

    TriggerSet triggers = build_trigger_set(build_sequence(a.key, a.n), enc,
                                            static_cast<int>(clean.out_dim));
    WatermarkPackage pkg =
        inject(clean, triggers, enc, needs_gen ? &gen : nullptr, train_data, cfg, a.seed);
    save_package(a.out_dir, pkg);

    const VerificationResult check = verify_package_model(pkg, pkg.model_wm);
    const double clean_acc = evaluate_accuracy(clean, task.test);
    const double wm_acc = evaluate_accuracy(pkg.model_wm, task.test);

    Json cconf = a.task.to_json();
    cconf["command"] = "embed";
    cconf["model"] = a.model_path;
    cconf["n"] = a.n;
    cconf["scheme"] = a.scheme;
    cconf["backdoor"] = a.backdoor;
    cconf["encoder"] = a.encoder;
    cconf["lambda2"] = a.lambda2;
    cconf["anchors"] = a.anchors;
    cconf["target"] = a.target;
    cconf["max_epochs"] = a.max_epochs;
    cconf["min_epochs"] = a.min_epochs;
    cconf["lr"] = a.lr;
    cconf["batch"] = a.batch;
    cconf["seed"] = a.seed;

    Json results;
    results["trigger_accuracy"] = pkg.trigger_accuracy;
    results["below_target"] = pkg.below_target;
    results["epsilon"] = pkg.epsilon;
    results["clean_test_accuracy"] = clean_acc;
    results["watermarked_test_accuracy"] = wm_acc;
    results["verification"] = verification_json(check);
    write_summary(a.out_dir, cconf, results);

    std::printf("trigger accuracy %.4f, test accuracy %.4f -> %.4f, verify %s\n",
                pkg.trigger_accuracy, clean_acc, wm_acc, check.pass ? "Pass" : "Fail");
    if (pkg.below_target) {
        std::fprintf(stderr, "error: trigger accuracy %.4f below target %.2f\n",
                     pkg.trigger_accuracy, a.target);
        return 3;
    }
    return 0;
}

// ------------------------------------------------------------------- evidence

struct EvidenceArgs {
    std::string package_dir;
    std::string out_path = "evidence.json";
    std::size_t k = 10;
    std::size_t round = 1;
};

int run_evidence(const EvidenceArgs& a) {
    const WatermarkPackage pkg = load_package(a.package_dir);
    const Evidence ev = next_round(pkg, a.round - 1, a.k);
    save_evidence(a.out_path, ev);
    std::printf("round %zu: rows %zu..%zu of %zu -> %s\n", a.round, ev.k_prime + 1,
                ev.k_prime + ev.k(), pkg.n_codes, a.out_path.c_str());
    return 0;
}

// --------------------------------------------------------------------- verify

struct VerifyArgs {
    std::string model_path;
    std::string evidence_path;
    std::string package_dir;  // optional: supplies encoder and fuzzy radius
    std::string encoder = "seeded_noise";
    std::string shape = "1,16,16";
    std::size_t latent_dim = 32;
    std::uint64_t basis_seed = 1;
    std::string generator_path;
    int classes = 10;
    double tau = 0.05;
    double epsilon = -1.0;  // <0: exact mode unless the package says otherwise
    std::string out_dir;
};

std::vector<std::size_t> parse_shape(const std::string& text) {
    std::vector<std::size_t> shape;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        shape.push_back(static_cast<std::size_t>(std::stoull(text.substr(pos, next - pos))));
        pos = next + 1;
    }
    if (shape.empty()) throw std::runtime_error("empty --shape");
    return shape;
}

int run_verify(const VerifyArgs& a) {
    LoadedModel lm = load_model(a.model_path);
    if (lm.meta.is_generator) {
        throw std::runtime_error(a.model_path + " is a generator, expected a classifier");
    }

    EncoderSpec enc;
    VerificationConfig cfg;
    cfg.tau = a.tau;
    cfg.num_classes = a.classes;

    if (!a.package_dir.empty()) {
        const WatermarkPackage pkg = load_package(a.package_dir);
        enc = pkg.encoder;
        cfg.num_classes = pkg.num_classes;
        if (pkg.backdoor == BackdoorKind::PostTrigger) {
            cfg.match_mode = MatchMode::Fuzzy;
            cfg.epsilon = pkg.epsilon;
        }
    } else {
        enc.variant = encoder_from_name(a.encoder);
        enc.image_shape = parse_shape(a.shape);
        enc.latent_dim = a.latent_dim;
        enc.basis_seed = a.basis_seed;
        if (enc.variant == EncoderVariant::GeneratorLatent) {
            if (a.generator_path.empty()) {
                throw std::runtime_error("encoder generator_latent needs --generator");
            }
            Generator gen = generator_from_file(a.generator_path, enc.image_shape);
            enc.latent_dim = gen.latent_dim;
            enc.generator_net = std::make_shared<const Model>(std::move(gen.net));
        }
    }
    if (a.epsilon >= 0.0) {
        cfg.match_mode = a.epsilon > 0.0 ? MatchMode::Fuzzy : MatchMode::Exact;
        cfg.epsilon = a.epsilon;
    }

    const Evidence ev = load_evidence(a.evidence_path, enc.image_shape);
    const VerificationResult res = verify(lm.model, ev, enc, cfg);
    print_verification(res);

    if (!a.out_dir.empty()) {
        Json cfg_json;
        cfg_json["command"] = "verify";
        cfg_json["model"] = a.model_path;
        cfg_json["evidence"] = a.evidence_path;
        cfg_json["tau"] = a.tau;
        cfg_json["classes"] = cfg.num_classes;
        cfg_json["fuzzy"] = cfg.match_mode == MatchMode::Fuzzy;
        cfg_json["epsilon"] = cfg.epsilon;
        write_summary(a.out_dir, cfg_json, verification_json(res));
    }
    return res.pass ? 0 : 1;
}

// --------------------------------------------------------------------- attack

struct AttackArgs {
    TaskFlags task;
    std::string package_dir;
    std::string kind = "fine_tune";
    std::string out_dir = "out-attack";
    std::size_t epochs = 20;
    double lr = 0.05;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
    std::size_t data_from = 0;
    std::size_t data_to = 0;  // 0 = end of the training split
    int c_adv = -1;           // default C-1
    std::size_t w = 0;        // default 10 N
    std::vector<double> fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

int run_attack(const AttackArgs& a) {
    const WatermarkPackage pkg = load_package(a.package_dir);
    TaskData task = a.task.resolve();

    Json cfg = a.task.to_json();
    cfg["command"] = "attack";
    cfg["package"] = a.package_dir;
    cfg["kind"] = a.kind;
    cfg["epochs"] = a.epochs;
    cfg["lr"] = a.lr;
    cfg["batch"] = a.batch;
    cfg["seed"] = a.seed;

    TrainConfig tc;
    tc.lr = a.lr;
    tc.batch_size = a.batch;
    tc.seed = a.seed;

    std::filesystem::create_directories(a.out_dir);
    const std::string hash = config_hash(cfg);

    if (a.kind == "prune") {
        cfg["fractions"] = a.fractions;
        const std::vector<AttackOutcome> outs = prune_attack(pkg, a.fractions, task.test);
        std::vector<std::string> rows;
        Json verif = Json::array();
        for (std::size_t i = 0; i < outs.size(); ++i) {
            rows.push_back(fmt(a.fractions[i]) + "," + fmt(outs[i].normal_acc_curve.back()) +
                           "," + fmt(outs[i].trigger_acc_curve.back()) + "," +
                           (outs[i].verification_after.pass ? "1" : "0"));
            verif.push_back(verification_json(outs[i].verification_after));
        }
        write_csv(a.out_dir + "/prune.csv", hash, "fraction,normal_acc,trigger_acc,verify_pass",
                  rows);
        Json results;
        results["baseline_normal"] = outs.empty() ? 0.0 : outs[0].normal_acc_curve[0];
        results["baseline_trigger"] = outs.empty() ? 0.0 : outs[0].trigger_acc_curve[0];
        results["verification_after"] = std::move(verif);
        write_summary(a.out_dir, cfg, results);
        std::printf("pruned %zu fractions -> %s/prune.csv\n", a.fractions.size(),
                    a.out_dir.c_str());
        return 0;
    }

    AttackOutcome out;
    if (a.kind == "fine_tune") {
        std::size_t hi = a.data_to == 0 ? task.train.labels.size() : a.data_to;
        if (hi > task.train.labels.size() || a.data_from >= hi) {
            throw std::runtime_error("bad --data-from/--data-to range");
        }
        std::vector<std::size_t> idx;
        for (std::size_t i = a.data_from; i < hi; ++i) idx.push_back(i);
        Dataset data = task.train.subset(idx);
        cfg["data_from"] = a.data_from;
        cfg["data_to"] = hi;
        out = fine_tune_attack(pkg, data, a.epochs, tc, &task.test);
    } else if (a.kind == "adversarial") {
        const int c_adv = a.c_adv < 0 ? pkg.num_classes - 1 : a.c_adv;
        const std::size_t w = a.w == 0 ? 10 * pkg.n_codes : a.w;
        cfg["c_adv"] = c_adv;
        cfg["w"] = w;
        out = adversarial_tune_attack(pkg, pkg.encoder, c_adv, w, a.epochs, a.seed, task.test,
                                      tc);
    } else {
        throw std::runtime_error("unknown attack kind: " + a.kind);
    }

    std::vector<std::string> rows;
    for (std::size_t i = 0; i < out.normal_acc_curve.size(); ++i) {
        rows.push_back(std::to_string(i) + "," + fmt(out.normal_acc_curve[i]) + "," +
                       fmt(out.trigger_acc_curve[i]));
    }
    write_csv(a.out_dir + "/curves.csv", config_hash(cfg), "step,normal_acc,trigger_acc", rows);

    Json results;
    results["normal_before"] = out.normal_acc_curve.front();
    results["normal_after"] = out.normal_acc_curve.back();
    results["trigger_before"] = out.trigger_acc_curve.front();
    results["trigger_after"] = out.trigger_acc_curve.back();
    results["verification_after"] = verification_json(out.verification_after);
    write_summary(a.out_dir, cfg, results);

    std::printf("%s: normal %.4f -> %.4f, trigger %.4f -> %.4f, verify %s\n", a.kind.c_str(),
                out.normal_acc_curve.front(), out.normal_acc_curve.back(),
                out.trigger_acc_curve.front(), out.trigger_acc_curve.back(),
                out.verification_after.pass ? "Pass" : "Fail");
    return 0;
}

// ------------------------------------------------------------------- capacity

struct CapacityArgs {
    std::size_t n = 50;
    int classes = 10;
    double log2_u = 16.0;
    double s_eps = 8.0;
    double zeta = 0.95;
    std::size_t max_j = 1000000;
    std::size_t n_hat = 0;  // 0: reuse n (no measured degradation data)
    std::size_t trials = 0;
    std::vector<std::size_t> sim_js;
    std::uint64_t seed = 7;
    std::string out_dir = "out-capacity";
};

int run_capacity(const CapacityArgs& a) {
    CapacityParams p;
    p.n_codes = a.n;
    p.num_classes = a.classes;
    p.log2_u_size = a.log2_u;
    p.s_eps = a.s_eps;
    p.zeta = a.zeta;

    const std::size_t n_hat = a.n_hat == 0 ? a.n : a.n_hat;
    const CapacityReport report = capacity_bound(p, n_hat, a.max_j);

    Json cfg;
    cfg["command"] = "capacity";
    cfg["n"] = a.n;
    cfg["classes"] = a.classes;
    cfg["log2_u"] = a.log2_u;
    cfg["s_eps"] = a.s_eps;
    cfg["zeta"] = a.zeta;
    cfg["max_j"] = a.max_j;
    cfg["n_hat"] = n_hat;
    cfg["trials"] = a.trials;
    cfg["seed"] = a.seed;

    // Simulated columns are filled only at the requested J values; running
    // the Monte Carlo at every table row would take hours for nothing.
    std::vector<std::string> rows;
    for (const CapacityRow& row : report.table) {
        std::string line = std::to_string(row.j) + "," + fmt(row.mu) + "," + fmt(row.sigma2) +
                           "," + fmt(row.fail) + "," + fmt(row.success);
        bool simulated = false;
        if (a.trials > 0) {
            for (std::size_t j : a.sim_js) {
                if (j == row.j) {
                    const CollisionSim sim = simulate_collisions(row.j, p, a.trials, a.seed);
                    line += "," + fmt(sim.mean) + "," + fmt(sim.var);
                    simulated = true;
                    break;
                }
            }
        }
        if (!simulated) line += ",,";
        rows.push_back(std::move(line));
    }
    std::filesystem::create_directories(a.out_dir);
    write_csv(a.out_dir + "/capacity.csv", config_hash(cfg),
              "J,mu,sigma2,p_fail,p_success,empirical_mean,empirical_var", rows);

    Json results;
    if (report.j_star_unbounded) {
        results["j_star"] = "unbounded";
    } else {
        results["j_star"] = report.j_star;
    }
    results["scan_truncated"] = report.scan_truncated;
    results["n_hat"] = report.n_hat;
    results["n_hat_ratio"] = report.n_hat_ratio;
    results["bound"] = report.bound;
    results["bound_keys"] = report.bound_keys;
    write_summary(a.out_dir, cfg, results);

    if (report.j_star_unbounded) {
        std::printf("no collision pressure (S=0); bound %.3f keys\n", report.bound);
    } else {
        std::printf("j_star %zu%s, bound %zu keys\n", report.j_star,
                    report.scan_truncated ? " (scan truncated)" : "", report.bound_keys);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Black-box watermarking workbench for image classifiers"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read long-option defaults from an INI/TOML file");

    TrainCleanArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train-clean", "Train a clean model on a task");
    train_args.task.attach(train_cmd);
    train_cmd->add_option("--out", train_args.out_dir, "Output directory");
    train_cmd->add_option("--arch", train_args.arch, "Architecture preset: desk or dense");
    train_cmd->add_option("--lr", train_args.lr, "SGD learning rate");
    train_cmd->add_option("--batch", train_args.batch, "Minibatch size");
    train_cmd->add_option("--epochs", train_args.epochs, "Training epochs");
    train_cmd->add_option("--seed", train_args.seed, "Init and shuffle seed");
    train_cmd->add_option("--floor", train_args.floor, "Minimum test accuracy");

    DistillArgs distill_args;
    CLI::App* distill_cmd =
        app.add_subcommand("distill", "Distill an anchor generator from a clean model");
    distill_cmd->add_option("--model", distill_args.model_path, "Clean model checkpoint")
        ->required();
    distill_cmd->add_option("--out", distill_args.out_dir, "Output directory");
    distill_cmd->add_option("--latent", distill_args.latent, "Generator latent dimension");
    distill_cmd->add_option("--steps", distill_args.steps, "Distillation steps")
        ->check(CLI::PositiveNumber);
    distill_cmd->add_option("--lr", distill_args.lr, "Distillation learning rate");
    distill_cmd->add_option("--batch", distill_args.batch, "Latent batch size");
    distill_cmd->add_option("--seed", distill_args.seed, "Distillation seed");
    distill_cmd->add_option("--agreement-floor", distill_args.agreement_floor,
                            "Minimum teacher-student agreement");

    EmbedArgs embed_args;
    CLI::App* embed_cmd = app.add_subcommand("embed", "Embed a watermark into a clean model");
    embed_args.task.attach(embed_cmd);
    embed_cmd->add_option("--model", embed_args.model_path, "Clean model checkpoint")
        ->required();
    embed_cmd->add_option("--generator", embed_args.generator_path, "Generator checkpoint");
    embed_cmd->add_option("--out", embed_args.out_dir, "Package directory");
    embed_cmd->add_option("--key", embed_args.key, "Owner identity key")->required();
    embed_cmd->add_option("--n", embed_args.n, "Code count N");
    embed_cmd->add_option("--scheme", embed_args.scheme,
                          "solely | with_training_data | with_anchors");
    embed_cmd->add_option("--backdoor", embed_args.backdoor, "trigger | post_trigger");
    embed_cmd->add_option("--encoder", embed_args.encoder,
                          "seeded_noise | generator_latent | continuous_linear");
    embed_cmd->add_option("--latent-dim", embed_args.latent_dim, "Encoder latent dimension");
    embed_cmd->add_option("--basis-seed", embed_args.basis_seed, "Linear encoder basis seed");
    embed_cmd->add_option("--lambda2", embed_args.lambda2, "Anchor loss weight");
    embed_cmd->add_option("--anchors", embed_args.anchors, "Anchor count S");
    embed_cmd->add_option("--target", embed_args.target, "Trigger accuracy target");
    embed_cmd->add_option("--max-epochs", embed_args.max_epochs, "Injection epoch cap");
    embed_cmd->add_option("--min-epochs", embed_args.min_epochs, "Injection epoch floor");
    embed_cmd->add_option("--lr", embed_args.lr, "Injection learning rate");
    embed_cmd->add_option("--batch", embed_args.batch, "Trigger minibatch size");
    embed_cmd->add_option("--seed", embed_args.seed, "Injection seed");
    embed_cmd->add_option("--q-iters", embed_args.post.q_iters, "Post-trigger rounds");
    embed_cmd->add_option("--anchors-per-iter", embed_args.post.anchors_per_iter,
                          "Post-trigger anchors per round");
    embed_cmd->add_option("--pixel-steps", embed_args.post.pixel_steps,
                          "Post-trigger pixel steps per round");
    embed_cmd->add_option("--pixel-lr", embed_args.post.pixel_lr, "Post-trigger pixel rate");
    embed_cmd->add_option("--lambda1", embed_args.post.lambda1, "Post-trigger proximity weight");
    embed_cmd->add_option("--ft-epochs", embed_args.post.finetune_epochs,
                          "Post-trigger surrogate fine-tune epochs");

    EvidenceArgs evidence_args;
    CLI::App* evidence_cmd =
        app.add_subcommand("evidence", "Emit one round of ownership evidence");
    evidence_cmd->add_option("--package", evidence_args.package_dir, "Package directory")
        ->required();
    evidence_cmd->add_option("--out", evidence_args.out_path, "Evidence document path");
    evidence_cmd->add_option("--k", evidence_args.k, "Rows per round");
    evidence_cmd->add_option("--round", evidence_args.round, "Round number, 1-based")
        ->check(CLI::PositiveNumber);

    VerifyArgs verify_args;
    CLI::App* verify_cmd = app.add_subcommand("verify", "Check evidence against a model");
    verify_cmd->add_option("--model", verify_args.model_path, "Model under test")->required();
    verify_cmd->add_option("--evidence", verify_args.evidence_path, "Evidence document")
        ->required();
    verify_cmd->add_option("--package", verify_args.package_dir,
                           "Package directory supplying encoder and fuzzy radius");
    verify_cmd->add_option("--encoder", verify_args.encoder, "Encoder variant");
    verify_cmd->add_option("--shape", verify_args.shape, "Encoder image shape, e.g. 1,16,16");
    verify_cmd->add_option("--latent-dim", verify_args.latent_dim, "Encoder latent dimension");
    verify_cmd->add_option("--basis-seed", verify_args.basis_seed, "Linear encoder basis seed");
    verify_cmd->add_option("--generator", verify_args.generator_path, "Generator checkpoint");
    verify_cmd->add_option("--classes", verify_args.classes, "Model class count");
    verify_cmd->add_option("--tau", verify_args.tau, "Sensitivity threshold");
    verify_cmd->add_option("--epsilon", verify_args.epsilon,
                           "Fuzzy match radius; 0 forces exact matching");
    verify_cmd->add_option("--out", verify_args.out_dir, "Optional summary directory");

    AttackArgs attack_args;
    CLI::App* attack_cmd = app.add_subcommand("attack", "Attack a watermarked package");
    attack_args.task.attach(attack_cmd);
    attack_cmd->add_option("--package", attack_args.package_dir, "Package directory")
        ->required();
    attack_cmd->add_option("--kind", attack_args.kind, "fine_tune | adversarial | prune");
    attack_cmd->add_option("--out", attack_args.out_dir, "Output directory");
    attack_cmd->add_option("--epochs", attack_args.epochs, "Attack epochs");
    attack_cmd->add_option("--lr", attack_args.lr, "Attack learning rate");
    attack_cmd->add_option("--batch", attack_args.batch, "Attack minibatch size");
    attack_cmd->add_option("--seed", attack_args.seed, "Attack seed");
    attack_cmd->add_option("--data-from", attack_args.data_from,
                           "First training row used for tuning");
    attack_cmd->add_option("--data-to", attack_args.data_to,
                           "One past the last tuning row (0 = end)");
    attack_cmd->add_option("--c-adv", attack_args.c_adv, "Adversarial target class (-1 = C-1)");
    attack_cmd->add_option("--w", attack_args.w, "Forged trigger count (0 = 10N)");
    attack_cmd->add_option("--fractions", attack_args.fractions, "Pruning fractions");

    CapacityArgs capacity_args;
    CLI::App* capacity_cmd =
        app.add_subcommand("capacity", "Tabulate the multi-key collision analysis");
    capacity_cmd->add_option("--n", capacity_args.n, "Codes per key N");
    capacity_cmd->add_option("--classes", capacity_args.classes, "Class count C");
    capacity_cmd->add_option("--log2-u", capacity_args.log2_u, "log2 of the code space size");
    capacity_cmd->add_option("--s-eps", capacity_args.s_eps, "Confusion sphere size");
    capacity_cmd->add_option("--zeta", capacity_args.zeta, "Success probability floor");
    capacity_cmd->add_option("--max-j", capacity_args.max_j, "Scan cap on key count");
    capacity_cmd->add_option("--n-hat", capacity_args.n_hat,
                             "Measured embeddable mark count (0 = assume N)");
    capacity_cmd->add_option("--trials", capacity_args.trials,
                             "Monte Carlo trials per simulated row (0 = analytic only)");
    capacity_cmd->add_option("--sim-js", capacity_args.sim_js, "J values to simulate");
    capacity_cmd->add_option("--seed", capacity_args.seed, "Monte Carlo seed");
    capacity_cmd->add_option("--out", capacity_args.out_dir, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) return run_train_clean(train_args);
        if (*distill_cmd) return run_distill(distill_args);
        if (*embed_cmd) return run_embed(embed_args);
        if (*evidence_cmd) return run_evidence(evidence_args);
        if (*verify_cmd) return run_verify(verify_args);
        if (*attack_cmd) return run_attack(attack_args);
        if (*capacity_cmd) return run_capacity(capacity_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
