#include "wmark/verifier.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wmark {

void VerificationConfig::validate() const {
    if (!(tau > 0.0) || !(tau < 1.0)) {
        throw std::invalid_argument("verification config: tau must be in (0, 1)");
    }
    if (epsilon < 0.0 || !std::isfinite(epsilon)) {
        throw std::invalid_argument("verification config: epsilon must be finite and >= 0");
    }
    if (match_mode != MatchMode::Exact && match_mode != MatchMode::Fuzzy) {
        throw std::invalid_argument("verification config: unknown match mode");
    }
    if (num_classes < 2) {
        throw std::invalid_argument("verification config: num_classes must be >= 2");
    }
}

double gaussian_cdf(double x) {
    if (!std::isfinite(x)) {
        throw std::invalid_argument("gaussian_cdf: x must be finite");
    }
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

Evidence build_evidence(const WatermarkPackage& pkg, std::size_t k, std::size_t k_prime) {
    if (k == 0) {
        throw std::invalid_argument("build_evidence: k must be >= 1");
    }
    const std::size_t n = pkg.trigger_set.size();
    if (k + k_prime > n) {
        throw std::out_of_range("build_evidence: window " + std::to_string(k_prime + 1) + ".." +
                                std::to_string(k_prime + k) + " exceeds trigger count " +
                                std::to_string(n));
    }
    Evidence ev;
    ev.k_prime = k_prime;
    ev.rows.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const TriggerRow& row = pkg.trigger_set.rows[k_prime + i];
        ev.rows.push_back({row.code, row.image, row.label});
    }
    return ev;
}

namespace {

bool images_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        return false;
    }
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) {
            return false;
        }
    }
    return true;
}

}  // namespace

VerificationResult verify(const Model& model, const Evidence& ev, const EncoderSpec& encoder,
                          const VerificationConfig& cfg) {
    cfg.validate();
    encoder.validate();
    const std::size_t k = ev.k();
    if (k < 3) {
        throw std::invalid_argument("verify: need at least 3 evidence rows to check a chain link");
    }
    if (model.out_dim != static_cast<std::size_t>(cfg.num_classes)) {
        throw std::invalid_argument("verify: model emits " + std::to_string(model.out_dim) +
                                    " classes, config says " + std::to_string(cfg.num_classes));
    }

    VerificationResult res;
    res.per_row.resize(k);

    std::vector<Tensor> imgs;
    imgs.reserve(k);
    for (const EvidenceRow& row : ev.rows) {
        imgs.push_back(row.image);
    }
    const std::vector<int> preds = predict(model, stack_rows(imgs));

    std::size_t acc = 0;
    res.chain_intact = true;
    for (std::size_t i = 0; i < k; ++i) {
        const EvidenceRow& row = ev.rows[i];
        RowCheck& chk = res.per_row[i];

        const Tensor reenc = encode_trigger(encoder, row.code);
        chk.image_match = cfg.match_mode == MatchMode::Exact
                              ? images_equal(reenc, row.image)
                              : reenc.shape == row.image.shape &&
                                    image_l1(reenc, row.image) <= cfg.epsilon;
        chk.label_match = assign_label(row.code, cfg.num_classes) == row.label;
        chk.model_match = preds[i] == row.label;
        chk.chain_ok = i + 2 >= k ||
                       ev.rows[i].code == reduce(ev.rows[i + 1].code, ev.rows[i + 2].code);
        res.chain_intact = res.chain_intact && chk.chain_ok;
        if (chk.counted()) {
            ++acc;
        }
    }

    res.acc = acc;
    res.mu_hat = static_cast<double>(acc) / static_cast<double>(k);
    res.sigma_hat = std::sqrt(res.mu_hat * (1.0 - res.mu_hat) / static_cast<double>(k));
    const double chance = 1.0 / static_cast<double>(cfg.num_classes);
    bool stat_pass;
    if (res.sigma_hat == 0.0) {
        stat_pass = res.mu_hat > chance;
        res.statistic = stat_pass ? 0.0 : 1.0;
    } else {
        res.statistic = gaussian_cdf((chance - res.mu_hat) / res.sigma_hat);
        stat_pass = res.statistic <= cfg.tau;
    }
    res.pass = res.chain_intact && stat_pass;
    return res;
}

Evidence next_round(const WatermarkPackage& pkg, std::size_t prev_rounds, std::size_t k) {
    if (k == 0) {
        throw std::invalid_argument("next_round: k must be >= 1");
    }
    if (prev_rounds + k > pkg.trigger_set.size()) {
        throw std::runtime_error("next_round: evidence rounds exhausted after " +
                                 std::to_string(prev_rounds) + " disclosures of window " +
                                 std::to_string(k));
    }
    return build_evidence(pkg, k, prev_rounds);
}

}  // namespace wmark
