#pragma once

#include <cstddef>
#include <vector>

#include "wmark/codec.hpp"
#include "wmark/injector.hpp"
#include "wmark/nn.hpp"

namespace wmark {

struct EvidenceRow {
    Code code;
    Tensor image;
    int label = 0;
};

// A contiguous window of the owner's trigger rows, positions k_prime+1 ..
// k_prime+k of the underlying sequence. Earlier windows may be public; rows
// past the window stay secret until a later round discloses them.
struct Evidence {
    std::vector<EvidenceRow> rows;
    std::size_t k_prime = 0;

    std::size_t k() const { return rows.size(); }
};

enum class MatchMode : std::uint32_t {
    Exact = 1,  // re-encoded image must equal the evidence image bitwise
    Fuzzy = 2,  // mean absolute pixel distance at most epsilon
};

struct VerificationConfig {
    double tau = 0.05;    // pass threshold on the tail probability
    double epsilon = 0.0; // fuzzy match radius; ignored in exact mode
    MatchMode match_mode = MatchMode::Exact;
    int num_classes = 10;

    void validate() const;
};

// Per-row condition breakdown. A row counts toward acc only when all four
// hold. The last two rows have no successor pair, so chain_ok is vacuously
// true there.
struct RowCheck {
    bool image_match = false;
    bool label_match = false;
    bool model_match = false;
    bool chain_ok = false;

    bool counted() const { return image_match && label_match && model_match && chain_ok; }
};

struct VerificationResult {
    bool pass = false;
    bool chain_intact = false;  // every checkable successor link held
    std::size_t acc = 0;        // rows passing all four conditions
    double mu_hat = 0.0;        // acc / K
    double sigma_hat = 0.0;     // sqrt(mu_hat (1 - mu_hat) / K)
    double statistic = 0.0;     // gaussian_cdf((1/C - mu_hat) / sigma_hat)
    std::vector<RowCheck> per_row;
};

// Standard normal CDF, absolute error below 1e-9 everywhere.
double gaussian_cdf(double x);

// Rows k_prime+1 .. k_prime+k of the package trigger set, 1-indexed against
// the code sequence. Throws std::out_of_range when the window leaves the set
// and std::invalid_argument when k == 0.
Evidence build_evidence(const WatermarkPackage& pkg, std::size_t k, std::size_t k_prime);

// Ownership test of `model` against disclosed evidence. Each row must encode
// from its code, carry the derived label, be classified to that label, and
// link to its two successors (last two rows exempt). Pass requires every
// checkable chain link to hold (a single forged code is fatal regardless of
// the hit rate) and the tail probability of the hit rate under the
// chance-level null to be at most tau. mu_hat in {0,1} makes sigma_hat zero;
// the statistical part then degenerates to mu_hat > 1/C. Needs at least
// three rows, otherwise no chain link is checkable and the call throws
// std::invalid_argument.
VerificationResult verify(const Model& model, const Evidence& ev, const EncoderSpec& encoder,
                          const VerificationConfig& cfg);

// Evidence for round prev_rounds+1 under the sliding-window protocol: round
// t discloses the window at k_prime = t-1. Throws std::runtime_error once
// prev_rounds + k exceeds the package's code count.
Evidence next_round(const WatermarkPackage& pkg, std::size_t prev_rounds, std::size_t k);

}  // namespace wmark
