#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "wmark/dataset.hpp"
#include "wmark/nn.hpp"

namespace wmark {

// Parameters of the multi-key collision analysis. The code space size is
// carried as log2 so astronomically large spaces stay representable; only
// the Monte Carlo sampler restricts it (log2_u_size <= 32 there).
struct CapacityParams {
    std::size_t n_codes = 50;   // N, codes per key
    int num_classes = 10;       // C
    double log2_u_size = 16.0;  // log2 |U|
    double s_eps = 8.0;         // S(eps), confusion-sphere size; 0 disables collisions
    double zeta = 0.95;         // success-probability floor
    double gamma = 0.0;         // performance floor for n_hat measurements

    void validate() const;
};

// Mean and variance of one key's collision count against J earlier keys.
// sigma2 goes negative once J N (C-1) S / (|U| C) exceeds 1; that regime is
// outside the Gaussian approximation, so the flag is reported instead of
// clamping. textbook_sigma2 is the np(1-p) variance for the same mean,
// provided as a diagnostic because the two disagree by construction.
struct CollisionMoments {
    double mu = 0.0;
    double sigma2 = 0.0;
    double textbook_sigma2 = 0.0;
    bool approximation_valid = true;
};

CollisionMoments collision_moments(std::size_t j, const CapacityParams& p);

// Probability that key J+1 cannot be embedded: the Gaussian tail of the
// collision count beyond N C / (C-1). A zero sigma degenerates to a step at
// the threshold.
double p_fail(std::size_t j, const CapacityParams& p);

// Probability that the first J keys all embed, the product of the per-key
// complements. Non-increasing in J.
double p_success(std::size_t j, const CapacityParams& p);

struct CapacityRow {
    std::size_t j = 0;
    double mu = 0.0;
    double sigma2 = 0.0;
    double fail = 0.0;
    double success = 0.0;
};

inline constexpr std::size_t kJUnbounded = std::numeric_limits<std::size_t>::max();

struct CapacityReport {
    std::vector<CapacityRow> table;   // rows 1..min(j_star+1, scan limit)
    std::size_t j_star = 0;           // largest J with P_Success >= zeta
    bool j_star_unbounded = false;    // no collision pressure (S(eps) == 0)
    bool scan_truncated = false;      // hit max_j before P_Success fell below zeta
    std::size_t n_hat = 0;
    double n_hat_ratio = 0.0;         // n_hat / N, fractional part retained
    double bound = 0.0;               // min(n_hat_ratio, j_star)
    std::size_t bound_keys = 0;       // floor(bound)
};

// Scans J upward until P_Success drops below zeta (monotone, so the first
// crossing ends the scan). S(eps) == 0 never crosses and yields the
// unbounded sentinel; a crossing beyond max_j is reported as truncated with
// j_star = max_j rather than scanning forever.
CapacityReport capacity_bound(const CapacityParams& p, std::size_t n_hat,
                              std::size_t max_j = 1000000);

struct CollisionSim {
    double mean = 0.0;
    double var = 0.0;
    std::size_t trials = 0;
    // Below ~1000 trials the 5% agreement target on the mean is not
    // statistically meaningful for the toy parameters.
    bool low_trials = false;
};

// Monte Carlo oracle for collision_moments. Codes live on a 1-D discrete
// torus of |U| positions; a pair collides when the established code falls in
// a window of exactly S(eps) positions around the new code and an independent
// coin with heads probability (C-1)/C declares the labels distinct. Each
// trial draws J N established codes and N new ones. Requires an integral
// S(eps) and log2_u_size <= 32.
CollisionSim simulate_collisions(std::size_t j, const CapacityParams& p, std::size_t trials,
                                 std::uint64_t seed);

struct NHatResult {
    std::size_t n_hat = 0;
    // accuracy_curve[i] is the test accuracy after (i+1) batches.
    std::vector<double> accuracy_curve;
};

// Grows the number of injected marks in steps of `batch` until test accuracy
// falls below gamma, returning the last count that stayed at or above it.
// inject_upto(total) must return the model carrying `total` marks; gamma must
// not exceed the clean model's own test accuracy.
NHatResult measure_n_hat(const Model& clean, const Dataset& test,
                         const std::function<Model(std::size_t total)>& inject_upto, double gamma,
                         std::size_t batch = 50, std::size_t max_n = 1000);

}  // namespace wmark
