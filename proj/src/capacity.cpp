#include "wmark/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "wmark/rng.hpp"
#include "wmark/verifier.hpp"

namespace wmark {

void CapacityParams::validate() const {
    if (n_codes == 0) {
        throw std::invalid_argument("capacity params: n_codes must be >= 1");
    }
    if (num_classes < 2) {
        throw std::invalid_argument("capacity params: num_classes must be >= 2");
    }
    if (!std::isfinite(log2_u_size) || log2_u_size < 0.0) {
        throw std::invalid_argument("capacity params: log2_u_size must be finite and >= 0");
    }
    if (!std::isfinite(s_eps) || s_eps < 0.0) {
        throw std::invalid_argument("capacity params: s_eps must be finite and >= 0");
    }
    if (s_eps > std::exp2(log2_u_size)) {
        throw std::invalid_argument("capacity params: s_eps exceeds the code space size");
    }
    if (!(zeta > 0.0) || !(zeta < 1.0)) {
        throw std::invalid_argument("capacity params: zeta must be in (0, 1)");
    }
    if (!std::isfinite(gamma) || gamma < 0.0 || gamma > 1.0) {
        throw std::invalid_argument("capacity params: gamma must be in [0, 1]");
    }
}

CollisionMoments collision_moments(std::size_t j, const CapacityParams& p) {
    p.validate();
    if (j == 0) {
        throw std::invalid_argument("collision_moments: j must be >= 1");
    }
    const double n = static_cast<double>(p.n_codes);
    const double c = static_cast<double>(p.num_classes);
    const double u = std::exp2(p.log2_u_size);
    const double jd = static_cast<double>(j);

    // Per established code, a given new code hits its confusion sphere with
    // probability S/|U| and the labels differ with probability (C-1)/C.
    const double pair_rate = p.s_eps * (c - 1.0) / (u * c);

    CollisionMoments m;
    m.mu = jd * n * n * pair_rate;
    m.sigma2 = m.mu * (1.0 - jd * n * pair_rate);
    m.textbook_sigma2 = m.mu * (1.0 - pair_rate);
    m.approximation_valid = m.sigma2 >= 0.0;
    return m;
}

double p_fail(std::size_t j, const CapacityParams& p) {
    const CollisionMoments m = collision_moments(j, p);
    const double c = static_cast<double>(p.num_classes);
    const double threshold = static_cast<double>(p.n_codes) * c / (c - 1.0);
    if (m.sigma2 <= 0.0) {
        return m.mu < threshold ? 0.0 : 1.0;
    }
    return gaussian_cdf((m.mu - threshold) / std::sqrt(m.sigma2));
}

double p_success(std::size_t j, const CapacityParams& p) {
    if (j == 0) {
        throw std::invalid_argument("p_success: j must be >= 1");
    }
    double prod = 1.0;
    for (std::size_t i = 1; i <= j; ++i) {
        prod *= 1.0 - p_fail(i, p);
    }
    return prod;
}

CapacityReport capacity_bound(const CapacityParams& p, std::size_t n_hat, std::size_t max_j) {
    p.validate();
    if (max_j == 0) {
        throw std::invalid_argument("capacity_bound: max_j must be >= 1");
    }
    CapacityReport rep;
    rep.n_hat = n_hat;
    rep.n_hat_ratio = static_cast<double>(n_hat) / static_cast<double>(p.n_codes);

    if (p.s_eps == 0.0) {
        rep.j_star = kJUnbounded;
        rep.j_star_unbounded = true;
        rep.bound = rep.n_hat_ratio;
        rep.bound_keys = static_cast<std::size_t>(rep.bound);
        return rep;
    }

    // The scan itself runs to the crossing; the stored table is capped so a
    // slow crossing cannot balloon the report.
    constexpr std::size_t kTableCap = 10000;
    double success = 1.0;
    std::size_t last_ok = 0;
    for (std::size_t j = 1; j <= max_j; ++j) {
        const double fail = p_fail(j, p);
        success *= 1.0 - fail;
        if (rep.table.size() < kTableCap) {
            const CollisionMoments m = collision_moments(j, p);
            rep.table.push_back({j, m.mu, m.sigma2, fail, success});
        }
        if (success >= p.zeta) {
            last_ok = j;
        } else {
            break;
        }
    }
    rep.j_star = last_ok;
    rep.scan_truncated = last_ok == max_j;

    rep.bound = std::min(rep.n_hat_ratio, static_cast<double>(rep.j_star));
    rep.bound_keys = static_cast<std::size_t>(rep.bound);
    return rep;
}

CollisionSim simulate_collisions(std::size_t j, const CapacityParams& p, std::size_t trials,
                                 std::uint64_t seed) {
    p.validate();
    if (j == 0) {
        throw std::invalid_argument("simulate_collisions: j must be >= 1");
    }
    if (trials == 0) {
        throw std::invalid_argument("simulate_collisions: trials must be >= 1");
    }
    if (p.log2_u_size > 32.0) {
        throw std::invalid_argument("simulate_collisions: code space above 2^32 is not samplable");
    }
    if (p.s_eps != std::floor(p.s_eps)) {
        throw std::invalid_argument("simulate_collisions: s_eps must be integral for sampling");
    }

    const std::uint64_t u = static_cast<std::uint64_t>(std::exp2(p.log2_u_size));
    const std::uint64_t s = static_cast<std::uint64_t>(p.s_eps);
    const double differ = (static_cast<double>(p.num_classes) - 1.0) /
                          static_cast<double>(p.num_classes);
    const std::size_t established_n = j * p.n_codes;

    // Window of exactly S torus positions around a new code: offsets
    // -floor((S-1)/2) .. +ceil((S-1)/2), position 0 included.
    const std::uint64_t back = s == 0 ? 0 : (s - 1) / 2;
    const std::uint64_t fwd = s == 0 ? 0 : s - 1 - back;

    double sum = 0.0;
    double sumsq = 0.0;
    std::vector<std::uint64_t> established(established_n);
    for (std::size_t t = 0; t < trials; ++t) {
        CounterRng rng(seed, t + 1);
        for (std::uint64_t& pos : established) {
            pos = rng.below(u);
        }
        std::sort(established.begin(), established.end());

        std::uint64_t collisions = 0;
        if (s > 0) {
            for (std::size_t i = 0; i < p.n_codes; ++i) {
                const std::uint64_t pos = rng.below(u);
                const std::uint64_t lo = (pos + u - back) % u;
                const std::uint64_t hi = (pos + fwd) % u;
                std::size_t in_window;
                if (lo <= hi) {
                    in_window = std::upper_bound(established.begin(), established.end(), hi) -
                                std::lower_bound(established.begin(), established.end(), lo);
                } else {
                    in_window = (std::upper_bound(established.begin(), established.end(), hi) -
                                 established.begin()) +
                                (established.end() -
                                 std::lower_bound(established.begin(), established.end(), lo));
                }
                for (std::size_t m = 0; m < in_window; ++m) {
                    if (rng.uniform() < differ) {
                        ++collisions;
                    }
                }
            }
        }
        const double c = static_cast<double>(collisions);
        sum += c;
        sumsq += c * c;
    }

    CollisionSim out;
    out.trials = trials;
    out.mean = sum / static_cast<double>(trials);
    out.var = trials > 1
                  ? (sumsq - sum * sum / static_cast<double>(trials)) /
                        (static_cast<double>(trials) - 1.0)
                  : 0.0;
    out.low_trials = trials < 1000;
    return out;
}

NHatResult measure_n_hat(const Model& clean, const Dataset& test,
                         const std::function<Model(std::size_t total)>& inject_upto, double gamma,
                         std::size_t batch, std::size_t max_n) {
    if (!inject_upto) {
        throw std::invalid_argument("measure_n_hat: inject_upto must be callable");
    }
    if (batch == 0 || max_n == 0 || batch > max_n) {
        throw std::invalid_argument("measure_n_hat: need 1 <= batch <= max_n");
    }
    const double clean_acc = evaluate_accuracy(clean, test);
    if (gamma > clean_acc) {
        throw std::invalid_argument("measure_n_hat: gamma " + std::to_string(gamma) +
                                    " exceeds clean accuracy " + std::to_string(clean_acc));
    }

    NHatResult res;
    std::size_t last_ok = 0;
    for (std::size_t total = batch; total <= max_n; total += batch) {
        const Model m = inject_upto(total);
        const double acc = evaluate_accuracy(m, test);
        res.accuracy_curve.push_back(acc);
        if (acc < gamma) {
            break;
        }
        last_ok = total;
    }
    res.n_hat = last_ok;
    return res;
}

}  // namespace wmark
