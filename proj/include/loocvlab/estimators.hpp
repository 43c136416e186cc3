#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/random/exponential_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "error.hpp"

namespace loocvlab {

inline double elpd_hat_diff(const Eigen::VectorXd& diffs) { return diffs.sum(); }

/// sqrt(n/(n-1) * sum (d_i - mean)^2).
inline double se_hat(const Eigen::VectorXd& diffs) {
    const auto n = diffs.size();
    require(n >= 2, "se_hat: need at least two terms");
    const double mean = diffs.mean();
    const double ss = (diffs.array() - mean).square().sum();
    return std::sqrt(static_cast<double>(n) / static_cast<double>(n - 1) * ss);
}

struct NormalApprox {
    double center = 0.0;
    double scale = 0.0;
};

inline NormalApprox normal_uncertainty(const Eigen::VectorXd& diffs) {
    return {elpd_hat_diff(diffs), se_hat(diffs)};
}

inline double std_normal_cdf(double z) { return boost::math::cdf(boost::math::normal_distribution<double>(), z); }

/// P(elpd_A - elpd_B > 0) under the normal approximation.
inline double prob_a_better(const NormalApprox& a) {
    if (a.scale == 0.0) return a.center > 0.0 ? 1.0 : (a.center < 0.0 ? 0.0 : 0.5);
    return 1.0 - std_normal_cdf(-a.center / a.scale);
}

struct BBSample {
    std::vector<double> draws;
    std::size_t n_draws() const { return draws.size(); }
};

/// Each draw is n * sum_i w_i d_i with w ~ Dirichlet(1, ..., 1).
template <class Gen>
BBSample bb_uncertainty(const Eigen::VectorXd& diffs, std::size_t n_draws, Gen& rng) {
    const auto n = diffs.size();
    require(n >= 1, "bb_uncertainty: empty terms");
    require(n_draws >= 1, "bb_uncertainty: n_draws must be positive");
    boost::random::exponential_distribution<double> expo(1.0);
    const double lo = static_cast<double>(n) * diffs.minCoeff();
    const double hi = static_cast<double>(n) * diffs.maxCoeff();
    BBSample s;
    s.draws.resize(n_draws);
    for (std::size_t k = 0; k < n_draws; ++k) {
        double wsum = 0.0, acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = expo(rng);
            wsum += e;
            acc += e * diffs(i);
        }
        // Rounding can push a convex combination past its extremes.
        s.draws[k] = std::clamp(static_cast<double>(n) * acc / wsum, lo, hi);
    }
    return s;
}

inline double pit(const NormalApprox& a, double target) {
    if (a.scale == 0.0) return target > a.center ? 1.0 : (target < a.center ? 0.0 : 0.5);
    return std_normal_cdf((target - a.center) / a.scale);
}

/// Mid-rank empirical CDF of the draws at target.
inline double pit(const BBSample& s, double target) {
    require(!s.draws.empty(), "pit: empty bootstrap sample");
    std::size_t below = 0, equal = 0;
    for (double d : s.draws) {
        below += d < target;
        equal += d == target;
    }
    return (static_cast<double>(below) + 0.5 * static_cast<double>(equal)) / static_cast<double>(s.draws.size());
}

struct CovStructure {
    double sigma2_ab = 0.0;
    double gamma_ab = 0.0;
    double n = 0.0;
};

struct VarIdentities {
    double true_var;
    double naive_expectation;
    double bias;
};

inline VarIdentities var_identities(const CovStructure& c) {
    return {c.n * c.sigma2_ab + c.n * (c.n - 1.0) * c.gamma_ab, c.n * c.sigma2_ab - c.n * c.gamma_ab,
            -c.n * c.n * c.gamma_ab};
}

}  // namespace loocvlab
