#pragma once

#include <cmath>
#include <numbers>

#include "error.hpp"
#include "linreg.hpp"
#include "quadform.hpp"

namespace loocvlab::onecov {

/// Intercept-only model against intercept plus a balanced +-1 covariate.
struct OneCovConfig {
    long n = 4;
    double beta1 = 0.0;
    double m_star = 0.0;
    double s_star = 1.0;
    double tau = 1.0;

    void validate() const {
        require(n >= 4 && n % 2 == 0, "onecov: n must be even and at least 4");
        require(std::isfinite(beta1) && std::isfinite(m_star), "onecov: non-finite parameter");
        require(std::isfinite(s_star) && s_star > 0.0, "onecov: s_star must be positive");
        require(std::isfinite(tau) && tau > 0.0, "onecov: tau must be positive");
    }
};

struct PartialMoments {
    double mean = 0.0;
    double variance = 0.0;
};

/// The rational functions, written as products of ratios so large n stays finite.
namespace rational {

inline double r(double n, double k) { return n / (n + k); }

namespace elpd {
inline double P11(double n) { return -0.5 * n * r(n, 1); }
inline double Q10(double n) { return -r(n, 1); }
inline double R1m1(double n) { return -r(n, 2) / (n + 1); }
inline double F1(double n) { return 0.5 * n * std::log1p(1.0 / (n + 1)); }
inline double S20(double n) { return 0.5 * (1.0 + 2.0 / n + 2.0 / (n * n)) * std::pow(r(n, 1) * r(n, 2), 2); }
}  // namespace elpd

namespace loo {
inline double P11(double n) { return -0.5 * n * r(n, -1); }
inline double Q10(double n) { return -r(n, -1); }
inline double F1(double n) { return 0.5 * n * std::log1p(1.0 / (n - 2)); }
inline double P21(double n) { return n * r(n, -1) * r(n, -1); }
inline double Q20(double n) { return 2.0 * r(n, -1) * r(n, -1); }
inline double R2m1(double n) { return r(n, -2) / (n - 1); }
inline double S20(double n) { return 0.5 * r(n, -2) * r(n, -1); }
}  // namespace loo

namespace err {
inline double P10(double n) { return -r(n, 1) * r(n, -1); }
inline double Q1m1(double n) { return -2.0 * r(n, 1) / (n - 1); }
inline double R1m1(double n) { return r(n, 2) / (n + 1); }
inline double F1(double n) { return 0.5 * n * (std::log1p(1.0 / (n - 2)) - std::log1p(1.0 / (n + 1))); }
inline double P21(double n) { return loo::P21(n); }
inline double Q20(double n) { return loo::Q20(n); }
inline double R2m1(double n) { return r(n, -1) / (n - 2); }
inline double S20(double n) {
    const double poly = 4.0 + 9.0 / n + 5.0 / (n * n) - 6.0 / (n * n * n);
    return 0.5 * poly * std::pow(r(n, 2) * r(n, 1), 2) * r(n, -1) * r(n, -2);
}
inline double P31(double n) { return -3.0 * n * (2.0 + 1.0 / n) * r(n, 2) * std::pow(r(n, -1), 3); }
inline double Q30(double n) { return -6.0 * (2.0 + 1.0 / n) * r(n, 2) * std::pow(r(n, -1), 3); }
inline double R3m1(double n) {
    const double poly = 2.0 - 5.0 / n - 2.0 / (n * n);
    return -3.0 * poly * std::pow(r(n, -2) * r(n, -1), 2) * r(n, 2) / n;
}
inline double S30(double n) {
    const double k = 1.0 / n;
    const double poly = 8.0 + k * (12.0 + k * (-35.0 + k * (-102.0 + k * (-83.0 + k * (-36.0 + k * 20.0)))));
    return -poly * std::pow(r(n, 2) * r(n, 1), 3) * std::pow(r(n, -1) * r(n, -2), 2);
}
}  // namespace err

}  // namespace rational

inline PartialMoments elpd_moments(const OneCovConfig& c) {
    c.validate();
    namespace q = rational::elpd;
    const double n = static_cast<double>(c.n), t2 = c.tau * c.tau, s2 = c.s_star * c.s_star;
    return {(q::P11(n) * c.beta1 * c.beta1 + q::Q10(n) * c.beta1 * c.m_star + q::R1m1(n) * c.m_star * c.m_star) / t2 +
                q::F1(n),
            q::S20(n) * s2 * s2 / (t2 * t2)};
}

inline PartialMoments loocv_moments(const OneCovConfig& c) {
    c.validate();
    namespace q = rational::loo;
    const double n = static_cast<double>(c.n), t2 = c.tau * c.tau, s2 = c.s_star * c.s_star;
    const double b = c.beta1, m = c.m_star;
    return {(q::P11(n) * b * b + q::Q10(n) * b * m) / t2 + q::F1(n),
            (q::P21(n) * b * b * s2 + q::Q20(n) * b * m * s2 + q::R2m1(n) * m * m * s2 + q::S20(n) * s2 * s2) /
                (t2 * t2)};
}

inline Moments error_moments(const OneCovConfig& c) {
    c.validate();
    namespace q = rational::err;
    const double n = static_cast<double>(c.n), t2 = c.tau * c.tau, s2 = c.s_star * c.s_star;
    const double b = c.beta1, m = c.m_star;
    Moments out;
    out.mean = (q::P10(n) * b * b + q::Q1m1(n) * b * m + q::R1m1(n) * m * m) / t2 + q::F1(n);
    out.variance =
        (q::P21(n) * b * b * s2 + q::Q20(n) * b * m * s2 + q::R2m1(n) * m * m * s2 + q::S20(n) * s2 * s2) / (t2 * t2);
    out.third_central = (q::P31(n) * b * b * s2 * s2 + q::Q30(n) * b * m * s2 * s2 + q::R3m1(n) * m * m * s2 * s2 +
                         q::S30(n) * s2 * s2 * s2) /
                        (t2 * t2 * t2);
    out.skewness = skewness_of(out.variance, out.third_central);
    return out;
}

/// Limit that is either a finite value or diverges to minus infinity.
struct Limit {
    enum class Kind { finite, neg_infinity };
    Kind kind = Kind::finite;
    double value = 0.0;

    static Limit finite(double v) { return {Kind::finite, v}; }
    static Limit neg_infinity() { return {Kind::neg_infinity, 0.0}; }
    bool is_finite() const { return kind == Kind::finite; }
};

struct AsymptoticLimits {
    Limit rel_mean_elpdhat;
    Limit rel_mean_elpd;
    Limit rel_mean_error;
    double skew_error;
};

/// n -> infinity limits of mean/sd and error skewness.
inline AsymptoticLimits asymptotic_limits(const OneCovConfig& c) {
    require(c.s_star > 0.0 && c.tau > 0.0, "onecov: s_star and tau must be positive");
    if (c.beta1 == 0.0) {
        const double v = c.tau * c.tau / (std::numbers::sqrt2 * c.s_star * c.s_star);
        return {Limit::finite(v), Limit::finite(v), Limit::finite(0.0), -2.0 * std::numbers::sqrt2};
    }
    return {Limit::neg_infinity(), Limit::neg_infinity(), Limit::finite(0.0), 0.0};
}

/// Mean over sd of the exact finite-n moments.
inline double relative_mean(const PartialMoments& m) { return m.mean / std::sqrt(m.variance); }

/// Generic-machinery instance: x alternates +1, -1 and the outlier sits at index 0 (x = +1).
struct Instance {
    ComparisonSpec spec;
    DataGeneratingProcess dgp;
};

inline Instance build_instance(const OneCovConfig& c) {
    c.validate();
    const Index n = c.n;
    Mat X(n, 2);
    for (Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = (i % 2 == 0) ? 1.0 : -1.0;
    }
    Vec beta(2);
    beta << 0.0, c.beta1;
    Vec mu = Vec::Zero(n);
    mu(0) = c.m_star;
    return {ComparisonSpec(X, {0}, {0, 1}, TauMode::fixed(c.tau * c.tau)),
            DataGeneratingProcess(X, beta, GaussianLaw::isotropic(mu, c.s_star))};
}

}  // namespace loocvlab::onecov
