#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "loocvlab/quadform.hpp"

namespace testutil {

using loocvlab::Mat;
using loocvlab::Vec;

inline Mat random_matrix(long r, long c, std::mt19937_64& g) {
    std::normal_distribution<double> N;
    Mat M(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) M(i, j) = N(g);
    return M;
}

inline Vec random_vector(long n, std::mt19937_64& g) { return random_matrix(n, 1, g); }

inline Mat random_spd(long n, std::mt19937_64& g) {
    const Mat B = random_matrix(n, n, g);
    return B * B.transpose() / static_cast<double>(n) + 0.5 * Mat::Identity(n, n);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

struct SampleStats {
    double mean, var, third;
    double se_mean, se_var, se_third;
};

/// Sample central moments with delta-method standard errors.
inline SampleStats sample_stats(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double m = 0;
    for (double v : x) m += v;
    m /= n;
    double m2 = 0, m3 = 0, m4 = 0, m6 = 0;
    for (double v : x) {
        const double d = v - m, d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        m6 += d2 * d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    m6 /= n;
    SampleStats s;
    s.mean = m;
    s.var = m2;
    s.third = m3;
    s.se_mean = std::sqrt(m2 / n);
    s.se_var = std::sqrt((m4 - m2 * m2) / n);
    // Var of the third central moment estimator, first order.
    s.se_third = std::sqrt((m6 - m3 * m3 - 6.0 * m4 * m2 + 9.0 * m2 * m2 * m2) / n);
    return s;
}

/// Leave-one-out log densities by refitting with the explicit normal-equation inverse.
inline Vec refit_loo(const Vec& y, const Mat& Xk, double tau2) {
    const long n = y.size();
    Vec out(n);
    for (long i = 0; i < n; ++i) {
        Mat Xm(n - 1, Xk.cols());
        Vec ym(n - 1);
        for (long j = 0, r = 0; j < n; ++j) {
            if (j == i) continue;
            Xm.row(r) = Xk.row(j);
            ym(r++) = y(j);
        }
        const Mat inv = (Xm.transpose() * Xm).inverse();
        const Vec beta = inv * Xm.transpose() * ym;
        const double mu = Xk.row(i).dot(beta);
        const double var = tau2 * (1.0 + Xk.row(i) * inv * Xk.row(i).transpose());
        out(i) = -0.5 * (y(i) - mu) * (y(i) - mu) / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
    }
    return out;
}

}  // namespace testutil
