#pragma once

#include <Eigen/Dense>
#include <boost/random/normal_distribution.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"

namespace loocvlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Z = eps' A eps + b' eps + c.
struct QuadraticForm {
    Mat A;
    Vec b;
    double c = 0.0;

    QuadraticForm() = default;
    QuadraticForm(Mat A_, Vec b_, double c_) : A(std::move(A_)), b(std::move(b_)), c(c_) {
        require(A.rows() == A.cols(), "quadratic form: A must be square");
        require(A.rows() == b.size(), "quadratic form: A and b dimensions differ");
        require(A.allFinite() && b.allFinite() && std::isfinite(c), "quadratic form: non-finite entry");
    }

    Eigen::Index dim() const { return b.size(); }

    QuadraticForm operator-(const QuadraticForm& o) const {
        require(dim() == o.dim(), "quadratic form: dimension mismatch");
        return {A - o.A, b - o.b, c - o.c};
    }
};

/// eps ~ N(mu_star, sigma_star) with a cached symmetric square root.
class GaussianLaw {
public:
    GaussianLaw(Vec mu_star, Mat sigma_star) : mu_(std::move(mu_star)), sigma_(std::move(sigma_star)) {
        const auto n = mu_.size();
        require(sigma_.rows() == n && sigma_.cols() == n, "gaussian law: covariance dimension mismatch");
        require(mu_.allFinite() && sigma_.allFinite(), "gaussian law: non-finite entry");
        const double scale = std::max(sigma_.cwiseAbs().maxCoeff(), 1e-300);
        if ((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw numerical_error("gaussian law: covariance is not symmetric");
        sigma_ = 0.5 * (sigma_ + sigma_.transpose());

        const bool diagonal = (sigma_ - Mat(sigma_.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
        if (diagonal) {
            if ((sigma_.diagonal().array() <= 0.0).any())
                throw numerical_error("gaussian law: covariance is not positive definite");
            sqrt_ = sigma_.diagonal().cwiseSqrt().asDiagonal();
        } else {
            Eigen::SelfAdjointEigenSolver<Mat> es(sigma_);
            if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
                throw numerical_error("gaussian law: covariance is not positive definite");
            sqrt_ = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
        }
        diagonal_ = diagonal;
    }

    static GaussianLaw isotropic(Vec mu_star, double s_star) {
        const auto n = mu_star.size();
        return {std::move(mu_star), Mat::Identity(n, n) * (s_star * s_star)};
    }

    Eigen::Index dim() const { return mu_.size(); }
    const Vec& mu_star() const { return mu_; }
    const Mat& sigma_star() const { return sigma_; }
    const Mat& sqrt_sigma() const { return sqrt_; }
    bool diagonal() const { return diagonal_; }
    Vec sigma_diag_sqrt() const { return sigma_.diagonal().cwiseSqrt(); }

private:
    Vec mu_;
    Mat sigma_;
    Mat sqrt_;
    bool diagonal_ = false;
};

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
    double third_central = 0.0;
    std::optional<double> skewness;  // empty when variance == 0
};

inline std::optional<double> skewness_of(double variance, double third) {
    if (!(variance > 0.0)) return std::nullopt;
    return third / std::pow(variance, 1.5);
}

struct SpectralForm {
    std::vector<double> lambdas;
    std::vector<double> noncentral_means;
    double constant = 0.0;

    /// Moments of sum_i lambda_i g_i^2 + d with g_i ~ N(mu_i, 1).
    Moments moments() const {
        Moments m;
        m.mean = constant;
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            const double l = lambdas[i], u2 = noncentral_means[i] * noncentral_means[i];
            m.mean += l * (1.0 + u2);
            m.variance += 2.0 * l * l * (1.0 + 2.0 * u2);
            m.third_central += 8.0 * l * l * l * (1.0 + 3.0 * u2);
        }
        m.skewness = skewness_of(m.variance, m.third_central);
        return m;
    }
};

inline double evaluate(const QuadraticForm& qf, const Vec& eps) {
    require(eps.size() == qf.dim(), "evaluate: dimension mismatch");
    return eps.dot(qf.A * eps) + qf.b.dot(eps) + qf.c;
}

inline Mat symmetrized(const Mat& A) { return 0.5 * (A + A.transpose()); }

namespace detail {

inline Mat whiten(const Mat& As, const GaussianLaw& law) {
    if (law.diagonal()) {
        const Vec s = law.sigma_diag_sqrt();
        return s.asDiagonal() * As * s.asDiagonal();
    }
    return law.sqrt_sigma() * As * law.sqrt_sigma();
}

}  // namespace detail

inline Moments moments(const QuadraticForm& qf, const GaussianLaw& law) {
    require(qf.dim() == law.dim(), "moments: dimension mismatch");
    const Mat As = symmetrized(qf.A);
    const Mat At = detail::whiten(As, law);
    const Vec& mu = law.mu_star();
    const Mat& S = law.sigma_star();

    // Linear coefficient of the centred variable, a = b + 2 A mu.
    const Vec a = qf.b + 2.0 * (As * mu);
    const Vec Sa = S * a;

    Moments m;
    m.mean = At.trace() + qf.c + qf.b.dot(mu) + mu.dot(As * mu);
    m.variance = 2.0 * At.squaredNorm() + a.dot(Sa);
    const Mat At2 = At * At;
    m.third_central = 8.0 * At2.cwiseProduct(At).sum() + 6.0 * Sa.dot(As * Sa);
    if (m.variance < 0.0) m.variance = 0.0;
    m.skewness = skewness_of(m.variance, m.third_central);
    return m;
}

inline constexpr double kZeroEigenRelTol = 1e-10;

inline SpectralForm spectral_form(const QuadraticForm& qf, const GaussianLaw& law) {
    require(qf.dim() == law.dim(), "spectral_form: dimension mismatch");
    const Mat As = symmetrized(qf.A);
    const Mat At = detail::whiten(As, law);
    const Vec& mu = law.mu_star();

    Vec bt = law.sqrt_sigma() * (qf.b + 2.0 * (As * mu));
    const double ct = qf.c + qf.b.dot(mu) + mu.dot(As * mu);

    Eigen::SelfAdjointEigenSolver<Mat> es(At);
    if (es.info() != Eigen::Success) throw numerical_error("spectral_form: eigendecomposition failed");
    const Vec& lam = es.eigenvalues();
    const Vec proj = es.eigenvectors().transpose() * bt;
    const double lmax = lam.cwiseAbs().maxCoeff();
    const double cut = kZeroEigenRelTol * lmax;

    SpectralForm sf;
    sf.constant = ct;
    double null_part = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lmax == 0.0 || std::abs(lam(i)) <= cut) {
            null_part += proj(i) * proj(i);
            continue;
        }
        sf.lambdas.push_back(lam(i));
        sf.noncentral_means.push_back(proj(i) / (2.0 * lam(i)));
        sf.constant -= 0.25 * proj(i) * proj(i) / lam(i);
    }
    const double bnorm = bt.norm();
    if (std::sqrt(null_part) > 1e-8 * std::max(1.0, bnorm)) {
        throw numerical_error(sf.lambdas.empty()
                                  ? "spectral_form: pure linear form"
                                  : "spectral_form: linear term outside the range of the quadratic part");
    }
    return sf;
}

/// Draws of Z with eps = mu + Sigma^{1/2} z.
template <class Gen>
std::vector<double> sample(const QuadraticForm& qf, const GaussianLaw& law, std::size_t n_draws, Gen& rng) {
    require(qf.dim() == law.dim(), "sample: dimension mismatch");
    require(n_draws >= 1, "sample: n_draws must be positive");
    boost::random::normal_distribution<double> normal;
    const auto n = qf.dim();
    std::vector<double> out(n_draws);
    Vec z(n), eps(n);
    for (std::size_t k = 0; k < n_draws; ++k) {
        for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
        eps.noalias() = law.mu_star() + law.sqrt_sigma() * z;
        out[k] = evaluate(qf, eps);
    }
    return out;
}

}  // namespace loocvlab
