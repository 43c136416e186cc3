#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

#include "error.hpp"
#include "quadform.hpp"

namespace loocvlab {

using Index = Eigen::Index;
using Cols = std::vector<Index>;

inline constexpr double kRankRelTol = 1e-10;

/// Fixed model variance tau^2, or unknown with a uniform prior on (beta, log tau).
class TauMode {
public:
    static TauMode fixed(double tau2) {
        require(std::isfinite(tau2) && tau2 > 0.0, "tau mode: tau^2 must be positive");
        return TauMode(tau2);
    }
    static TauMode unknown() { return TauMode(std::nullopt); }

    bool is_fixed() const { return tau2_.has_value(); }
    double tau2() const {
        require(is_fixed(), "tau mode: tau^2 requested in unknown mode");
        return *tau2_;
    }

private:
    explicit TauMode(std::optional<double> t) : tau2_(t) {}
    std::optional<double> tau2_;
};

inline Mat select_columns(const Mat& X, const Cols& cols) {
    Mat out(X.rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = X.col(cols[j]);
    return out;
}

inline Mat select_rows(const Mat& X, const std::vector<Index>& rows) {
    Mat out(static_cast<Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(rows[i]);
    return out;
}

inline Cols complement(const Cols& cols, Index d) {
    Cols out;
    for (Index j = 0; j < d; ++j)
        if (!std::binary_search(cols.begin(), cols.end(), j)) out.push_back(j);
    return out;
}

/// Least-squares fit through a thin QR with a singular-value rank check.
class LeastSquares {
public:
    explicit LeastSquares(const Mat& X) : qr_(X) {
        if (X.rows() < X.cols() || X.cols() == 0) throw numerical_error("rank-deficient design");
        R_ = qr_.matrixQR().topRows(X.cols()).triangularView<Eigen::Upper>();
        Eigen::JacobiSVD<Mat> svd(R_);
        const Vec& s = svd.singularValues();
        if (!(s(s.size() - 1) > kRankRelTol * s(0))) throw numerical_error("rank-deficient design");
    }

    Vec coef(const Vec& y) const { return qr_.solve(y); }

    /// x (X'X)^{-1} x' for a row vector x.
    double leverage(const Eigen::RowVectorXd& x) const {
        const Vec w = R_.transpose().triangularView<Eigen::Lower>().solve(x.transpose());
        return w.squaredNorm();
    }

    /// Thin orthonormal basis of the column space.
    Mat basis() const {
        return qr_.householderQ() * Mat::Identity(qr_.rows(), qr_.cols());
    }

private:
    Eigen::HouseholderQR<Mat> qr_;
    Mat R_;
};

inline Mat projection(const Mat& Xk) {
    const Mat Q = LeastSquares(Xk).basis();
    return Q * Q.transpose();
}

/// Per-point predictive: normal (dof empty) or Student-t.
struct PosteriorPredictive {
    Vec loc;
    Vec scale;
    std::optional<double> dof;

    double log_density(Index i, double y) const {
        const double z = (y - loc(i)) / scale(i);
        if (!dof) return -0.5 * z * z - std::log(scale(i)) - 0.5 * std::log(2.0 * std::numbers::pi);
        const double nu = *dof;
        return boost::math::lgamma(0.5 * (nu + 1.0)) - boost::math::lgamma(0.5 * nu) -
               0.5 * std::log(nu * std::numbers::pi) - std::log(scale(i)) -
               0.5 * (nu + 1.0) * std::log1p(z * z / nu);
    }
};

/// Predictive at rows of Xnew from a fit to (Xtrain, ytrain).
inline PosteriorPredictive fit_predictive(const Mat& Xtrain, const Vec& ytrain, const Mat& Xnew, const TauMode& tau) {
    const LeastSquares ls(Xtrain);
    const Vec beta = ls.coef(ytrain);
    PosteriorPredictive p;
    p.loc = Xnew * beta;
    p.scale.resize(Xnew.rows());
    double s2 = 0.0;
    if (tau.is_fixed()) {
        s2 = tau.tau2();
    } else {
        const double dof = static_cast<double>(Xtrain.rows() - Xtrain.cols());
        if (!(dof >= 1.0)) throw invalid_input("unknown tau: insufficient degrees of freedom");
        s2 = (ytrain - Xtrain * beta).squaredNorm() / dof;
        if (!(s2 > 0.0)) throw numerical_error("unknown tau: zero residual variance");
        p.dof = dof;
    }
    for (Index i = 0; i < Xnew.rows(); ++i) p.scale(i) = std::sqrt(s2 * (1.0 + ls.leverage(Xnew.row(i))));
    return p;
}

/// Log predictive densities for each observation when its fold is held out.
inline Vec pointwise_folds(const Vec& y, const Mat& Xk, const std::vector<std::vector<Index>>& folds, const TauMode& tau) {
    const Index n = y.size();
    require(Xk.rows() == n, "pointwise: X and y dimensions differ");
    Vec out = Vec::Constant(n, std::numeric_limits<double>::quiet_NaN());
    std::vector<char> held(static_cast<std::size_t>(n), 0);
    for (const auto& fold : folds) {
        require(!fold.empty(), "pointwise: empty fold");
        for (Index i : fold) {
            require(i >= 0 && i < n, "pointwise: fold index out of range");
            require(std::isnan(out(i)), "pointwise: observation left out twice");
            held[static_cast<std::size_t>(i)] = 1;
        }
        std::vector<Index> train;
        train.reserve(static_cast<std::size_t>(n));
        for (Index j = 0; j < n; ++j)
            if (!held[static_cast<std::size_t>(j)]) train.push_back(j);
        std::vector<Index> test(fold.begin(), fold.end());
        std::sort(test.begin(), test.end());
        const Mat Xt = select_rows(Xk, train);
        Vec yt(static_cast<Index>(train.size()));
        for (std::size_t r = 0; r < train.size(); ++r) yt(static_cast<Index>(r)) = y(train[r]);
        const PosteriorPredictive p = fit_predictive(Xt, yt, select_rows(Xk, test), tau);
        for (std::size_t r = 0; r < test.size(); ++r) out(test[r]) = p.log_density(static_cast<Index>(r), y(test[r]));
        for (Index i : fold) held[static_cast<std::size_t>(i)] = 0;
    }
    require(!out.hasNaN(), "pointwise: folds must leave out every observation exactly once");
    return out;
}

inline Vec pointwise_loo(const Vec& y, const Mat& Xk, const TauMode& tau) {
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(y.size()));
    for (Index i = 0; i < y.size(); ++i) folds[static_cast<std::size_t>(i)] = {i};
    return pointwise_folds(y, Xk, folds, tau);
}

/// Shuffled contiguous blocks with sizes differing by at most one.
template <class Gen>
std::vector<std::vector<Index>> kfold_assignment(Index n, Index K, Gen& rng) {
    require(K >= 2 && K <= n, "kfold: need 2 <= K <= n");
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(K));
    Index start = 0;
    for (Index k = 0; k < K; ++k) {
        const Index size = n / K + (k < n % K ? 1 : 0);
        folds[static_cast<std::size_t>(k)].assign(perm.begin() + start, perm.begin() + start + size);
        start += size;
    }
    return folds;
}

template <class Gen>
Vec pointwise_kfold(const Vec& y, const Mat& Xk, Index K, Gen& rng, const TauMode& tau) {
    return pointwise_folds(y, Xk, kfold_assignment(y.size(), K, rng), tau);
}

struct DataGeneratingProcess {
    Mat X;
    Vec beta;
    GaussianLaw law;

    DataGeneratingProcess(Mat X_, Vec beta_, GaussianLaw law_)
        : X(std::move(X_)), beta(std::move(beta_)), law(std::move(law_)) {
        require(X.rows() >= 4, "data generating process: n must be at least 4");
        require(X.cols() >= 1, "data generating process: need at least one covariate");
        require(beta.size() == X.cols(), "data generating process: beta dimension mismatch");
        require(law.dim() == X.rows(), "data generating process: law dimension mismatch");
    }
};

enum class Which { A, B };

class ComparisonSpec {
public:
    ComparisonSpec(Mat X, Cols d_A, Cols d_B, TauMode tau)
        : X_(std::move(X)), dA_(std::move(d_A)), dB_(std::move(d_B)), tau_(tau) {
        for (Cols* c : {&dA_, &dB_}) {
            require(!c->empty(), "comparison: empty covariate set");
            std::sort(c->begin(), c->end());
            require(std::adjacent_find(c->begin(), c->end()) == c->end(), "comparison: duplicate covariate index");
            require(c->front() >= 0 && c->back() < X_.cols(), "comparison: covariate index out of range");
        }
        require(dA_ != dB_, "comparison: models must differ in at least one covariate");
        for (const Cols* c : {&dA_, &dB_}) {
            const Vec h = LeastSquares(select_columns(X_, *c)).basis().rowwise().squaredNorm();
            for (Index i = 0; i < h.size(); ++i)
                if (!(1.0 - h(i) > kRankRelTol)) throw numerical_error("comparison: leave-one-out design is rank-deficient");
        }
    }

    const Mat& X() const { return X_; }
    const Cols& cols(Which w) const { return w == Which::A ? dA_ : dB_; }
    const TauMode& tau() const { return tau_; }
    Mat design(Which w) const { return select_columns(X_, cols(w)); }

private:
    Mat X_;
    Cols dA_, dB_;
    TauMode tau_;
};

struct ModelForms {
    QuadraticForm elpd;
    QuadraticForm loocv;
};

namespace detail {

inline double fixed_tau2(const ComparisonSpec& spec) {
    if (!spec.tau().is_fixed()) throw invalid_input("analytic forms require fixed tau");
    return spec.tau().tau2();
}

/// Contribution of the covariates a model leaves out.
inline Vec excluded_mean(const ComparisonSpec& spec, const Vec& beta, Which w) {
    const Cols out = complement(spec.cols(w), spec.X().cols());
    Vec yhat = Vec::Zero(spec.X().rows());
    for (Index j : out) yhat += spec.X().col(j) * beta(j);
    return yhat;
}

inline QuadraticForm elpd_form(const ComparisonSpec& spec, const DataGeneratingProcess& dgp, Which w) {
    const double tau2 = fixed_tau2(spec);
    const Index n = spec.X().rows();
    const Mat Q = LeastSquares(spec.design(w)).basis();
    const Vec h = Q.rowwise().squaredNorm();
    const Vec D = (1.0 + h.array()).inverse();
    const Vec yhat = excluded_mean(spec, dgp.beta, w);

    // Predictive minus true mean is P eps + g.
    const Vec g = Q * (Q.transpose() * yhat) - yhat - dgp.law.mu_star();
    const Mat QtD = Q.transpose() * D.asDiagonal();
    const Mat core = QtD * Q;
    Mat A = -(0.5 / tau2) * (Q * core * Q.transpose());
    Vec b = -(1.0 / tau2) * (Q * (QtD * g));
    const Vec sig2 = dgp.law.sigma_star().diagonal();
    double c = -(0.5 / tau2) * (g.dot(D.asDiagonal() * g) + D.dot(sig2)) + 0.5 * D.array().log().sum() -
               0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * tau2);
    return {std::move(A), std::move(b), c};
}

inline QuadraticForm loocv_form(const ComparisonSpec& spec, const Vec& beta, Which w) {
    const double tau2 = fixed_tau2(spec);
    const Index n = spec.X().rows();
    const Mat Q = LeastSquares(spec.design(w)).basis();
    const Vec keep = 1.0 - Q.rowwise().squaredNorm().array();  // diagonal of D-tilde
    const Vec yhat = excluded_mean(spec, beta, w);

    // LOO residuals are diag(1/keep) (I - P) y, so M = (I - P) diag(1/keep) (I - P).
    const Vec wt = keep.cwiseInverse();
    const Mat QtW = Q.transpose() * wt.asDiagonal();
    const Mat PW = Q * QtW;
    Mat M = Q * (QtW * Q) * Q.transpose() - PW - PW.transpose();
    M.diagonal() += wt;
    const Vec My = M * yhat;
    Mat A = -(0.5 / tau2) * M;
    Vec b = -(1.0 / tau2) * My;
    double c = -(0.5 / tau2) * yhat.dot(My) + 0.5 * keep.array().log().sum() -
               0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * tau2);
    return {std::move(A), std::move(b), c};
}

}  // namespace detail

inline ModelForms single_model_forms(const ComparisonSpec& spec, const DataGeneratingProcess& dgp, Which w) {
    require(spec.X().rows() == dgp.X.rows() && spec.X().cols() == dgp.X.cols(), "forms: spec and dgp designs differ");
    return {detail::elpd_form(spec, dgp, w), detail::loocv_form(spec, dgp.beta, w)};
}

inline QuadraticForm elpd_diff_form(const ComparisonSpec& spec, const DataGeneratingProcess& dgp) {
    return detail::elpd_form(spec, dgp, Which::A) - detail::elpd_form(spec, dgp, Which::B);
}

/// Does not depend on the residual law; beta enters through the left-out covariates.
inline QuadraticForm loocv_diff_form(const ComparisonSpec& spec, const Vec& beta) {
    require(beta.size() == spec.X().cols(), "loocv form: beta dimension mismatch");
    return detail::loocv_form(spec, beta, Which::A) - detail::loocv_form(spec, beta, Which::B);
}

inline QuadraticForm error_form(const ComparisonSpec& spec, const DataGeneratingProcess& dgp) {
    return loocv_diff_form(spec, dgp.beta) - elpd_diff_form(spec, dgp);
}

enum class Target { A, B, Diff };

/// Scores test sets drawn at the training design against the full-data predictives.
class TestSetScorer {
public:
    TestSetScorer(const Vec& y_train, const ComparisonSpec& spec, Target which) : which_(which) {
        require(y_train.size() == spec.X().rows(), "test-set scorer: dimension mismatch");
        if (which != Target::B) a_ = Model(fit_predictive(spec.design(Which::A), y_train, spec.design(Which::A), spec.tau()));
        if (which != Target::A) b_ = Model(fit_predictive(spec.design(Which::B), y_train, spec.design(Which::B), spec.tau()));
    }

    /// sum_i log p_k(ytilde_i | y_train) for one test set.
    double score(const double* ytilde, Index n) const {
        double total = 0.0;
        if (which_ != Target::B) total += a_.sum(ytilde, n);
        if (which_ != Target::A) total -= b_.sum(ytilde, n);
        return total;
    }

private:
    struct Model {
        Vec loc, inv_scale, constant;
        double nu = 0.0;  // 0 for normal
        Model() = default;
        explicit Model(const PosteriorPredictive& p) : loc(p.loc), inv_scale(p.scale.cwiseInverse()) {
            constant.resize(loc.size());
            for (Index i = 0; i < loc.size(); ++i) constant(i) = p.log_density(i, loc(i));
            if (p.dof) nu = *p.dof;
        }
        double sum(const double* y, Index n) const {
            double s = 0.0;
            if (nu == 0.0) {
                for (Index i = 0; i < n; ++i) {
                    const double z = (y[i] - loc(i)) * inv_scale(i);
                    s += constant(i) - 0.5 * z * z;
                }
            } else {
                const double h = 0.5 * (nu + 1.0), inv_nu = 1.0 / nu;
                for (Index i = 0; i < n; ++i) {
                    const double z = (y[i] - loc(i)) * inv_scale(i);
                    s += constant(i) - h * std::log1p(z * z * inv_nu);
                }
            }
            return s;
        }
    };
    Target which_;
    Model a_, b_;
};

/// Mean over test sets of sum_i log p_k(ytilde_i | y_train); rows of test_sets are test sets.
inline double elpd_test_estimate(const Vec& y_train, const ComparisonSpec& spec, const Mat& test_sets, Target which) {
    require(test_sets.rows() >= 1, "elpd_test_estimate: empty test-set list");
    require(test_sets.cols() == y_train.size() && y_train.size() == spec.X().rows(),
            "elpd_test_estimate: dimension mismatch");
    const TestSetScorer scorer(y_train, spec, which);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = test_sets;
    double total = 0.0;
    for (Index t = 0; t < rows.rows(); ++t) total += scorer.score(rows.row(t).data(), rows.cols());
    return total / static_cast<double>(rows.rows());
}

}  // namespace loocvlab
