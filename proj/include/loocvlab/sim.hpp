#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/binomial.hpp>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "estimators.hpp"
#include "linreg.hpp"
#include "rng.hpp"

namespace loocvlab::sim {

enum class CovariateMode { stochastic, fixed_grid };

struct ExperimentConfig {
    std::vector<long> n_list{16, 32, 64, 128, 256, 512};
    std::vector<double> beta_delta_list{0.0};
    double mu_out = 0.0;
    std::size_t n_trials = 2000;
    std::size_t n_test_sets = 4000;
    TauMode tau_mode = TauMode::unknown();
    long kfold = 0;  // 0 selects LOO
    CovariateMode covariates = CovariateMode::stochastic;
    std::uint64_t seed = 1;
    std::size_t bb_draws = 2000;
    std::size_t workers = 1;

    void validate() const {
        require(!n_list.empty() && !beta_delta_list.empty(), "experiment: empty grid");
        require(n_trials >= 2, "experiment: need at least two trials");
        require(n_test_sets >= 1, "experiment: need at least one test set");
        require(bb_draws >= 1, "experiment: need at least one bootstrap draw");
        require(std::isfinite(mu_out), "experiment: non-finite outlier");
        for (long n : n_list) require(n >= 4, "experiment: n must be at least 4");
        for (double b : beta_delta_list) require(std::isfinite(b), "experiment: non-finite beta_delta");
        if (kfold != 0) {
            require(kfold >= 2, "experiment: K must be at least 2");
            require(kfold <= *std::min_element(n_list.begin(), n_list.end()), "experiment: K exceeds smallest n");
        }
    }
};

struct Cell {
    long n;
    double beta_delta;
    double mu_out;
};

inline std::uint64_t cell_key(const Cell& c) {
    return derive_key({static_cast<std::uint64_t>(c.n), double_bits(c.beta_delta), double_bits(c.mu_out)});
}

struct Dataset {
    Mat X;
    Vec beta;
    Vec mu_star;
    Vec eps;
    Vec y;
};

/// X = [1, X2, X3], beta = [0, 1, beta_delta], eps ~ N((mu_out, 0, ...), I).
template <class Gen>
Dataset generate_dataset(long n, double beta_delta, double mu_out, CovariateMode mode, Gen& rng) {
    require(n >= 4, "generate_dataset: n must be at least 4");
    boost::random::normal_distribution<double> normal;
    Dataset d;
    d.X.resize(n, 3);
    for (Index i = 0; i < n; ++i) {
        d.X(i, 0) = 1.0;
        d.X(i, 1) = mode == CovariateMode::fixed_grid ? -1.0 + 2.0 * static_cast<double>(i + 1) / static_cast<double>(n)
                                                      : normal(rng);
        d.X(i, 2) = normal(rng);
    }
    d.beta.resize(3);
    d.beta << 0.0, 1.0, beta_delta;
    d.mu_star = Vec::Zero(n);
    d.mu_star(0) = mu_out;
    d.eps.resize(n);
    for (Index i = 0; i < n; ++i) d.eps(i) = d.mu_star(i) + normal(rng);
    d.y = d.X * d.beta + d.eps;
    return d;
}

inline const Cols& model_a_cols() {
    static const Cols c{0, 1};
    return c;
}
inline const Cols& model_b_cols() {
    static const Cols c{0, 1, 2};
    return c;
}

struct TrialRecord {
    long n = 0;
    double beta_delta = 0.0;
    double mu_out = 0.0;
    std::uint64_t trial_id = 0;
    double elpdhat = 0.0;
    double se_hat = 0.0;
    double elpd_target = 0.0;
    double error = 0.0;
    double pit_normal = 0.0;
    double pit_bb = 0.0;
    double bb_mean = 0.0;
    double bb_sd = 0.0;
    double prob_a_better = 0.0;
};

/// Per-purpose substreams of one trial.
struct TrialStreams {
    Rng data, folds, test, bb;
};

inline TrialStreams trial_streams(std::uint64_t seed, const Cell& cell, std::uint64_t trial_id) {
    const std::uint64_t base = derive_key({seed, cell_key(cell), trial_id});
    return {substream({base, 1}), substream({base, 2}), substream({base, 3}), substream({base, 4})};
}

/// Pointwise LOO (or K-fold) differences elpdhat_A,i - elpdhat_B,i.
template <class Gen>
Vec pointwise_diffs(const Vec& y, const Mat& X, const ExperimentConfig& cfg, Gen& fold_rng) {
    const Mat Xa = select_columns(X, model_a_cols());
    const Mat Xb = select_columns(X, model_b_cols());
    if (cfg.kfold == 0) return pointwise_loo(y, Xa, cfg.tau_mode) - pointwise_loo(y, Xb, cfg.tau_mode);
    const auto folds = kfold_assignment(y.size(), cfg.kfold, fold_rng);
    return pointwise_folds(y, Xa, folds, cfg.tau_mode) - pointwise_folds(y, Xb, folds, cfg.tau_mode);
}

/// One simulated dataset; empty on a rank-deficient fit.
inline std::optional<TrialRecord> run_trial(const ExperimentConfig& cfg, const Cell& cell, std::uint64_t trial_id) {
    TrialStreams st = trial_streams(cfg.seed, cell, trial_id);
    const Dataset d = generate_dataset(cell.n, cell.beta_delta, cell.mu_out, cfg.covariates, st.data);
    try {
        const Vec diffs = pointwise_diffs(d.y, d.X, cfg, st.folds);
        const ComparisonSpec spec(d.X, model_a_cols(), model_b_cols(), cfg.tau_mode);
        const TestSetScorer scorer(d.y, spec, Target::Diff);

        const Vec mean_true = d.X * d.beta + d.mu_star;
        boost::random::normal_distribution<double> normal;
        std::vector<double> ytilde(static_cast<std::size_t>(cell.n));
        double total = 0.0;
        for (std::size_t t = 0; t < cfg.n_test_sets; ++t) {
            for (Index i = 0; i < cell.n; ++i) ytilde[static_cast<std::size_t>(i)] = mean_true(i) + normal(st.test);
            total += scorer.score(ytilde.data(), cell.n);
        }

        TrialRecord r;
        r.n = cell.n;
        r.beta_delta = cell.beta_delta;
        r.mu_out = cell.mu_out;
        r.trial_id = trial_id;
        const NormalApprox approx = normal_uncertainty(diffs);
        r.elpdhat = approx.center;
        r.se_hat = approx.scale;
        r.elpd_target = total / static_cast<double>(cfg.n_test_sets);
        r.error = r.elpdhat - r.elpd_target;
        r.pit_normal = pit(approx, r.elpd_target);
        r.prob_a_better = prob_a_better(approx);
        const BBSample bb = bb_uncertainty(diffs, cfg.bb_draws, st.bb);
        r.pit_bb = pit(bb, r.elpd_target);
        const Eigen::Map<const Vec> draws(bb.draws.data(), static_cast<Index>(bb.draws.size()));
        r.bb_mean = draws.mean();
        r.bb_sd = bb.draws.size() > 1 ? std::sqrt((draws.array() - r.bb_mean).square().sum() /
                                                  static_cast<double>(bb.draws.size() - 1))
                                      : 0.0;
        return r;
    } catch (const numerical_error&) {
        return std::nullopt;
    }
}

struct ExperimentResult {
    std::vector<TrialRecord> records;  // ordered by (n, beta_delta, trial_id)
    std::map<std::pair<long, double>, std::size_t> skipped;
};

inline std::vector<Cell> cells_of(const ExperimentConfig& cfg) {
    std::vector<long> ns = cfg.n_list;
    std::vector<double> bs = cfg.beta_delta_list;
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    std::sort(bs.begin(), bs.end());
    bs.erase(std::unique(bs.begin(), bs.end()), bs.end());
    std::vector<Cell> cells;
    for (long n : ns)
        for (double b : bs) cells.push_back({n, b, cfg.mu_out});
    return cells;
}

/// Runs every cell; trials in a cell are shared out to cfg.workers threads.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(const Cell&, std::size_t)>& on_cell = {}) {
    cfg.validate();
    ExperimentResult res;
    for (const Cell& cell : cells_of(cfg)) {
        std::vector<std::optional<TrialRecord>> slots(cfg.n_trials);
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        auto work = [&] {
            for (std::size_t t; (t = next.fetch_add(1)) < cfg.n_trials;) {
                try {
                    slots[t] = run_trial(cfg, cell, t);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                    next = cfg.n_trials;
                }
            }
        };
        const std::size_t nw = std::max<std::size_t>(1, std::min(cfg.workers, cfg.n_trials));
        if (nw == 1) {
            work();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < nw; ++w) pool.emplace_back(work);
            for (auto& th : pool) th.join();
        }
        if (failure) std::rethrow_exception(failure);
        std::size_t skips = 0;
        for (auto& s : slots) {
            if (s) res.records.push_back(*s);
            else ++skips;
        }
        res.skipped[{cell.n, cell.beta_delta}] = skips;
        if (on_cell) on_cell(cell, skips);
    }
    return res;
}

/// Bias-corrected weighted central moments (unit weights by default).
struct SampleMoments {
    double mean = 0.0;
    double sd = 0.0;
    std::optional<double> skew;
};

inline SampleMoments weighted_moments(const std::vector<double>& x, const std::vector<double>& w = {}) {
    require(x.size() >= 2, "weighted_moments: need at least two values");
    const bool unit = w.empty();
    require(unit || w.size() == x.size(), "weighted_moments: weight count mismatch");
    double V1 = 0, V2 = 0, V3 = 0, sx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double wi = unit ? 1.0 : w[i];
        V1 += wi;
        V2 += wi * wi;
        V3 += wi * wi * wi;
        sx += wi * x[i];
    }
    SampleMoments m;
    m.mean = sx / V1;
    double s2 = 0, s3 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double wi = unit ? 1.0 : w[i], d = x[i] - m.mean;
        s2 += wi * d * d;
        s3 += wi * d * d * d;
    }
    const double m2 = V1 / (V1 * V1 - V2) * s2;
    m.sd = std::sqrt(std::max(m2, 0.0));
    const double den3 = V1 * V1 * V1 - 3.0 * V1 * V2 + 2.0 * V3;
    if (m2 > 0.0 && den3 > 0.0) m.skew = V1 * V1 / den3 * s3 / std::pow(m2, 1.5);
    return m;
}

inline double quantile(std::vector<double> v, double p) {
    require(!v.empty(), "quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
inline double ks_uniform(std::vector<double> u) {
    require(!u.empty(), "ks_uniform: empty sample");
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d = std::max(d, static_cast<double>(i + 1) / n - u[i]);
        d = std::max(d, u[i] - static_cast<double>(i) / n);
    }
    return d;
}

struct Band {
    std::size_t lo;
    std::size_t hi;
};

/// Pointwise central binomial(n_trials, 1/n_bins) interval per bin.
inline std::vector<Band> calibration_bands(std::size_t n_trials, std::size_t n_bins, double level) {
    require(n_bins >= 2, "calibration_bands: need at least two bins");
    require(level > 0.0 && level <= 1.0, "calibration_bands: level must be in (0, 1]");
    const double tail = 0.5 * (1.0 - level);
    std::size_t lo = 0, hi = n_trials;
    if (tail > 0.0) {
        const boost::math::binomial_distribution<double> binom(static_cast<double>(n_trials), 1.0 / static_cast<double>(n_bins));
        lo = static_cast<std::size_t>(boost::math::quantile(binom, tail));
        hi = static_cast<std::size_t>(boost::math::quantile(boost::math::complement(binom, tail)));
    }
    return std::vector<Band>(n_bins, Band{lo, hi});
}

inline std::vector<std::size_t> histogram(const std::vector<double>& u, std::size_t n_bins) {
    std::vector<std::size_t> counts(n_bins, 0);
    for (double v : u) {
        auto k = static_cast<std::size_t>(std::floor(v * static_cast<double>(n_bins)));
        counts[std::min(k, n_bins - 1)]++;
    }
    return counts;
}

struct CellSummary {
    long n = 0;
    double beta_delta = 0.0;
    double mu_out = 0.0;
    std::size_t trials = 0;
    std::size_t skipped = 0;
    SampleMoments elpdhat, elpd, error;
    double corr = 0.0;
    std::optional<double> se_ratio_median, se_ratio_q25, se_ratio_q75;
    std::optional<double> rel_error_mean, rel_error_median;
    double ks_normal = 0.0, ks_bb = 0.0;
    std::vector<std::size_t> pit_normal_counts, pit_bb_counts;
    std::vector<Band> band;
};

struct SummaryOptions {
    std::size_t n_bins = 20;
    double level = 0.99;
};

inline CellSummary summarize_cell(const std::vector<TrialRecord>& recs, const SummaryOptions& opt) {
    require(recs.size() >= 2, "summarize: need at least two records per cell");
    CellSummary s;
    s.n = recs.front().n;
    s.beta_delta = recs.front().beta_delta;
    s.mu_out = recs.front().mu_out;
    s.trials = recs.size();
    std::vector<double> eh, el, er, pn, pb, se;
    for (const auto& r : recs) {
        eh.push_back(r.elpdhat);
        el.push_back(r.elpd_target);
        er.push_back(r.error);
        pn.push_back(r.pit_normal);
        pb.push_back(r.pit_bb);
        se.push_back(r.se_hat);
    }
    s.elpdhat = weighted_moments(eh);
    s.elpd = weighted_moments(el);
    s.error = weighted_moments(er);
    s.corr = pearson(eh, el);
    if (s.error.sd > 0.0) {
        std::vector<double> ratio;
        for (double v : se) ratio.push_back(v / s.error.sd);
        s.se_ratio_median = quantile(ratio, 0.5);
        s.se_ratio_q25 = quantile(ratio, 0.25);
        s.se_ratio_q75 = quantile(ratio, 0.75);
    }
    if (s.elpd.sd > 0.0) {
        std::vector<double> rel;
        for (double v : er) rel.push_back(v / s.elpd.sd);
        double m = 0.0;
        for (double v : rel) m += v;
        s.rel_error_mean = m / static_cast<double>(rel.size());
        s.rel_error_median = quantile(rel, 0.5);
    }
    s.ks_normal = ks_uniform(pn);
    s.ks_bb = ks_uniform(pb);
    s.pit_normal_counts = histogram(pn, opt.n_bins);
    s.pit_bb_counts = histogram(pb, opt.n_bins);
    s.band = calibration_bands(recs.size(), opt.n_bins, opt.level);
    return s;
}

/// One summary per (mu_out, n, beta_delta) cell in sorted order.
inline std::vector<CellSummary> summarize(const std::vector<TrialRecord>& records, const SummaryOptions& opt = {},
                                          const std::map<std::pair<long, double>, std::size_t>& skipped = {}) {
    require(!records.empty(), "summarize: no records");
    std::map<std::tuple<double, long, double>, std::vector<TrialRecord>> groups;
    for (const auto& r : records) groups[{r.mu_out, r.n, r.beta_delta}].push_back(r);
    std::vector<CellSummary> out;
    for (const auto& [key, recs] : groups) {
        CellSummary s = summarize_cell(recs, opt);
        if (auto it = skipped.find({s.n, s.beta_delta}); it != skipped.end()) s.skipped = it->second;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace loocvlab::sim
