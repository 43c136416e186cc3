#include "doctest.h"
#include "helpers.hpp"
#include "loocvlab/sim.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cmath>

using namespace loocvlab;
using namespace loocvlab::sim;
using namespace testutil;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.n_list = {16, 24};
    c.beta_delta_list = {0.0, 0.5};
    c.n_trials = 12;
    c.n_test_sets = 50;
    c.bb_draws = 100;
    return c;
}

bool same(const TrialRecord& a, const TrialRecord& b) {
    return a.n == b.n && a.beta_delta == b.beta_delta && a.mu_out == b.mu_out && a.trial_id == b.trial_id &&
           a.elpdhat == b.elpdhat && a.se_hat == b.se_hat && a.elpd_target == b.elpd_target && a.error == b.error &&
           a.pit_normal == b.pit_normal && a.pit_bb == b.pit_bb && a.bb_mean == b.bb_mean && a.bb_sd == b.bb_sd &&
           a.prob_a_better == b.prob_a_better;
}

bool same(const std::vector<TrialRecord>& a, const std::vector<TrialRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same(a[i], b[i])) return false;
    return true;
}

TrialRecord record(double elpdhat, double target, double se, double pn, double pb) {
    TrialRecord r;
    r.n = 16;
    r.elpdhat = elpdhat;
    r.elpd_target = target;
    r.error = elpdhat - target;
    r.se_hat = se;
    r.pit_normal = pn;
    r.pit_bb = pb;
    return r;
}

}  // namespace

TEST_CASE("generate_dataset: residual means, determinism and covariate modes") {
    Rng rng(1);
    const std::size_t R = 4000;
    std::vector<double> first0, first20, other;
    for (std::size_t r = 0; r < R; ++r) {
        first0.push_back(generate_dataset(8, 0.0, 0.0, CovariateMode::stochastic, rng).eps(0));
        const auto d = generate_dataset(8, 0.0, 20.0, CovariateMode::stochastic, rng);
        first20.push_back(d.eps(0));
        other.push_back(d.eps(3));
    }
    const auto s0 = sample_stats(first0), s20 = sample_stats(first20), so = sample_stats(other);
    CHECK(std::abs(s0.mean) < 4 * s0.se_mean);
    CHECK(std::abs(s20.mean - 20.0) < 4 * s20.se_mean);
    CHECK(std::abs(so.mean) < 4 * so.se_mean);

    Rng a(5), b(5);
    const auto da = generate_dataset(10, 0.7, 3.0, CovariateMode::stochastic, a);
    const auto db = generate_dataset(10, 0.7, 3.0, CovariateMode::stochastic, b);
    CHECK(da.X == db.X);
    CHECK(da.y == db.y);
    CHECK((da.y - (da.X * da.beta + da.eps)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(da.beta == (Vec(3) << 0.0, 1.0, 0.7).finished());
    CHECK(da.X.col(0) == Vec::Ones(10));

    Rng c(6);
    const auto dg = generate_dataset(4, 0.0, 0.0, CovariateMode::fixed_grid, c);
    CHECK(dg.X(0, 1) == doctest::Approx(-0.5));
    CHECK(dg.X(3, 1) == doctest::Approx(1.0));
    Rng e(6);
    CHECK_THROWS_AS(generate_dataset(3, 0.0, 0.0, CovariateMode::stochastic, e), invalid_input);
}

TEST_CASE("run_trial: record identities and fixed-tau analytic agreement") {
    ExperimentConfig cfg;
    cfg.tau_mode = TauMode::fixed(1.0);
    cfg.n_test_sets = 4000;
    cfg.bb_draws = 200;
    const Cell cell{20, 0.3, 2.0};
    for (std::uint64_t t = 0; t < 5; ++t) {
        const auto r = run_trial(cfg, cell, t);
        REQUIRE(r.has_value());
        CHECK(r->error == r->elpdhat - r->elpd_target);
        CHECK(r->pit_normal >= 0.0);
        CHECK(r->pit_normal <= 1.0);
        CHECK(r->pit_bb >= 0.0);
        CHECK(r->pit_bb <= 1.0);

        auto st = trial_streams(cfg.seed, cell, t);
        const auto d = generate_dataset(cell.n, cell.beta_delta, cell.mu_out, cfg.covariates, st.data);
        const ComparisonSpec spec(d.X, model_a_cols(), model_b_cols(), cfg.tau_mode);
        const DataGeneratingProcess dgp(d.X, d.beta, GaussianLaw::isotropic(d.mu_star, 1.0));
        CHECK(std::abs(r->elpdhat - evaluate(loocv_diff_form(spec, d.beta), d.eps)) < 1e-8);

        // Spread of a single test-set score, from an unrelated stream.
        const TestSetScorer scorer(d.y, spec, Target::Diff);
        const Vec mean = d.X * d.beta + d.mu_star;
        Rng aux(1000 + t);
        boost::random::normal_distribution<double> N;
        std::vector<double> scores, yt(cell.n);
        for (int k = 0; k < 2000; ++k) {
            for (long i = 0; i < cell.n; ++i) yt[i] = mean(i) + N(aux);
            scores.push_back(scorer.score(yt.data(), cell.n));
        }
        const double se = std::sqrt(sample_stats(scores).var / 4000.0);
        CHECK(std::abs(r->elpd_target - evaluate(elpd_diff_form(spec, dgp), d.eps)) < 4 * se);
    }
}

TEST_CASE("run_trial: large non-shared effect favours the larger model") {
    ExperimentConfig cfg;
    cfg.n_test_sets = 20;
    cfg.bb_draws = 20;
    std::size_t decisive = 0;
    const std::size_t T = 200;
    for (std::uint64_t t = 0; t < T; ++t) {
        const auto r = run_trial(cfg, {128, 10.0, 0.0}, t);
        REQUIRE(r.has_value());
        decisive += r->prob_a_better < 1e-6;
    }
    CHECK(decisive >= 0.99 * T);
}

TEST_CASE("run_experiment: determinism, subsets, worker invariance, counts") {
    auto cfg = small_config();
    const auto r1 = run_experiment(cfg);
    const auto r2 = run_experiment(cfg);
    CHECK(same(r1.records, r2.records));
    CHECK(r1.records.size() == 4 * cfg.n_trials);
    for (const auto& [key, skips] : r1.skipped) CHECK(skips == 0);

    cfg.workers = 3;
    CHECK(same(run_experiment(cfg).records, r1.records));

    auto sub = small_config();
    sub.n_list = {24};
    sub.beta_delta_list = {0.5};
    std::vector<TrialRecord> expect;
    for (const auto& r : r1.records)
        if (r.n == 24 && r.beta_delta == 0.5) expect.push_back(r);
    CHECK(same(run_experiment(sub).records, expect));

    // Rows come out ordered by (n, beta_delta, trial_id).
    for (std::size_t i = 1; i < r1.records.size(); ++i) {
        const auto& a = r1.records[i - 1];
        const auto& b = r1.records[i];
        CHECK(std::tie(a.n, a.beta_delta, a.trial_id) < std::tie(b.n, b.beta_delta, b.trial_id));
    }

    auto other = small_config();
    other.seed = 2;
    CHECK_FALSE(same(run_experiment(other).records, r1.records));
}

TEST_CASE("run_experiment: K = n folds reproduce LOO bit for bit") {
    auto loo = small_config();
    loo.n_list = {16};
    auto kf = loo;
    kf.kfold = 16;
    CHECK(same(run_experiment(loo).records, run_experiment(kf).records));
    kf.kfold = 4;
    CHECK_FALSE(same(run_experiment(loo).records, run_experiment(kf).records));
}

TEST_CASE("config validation") {
    auto c = small_config();
    c.n_trials = 1;
    CHECK_THROWS_AS(run_experiment(c), invalid_input);
    c = small_config();
    c.kfold = 20;
    CHECK_THROWS_AS(run_experiment(c), invalid_input);
    c = small_config();
    c.n_list = {3};
    CHECK_THROWS_AS(run_experiment(c), invalid_input);
    c = small_config();
    c.kfold = 1;
    CHECK_THROWS_AS(run_experiment(c), invalid_input);
}

TEST_CASE("weighted moments: hand-computed values and weight scaling") {
    const auto m = weighted_moments({1.0, 2.0, 4.0});
    CHECK(m.mean == doctest::Approx(7.0 / 3.0));
    CHECK(m.sd == doctest::Approx(std::sqrt(7.0 / 3.0)));
    REQUIRE(m.skew.has_value());
    // Unbiased third moment n/((n-1)(n-2)) sum d^3 = 10/3.
    CHECK(*m.skew == doctest::Approx((10.0 / 3.0) / std::pow(7.0 / 3.0, 1.5)));
    const auto w = weighted_moments({1.0, 2.0, 4.0}, {2.0, 2.0, 2.0});
    CHECK(w.mean == doctest::Approx(m.mean));
    CHECK(w.sd == doctest::Approx(m.sd));
    CHECK(*w.skew == doctest::Approx(*m.skew));
    const auto c = weighted_moments({3.0, 3.0, 3.0});
    CHECK(c.sd == 0.0);
    CHECK_FALSE(c.skew.has_value());
}

TEST_CASE("quantile, pearson and ks") {
    CHECK(quantile({3.0, 1.0, 2.0, 4.0}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({3.0, 1.0, 2.0, 4.0}, 0.25) == doctest::Approx(1.75));
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(ks_uniform({0.5}) == doctest::Approx(0.5));
    CHECK(ks_uniform({0.125, 0.375, 0.625, 0.875}) == doctest::Approx(0.125));
}

TEST_CASE("calibration bands") {
    const auto b = calibration_bands(2000, 20, 0.99);
    REQUIRE(b.size() == 20);
    CHECK(b[0].lo < 100);
    CHECK(b[0].hi > 100);
    const auto full = calibration_bands(2000, 20, 1.0);
    CHECK(full[0].lo == 0);
    CHECK(full[0].hi == 2000);
    CHECK_THROWS_AS(calibration_bands(2000, 1, 0.99), invalid_input);

    // Coverage under uniform PITs.
    Rng rng(7);
    std::uniform_real_distribution<double> U;
    std::size_t outside = 0, total = 0;
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<double> u(2000);
        for (double& v : u) v = U(rng);
        for (std::size_t k = 0; k < 20; ++k) {
            const auto cnt = histogram(u, 20)[k];
            outside += cnt < b[k].lo || cnt > b[k].hi;
            ++total;
        }
    }
    CHECK(static_cast<double>(outside) / static_cast<double>(total) <= 0.015);
}

TEST_CASE("summarize: degenerate errors, synthetic records, counts") {
    std::vector<TrialRecord> same_err{record(1.0, 0.5, 0.2, 0.1, 0.2), record(2.0, 1.5, 0.3, 0.6, 0.7),
                                      record(3.0, 2.5, 0.4, 0.99, 0.5)};
    const auto s = summarize(same_err);
    REQUIRE(s.size() == 1);
    CHECK(s[0].error.sd == 0.0);
    CHECK_FALSE(s[0].se_ratio_median.has_value());
    CHECK(s[0].rel_error_mean.has_value());
    CHECK(s[0].corr == doctest::Approx(1.0));

    std::vector<TrialRecord> recs{record(1.0, 0.0, 1.0, 0.05, 0.5), record(0.0, 2.0, 2.0, 0.5, 0.5),
                                  record(3.0, 1.0, 3.0, 0.96, 0.5), record(-1.0, 1.0, 4.0, 1.0, 0.5)};
    const auto t = summarize(recs, {4, 0.99}).at(0);
    // Errors 1, -2, 2, -2: mean -0.25, sample sd sqrt(12.75/3).
    const double sd = std::sqrt(12.75 / 3.0);
    CHECK(t.error.mean == doctest::Approx(-0.25));
    CHECK(t.error.sd == doctest::Approx(sd));
    CHECK(*t.se_ratio_median == doctest::Approx(2.5 / sd));
    // Targets 0, 2, 1, 1: sample sd sqrt(2/3).
    CHECK(*t.rel_error_mean == doctest::Approx(-0.25 / std::sqrt(2.0 / 3.0)));
    CHECK(*t.rel_error_median == doctest::Approx(-0.5 / std::sqrt(2.0 / 3.0)));
    CHECK(t.pit_normal_counts == std::vector<std::size_t>{1, 0, 1, 2});
    CHECK(t.pit_bb_counts == std::vector<std::size_t>{0, 0, 4, 0});
    std::size_t total = 0;
    for (auto c : t.pit_normal_counts) total += c;
    CHECK(total == recs.size());

    CHECK_THROWS_AS(summarize({}), invalid_input);
    CHECK_THROWS_AS(summarize({record(1, 0, 1, 0.5, 0.5)}), invalid_input);
}

TEST_CASE("summarize: cells are split by mu_out, n and beta_delta") {
    auto cfg = small_config();
    const auto res = run_experiment(cfg);
    const auto cells = summarize(res.records, {}, res.skipped);
    REQUIRE(cells.size() == 4);
    for (const auto& c : cells) {
        CHECK(c.trials == cfg.n_trials);
        std::size_t total = 0;
        for (auto k : c.pit_bb_counts) total += k;
        CHECK(total == cfg.n_trials);
    }
}

TEST_CASE("run_trial: fixed-tau mean error matches the analytic expectation over the same designs") {
    ExperimentConfig cfg;
    cfg.tau_mode = TauMode::fixed(1.0);
    cfg.n_test_sets = 200;
    cfg.bb_draws = 10;
    const Cell cell{16, 0.0, 0.0};
    std::vector<double> errors;
    double analytic = 0.0;
    const std::size_t T = 2000;
    for (std::uint64_t t = 0; t < T; ++t) {
        const auto r = run_trial(cfg, cell, t);
        REQUIRE(r.has_value());
        errors.push_back(r->error);
        auto st = trial_streams(cfg.seed, cell, t);
        const auto d = generate_dataset(cell.n, cell.beta_delta, cell.mu_out, cfg.covariates, st.data);
        const ComparisonSpec spec(d.X, model_a_cols(), model_b_cols(), cfg.tau_mode);
        const DataGeneratingProcess dgp(d.X, d.beta, GaussianLaw::isotropic(d.mu_star, 1.0));
        analytic += moments(error_form(spec, dgp), dgp.law).mean;
    }
    analytic /= static_cast<double>(T);
    const auto s = sample_stats(errors);
    CHECK(std::abs(s.mean - analytic) < 4 * s.se_mean);
    // The same-design target leaves a positive bias at small n.
    CHECK(analytic > 0.1);
}
