#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "loocvlab/io.hpp"
#include "loocvlab/linreg.hpp"
#include "loocvlab/onecov.hpp"
#include "loocvlab/quadform.hpp"
#include "loocvlab/sim.hpp"

namespace {

using namespace loocvlab;
namespace fs = std::filesystem;

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("LOOCVLAB_SEED")) {
        try {
            std::size_t pos = 0;
            const auto v = std::stoull(env, &pos);
            if (pos == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw invalid_input("LOOCVLAB_SEED is not an unsigned integer");
    }
    return 1;
}

TauMode parse_tau_mode(const std::string& mode, double tau) {
    if (mode == "fixed") return TauMode::fixed(tau * tau);
    if (mode == "unknown") return TauMode::unknown();
    throw invalid_input("--tau-mode must be fixed or unknown");
}

Cols parse_cols(const std::vector<long>& v) { return Cols(v.begin(), v.end()); }

struct MomentsArgs {
    long n = 0;
    std::string design = "onecov";
    std::string x_file;
    std::vector<long> model_a, model_b;
    std::vector<double> beta;
    double beta_delta = 0.0;
    double mu_out = 0.0;
    double s_star = 1.0;
    double tau = 1.0;
    std::string covariates = "stochastic";
    std::optional<std::uint64_t> seed;
};

int cmd_moments(const MomentsArgs& a) {
    Mat X;
    Cols ca, cb;
    Vec beta;
    if (!a.x_file.empty()) {
        std::ifstream in(a.x_file);
        require(static_cast<bool>(in), "cannot open " + a.x_file);
        X = io::read_matrix_csv(in);
        require(!a.model_a.empty() && !a.model_b.empty(), "--x-file needs --model-a and --model-b");
        require(static_cast<Index>(a.beta.size()) == X.cols(), "--beta must list one coefficient per column");
        ca = parse_cols(a.model_a);
        cb = parse_cols(a.model_b);
        beta = Eigen::Map<const Vec>(a.beta.data(), static_cast<Index>(a.beta.size()));
    } else if (a.design == "onecov") {
        require(a.n >= 4 && a.n % 2 == 0, "--n must be even and at least 4 for the one-covariate design");
        const auto inst = onecov::build_instance({a.n, a.beta_delta, a.mu_out, a.s_star, a.tau});
        X = inst.spec.X();
        ca = {0};
        cb = {0, 1};
        beta = inst.dgp.beta;
    } else if (a.design == "sim") {
        require(a.n >= 4, "--n must be at least 4");
        Rng rng = substream({resolve_seed(a.seed), 0x64657369676eULL});
        const auto mode = a.covariates == "fixed" ? sim::CovariateMode::fixed_grid : sim::CovariateMode::stochastic;
        const auto d = sim::generate_dataset(a.n, a.beta_delta, a.mu_out, mode, rng);
        X = d.X;
        ca = sim::model_a_cols();
        cb = sim::model_b_cols();
        beta = d.beta;
    } else {
        throw invalid_input("--design must be onecov or sim");
    }
    Vec mu = Vec::Zero(X.rows());
    if (mu.size() > 0) mu(0) = a.mu_out;
    const ComparisonSpec spec(X, ca, cb, TauMode::fixed(a.tau * a.tau));
    const DataGeneratingProcess dgp(X, beta, GaussianLaw::isotropic(mu, a.s_star));
    nlohmann::json out = {{"n", X.rows()},
                          {"elpd", io::to_json(moments(elpd_diff_form(spec, dgp), dgp.law))},
                          {"loocv", io::to_json(moments(loocv_diff_form(spec, dgp.beta), dgp.law))},
                          {"error", io::to_json(moments(error_form(spec, dgp), dgp.law))}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

double rel_dev(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

int cmd_oracle(const std::vector<long>& ns, double perturb) {
    double worst = 0.0;
    for (long n : ns) require(n >= 4 && n % 2 == 0, "--n must be even and at least 4");
    for (long n : ns)
        for (double b : {0.0, 0.5, -1.5})
            for (double m : {0.0, 2.0, -3.0})
                for (double s : {1.0, 0.7}) {
                    const onecov::OneCovConfig cfg{n, b, m, s, 1.3};
                    const auto inst = onecov::build_instance(cfg);
                    const Moments ge = moments(elpd_diff_form(inst.spec, inst.dgp), inst.dgp.law);
                    const Moments gl = moments(loocv_diff_form(inst.spec, inst.dgp.beta), inst.dgp.law);
                    const Moments gr = moments(error_form(inst.spec, inst.dgp), inst.dgp.law);
                    const auto e = onecov::elpd_moments(cfg);
                    const auto l = onecov::loocv_moments(cfg);
                    Moments r = onecov::error_moments(cfg);
                    r.variance *= 1.0 + perturb;
                    const double dev = std::max({rel_dev(e.mean, ge.mean), rel_dev(e.variance, ge.variance),
                                                 rel_dev(l.mean, gl.mean), rel_dev(l.variance, gl.variance),
                                                 rel_dev(r.mean, gr.mean), rel_dev(r.variance, gr.variance),
                                                 rel_dev(r.third_central, gr.third_central)});
                    worst = std::max(worst, dev);
                    std::cerr << "n=" << n << " beta1=" << b << " m_star=" << m << " s_star=" << s
                              << " max_rel_dev=" << dev << "\n";
                }
    nlohmann::json out = {{"max_rel_deviation", worst}, {"tolerance", 1e-8}, {"pass", worst < 1e-8}};
    std::cout << out.dump(2) << "\n";
    return worst < 1e-8 ? 0 : 1;
}

void write_outputs(const fs::path& dir, const std::vector<sim::TrialRecord>* recs,
                   const std::vector<sim::CellSummary>& summary) {
    fs::create_directories(dir);
    if (recs) {
        std::ofstream t(dir / "trials.csv", std::ios::binary);
        io::write_trials_csv(t, *recs);
    }
    std::ofstream sc(dir / "summary.csv", std::ios::binary);
    io::write_summary_csv(sc, summary);
    std::ofstream sj(dir / "summary.json", std::ios::binary);
    sj << io::to_json(summary).dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loocvlab: uncertainty of LOO-CV model comparison in normal linear regression"};
    app.require_subcommand(1);

    MomentsArgs ma;
    auto* mom = app.add_subcommand("moments", "Exact moments of the elpd, LOO-CV and error difference forms");
    mom->add_option("--n", ma.n, "Number of observations");
    mom->add_option("--design", ma.design, "onecov or sim")->check(CLI::IsMember({"onecov", "sim"}));
    mom->add_option("--x-file", ma.x_file, "Headerless CSV design matrix (intercept column included)");
    mom->add_option("--model-a", ma.model_a, "Column indices of model A")->delimiter(',');
    mom->add_option("--model-b", ma.model_b, "Column indices of model B")->delimiter(',');
    mom->add_option("--beta", ma.beta, "Coefficients, one per design column")->delimiter(',');
    mom->add_option("--beta-delta", ma.beta_delta, "Non-shared covariate effect");
    mom->add_option("--mu-out", ma.mu_out, "Outlier mean of the first residual");
    mom->add_option("--s-star", ma.s_star, "Residual sd")->check(CLI::PositiveNumber);
    mom->add_option("--tau", ma.tau, "Model sd")->check(CLI::PositiveNumber);
    mom->add_option("--covariates", ma.covariates, "stochastic or fixed")->check(CLI::IsMember({"stochastic", "fixed"}));
    mom->add_option("--seed", ma.seed, "Seed for a generated design");

    std::vector<long> oracle_ns{4, 8, 16, 64};
    double perturb = 0.0;
    auto* ora = app.add_subcommand("oracle", "Cross-check closed-form one-covariate moments against the generic forms");
    ora->add_option("--n", oracle_ns, "Sizes to check")->delimiter(',');
    ora->add_option("--perturb", perturb, "Relative perturbation of one closed-form constant");

    sim::ExperimentConfig cfg;
    std::string tau_mode = "unknown", covariates = "stochastic", out_dir = ".";
    double tau = 1.0;
    std::optional<std::uint64_t> seed;
    std::size_t bins = 20;
    cfg.workers = std::max(1u, std::thread::hardware_concurrency());
    auto* simc = app.add_subcommand("simulate", "Run the Monte Carlo experiment");
    simc->add_option("--n", cfg.n_list, "Dataset sizes")->delimiter(',');
    simc->add_option("--beta-delta", cfg.beta_delta_list, "Non-shared covariate effects")->delimiter(',');
    simc->add_option("--mu-out", cfg.mu_out, "Outlier mean of the first residual");
    simc->add_option("--trials", cfg.n_trials, "Trials per cell");
    simc->add_option("--test-sets", cfg.n_test_sets, "Test sets per trial");
    simc->add_option("--kfold", cfg.kfold, "Use K-fold CV with K folds instead of LOO");
    simc->add_option("--tau-mode", tau_mode, "unknown or fixed")->check(CLI::IsMember({"unknown", "fixed"}));
    simc->add_option("--tau", tau, "Model sd in fixed mode")->check(CLI::PositiveNumber);
    simc->add_option("--covariates", covariates, "stochastic or fixed")->check(CLI::IsMember({"stochastic", "fixed"}));
    simc->add_option("--bb-draws", cfg.bb_draws, "Bayesian bootstrap draws per trial");
    simc->add_option("--bins", bins, "PIT histogram bins");
    simc->add_option("--seed", seed, "Master seed (falls back to LOOCVLAB_SEED)");
    simc->add_option("--workers", cfg.workers, "Worker threads");
    simc->add_option("--out-dir", out_dir, "Directory for trials.csv, summary.csv, summary.json");

    std::string trials_csv;
    std::string report_out;
    std::size_t report_bins = 20;
    auto* rep = app.add_subcommand("report", "Summarize an existing trials.csv");
    rep->add_option("--trials-csv", trials_csv, "Input trials.csv")->required();
    rep->add_option("--bins", report_bins, "PIT histogram bins");
    rep->add_option("--out-dir", report_out, "Write summary.csv and summary.json here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        std::cerr << app.help();
        return kExitInvalid;
    }

    try {
        if (*mom) {
            if (ma.x_file.empty() && ma.n == 0) {
                std::cerr << "error: --n is required without --x-file\n" << mom->help();
                return kExitInvalid;
            }
            return cmd_moments(ma);
        }
        if (*ora) return cmd_oracle(oracle_ns, perturb);
        if (*simc) {
            cfg.tau_mode = parse_tau_mode(tau_mode, tau);
            cfg.covariates = covariates == "fixed" ? sim::CovariateMode::fixed_grid : sim::CovariateMode::stochastic;
            cfg.seed = resolve_seed(seed);
            require(bins >= 2, "--bins must be at least 2");
            cfg.validate();
            const auto res = sim::run_experiment(cfg, [](const sim::Cell& c, std::size_t skips) {
                std::cerr << "cell n=" << c.n << " beta_delta=" << c.beta_delta << " mu_out=" << c.mu_out
                          << " done, skipped=" << skips << "\n";
            });
            const auto summary = sim::summarize(res.records, {bins, 0.99}, res.skipped);
            write_outputs(out_dir, &res.records, summary);
            std::cout << io::to_json(summary).dump(2) << "\n";
            return 0;
        }
        if (*rep) {
            std::ifstream in(trials_csv, std::ios::binary);
            require(static_cast<bool>(in), "cannot open " + trials_csv);
            require(report_bins >= 2, "--bins must be at least 2");
            const auto recs = io::read_trials_csv(in);
            const auto summary = sim::summarize(recs, {report_bins, 0.99});
            if (!report_out.empty()) write_outputs(report_out, nullptr, summary);
            std::cout << io::to_json(summary).dump(2) << "\n";
            return 0;
        }
    } catch (const invalid_input& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
