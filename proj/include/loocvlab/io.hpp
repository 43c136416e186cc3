#pragma once

#include <json.hpp>

#include <charconv>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "quadform.hpp"
#include "sim.hpp"

namespace loocvlab::io {

/// Shortest round-trip decimal, locale independent.
inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_field(fields[i]);
    os << "\r\n";
}

/// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
inline std::vector<std::vector<std::string>> read_csv(std::istream& is) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    char c;
    auto end_row = [&] {
        row.push_back(field);
        field.clear();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(row);
        row.clear();
        any = false;
    };
    while (is.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (is.peek() == '"') {
                    field += '"';
                    is.get();
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(field);
            field.clear();
        } else if (c == '\r') {
            if (is.peek() == '\n') is.get();
            end_row();
        } else if (c == '\n') {
            end_row();
        } else {
            field += c;
        }
    }
    if (quoted) throw invalid_input("csv: unterminated quoted field");
    if (any || !field.empty() || !row.empty()) end_row();
    return rows;
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw invalid_input("csv: bad number '" + s + "'");
    return v;
}

/// Headerless numeric matrix, one row per line.
inline Mat read_matrix_csv(std::istream& is) {
    const auto rows = read_csv(is);
    require(!rows.empty(), "design csv: empty file");
    Mat X(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].size() == rows[0].size(), "design csv: ragged rows");
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            X(static_cast<Index>(i), static_cast<Index>(j)) = parse_double(rows[i][j]);
    }
    return X;
}

inline const std::vector<std::string>& trial_columns() {
    static const std::vector<std::string> cols{"n",          "beta_delta", "mu_out",  "trial_id", "elpdhat",
                                               "se_hat",     "elpd_target", "error",  "pit_normal", "pit_bb",
                                               "bb_mean",    "bb_sd",      "prob_a_better"};
    return cols;
}

inline void write_trials_csv(std::ostream& os, const std::vector<sim::TrialRecord>& recs) {
    write_row(os, trial_columns());
    for (const auto& r : recs) {
        write_row(os, {std::to_string(r.n), fmt_double(r.beta_delta), fmt_double(r.mu_out), std::to_string(r.trial_id),
                       fmt_double(r.elpdhat), fmt_double(r.se_hat), fmt_double(r.elpd_target), fmt_double(r.error),
                       fmt_double(r.pit_normal), fmt_double(r.pit_bb), fmt_double(r.bb_mean), fmt_double(r.bb_sd),
                       fmt_double(r.prob_a_better)});
    }
}

inline std::vector<sim::TrialRecord> read_trials_csv(std::istream& is) {
    const auto rows = read_csv(is);
    require(!rows.empty(), "trials csv: missing header");
    const auto& header = rows[0];
    std::vector<std::size_t> idx;
    for (const auto& name : trial_columns()) {
        auto it = std::find(header.begin(), header.end(), name);
        require(it != header.end(), "trials csv: missing column " + name);
        idx.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    std::vector<sim::TrialRecord> out;
    for (std::size_t k = 1; k < rows.size(); ++k) {
        const auto& row = rows[k];
        require(row.size() == header.size(), "trials csv: ragged row");
        auto get = [&](std::size_t c) { return parse_double(row[idx[c]]); };
        sim::TrialRecord r;
        r.n = static_cast<long>(get(0));
        r.beta_delta = get(1);
        r.mu_out = get(2);
        r.trial_id = static_cast<std::uint64_t>(get(3));
        r.elpdhat = get(4);
        r.se_hat = get(5);
        r.elpd_target = get(6);
        r.error = get(7);
        r.pit_normal = get(8);
        r.pit_bb = get(9);
        r.bb_mean = get(10);
        r.bb_sd = get(11);
        r.prob_a_better = get(12);
        out.push_back(r);
    }
    return out;
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const Moments& m) {
    return {{"mean", m.mean}, {"variance", m.variance}, {"third_central", m.third_central}, {"skewness", opt_json(m.skewness)}};
}

inline nlohmann::json to_json(const sim::SampleMoments& m) {
    return {{"mean", m.mean}, {"sd", m.sd}, {"skew", opt_json(m.skew)}};
}

inline nlohmann::json to_json(const sim::CellSummary& s) {
    nlohmann::json lo = nlohmann::json::array(), hi = nlohmann::json::array();
    for (const auto& b : s.band) {
        lo.push_back(b.lo);
        hi.push_back(b.hi);
    }
    return {{"n", s.n},
            {"beta_delta", s.beta_delta},
            {"mu_out", s.mu_out},
            {"trials", s.trials},
            {"skipped", s.skipped},
            {"elpdhat", to_json(s.elpdhat)},
            {"elpd", to_json(s.elpd)},
            {"error", to_json(s.error)},
            {"corr_elpdhat_elpd", s.corr},
            {"se_ratio", {{"median", opt_json(s.se_ratio_median)}, {"q25", opt_json(s.se_ratio_q25)}, {"q75", opt_json(s.se_ratio_q75)}}},
            {"rel_error", {{"mean", opt_json(s.rel_error_mean)}, {"median", opt_json(s.rel_error_median)}}},
            {"ks_normal", s.ks_normal},
            {"ks_bb", s.ks_bb},
            {"pit_normal_counts", s.pit_normal_counts},
            {"pit_bb_counts", s.pit_bb_counts},
            {"band_lo", lo},
            {"band_hi", hi}};
}

inline nlohmann::json to_json(const std::vector<sim::CellSummary>& cells) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cells) arr.push_back(to_json(c));
    return {{"cells", arr}};
}

inline std::string join_counts(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
}

inline void write_summary_csv(std::ostream& os, const std::vector<sim::CellSummary>& cells) {
    write_row(os, {"n", "beta_delta", "mu_out", "trials", "skipped", "elpdhat_mean", "elpdhat_sd", "elpdhat_skew",
                   "elpd_mean", "elpd_sd", "elpd_skew", "error_mean", "error_sd", "error_skew", "corr_elpdhat_elpd",
                   "se_ratio_median", "se_ratio_q25", "se_ratio_q75", "rel_error_mean", "rel_error_median",
                   "ks_normal", "ks_bb", "pit_normal_counts", "pit_bb_counts", "band_lo", "band_hi"});
    auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
    for (const auto& s : cells) {
        std::vector<std::size_t> lo, hi;
        for (const auto& b : s.band) {
            lo.push_back(b.lo);
            hi.push_back(b.hi);
        }
        write_row(os, {std::to_string(s.n), fmt_double(s.beta_delta), fmt_double(s.mu_out), std::to_string(s.trials),
                       std::to_string(s.skipped), fmt_double(s.elpdhat.mean), fmt_double(s.elpdhat.sd),
                       opt(s.elpdhat.skew), fmt_double(s.elpd.mean), fmt_double(s.elpd.sd), opt(s.elpd.skew),
                       fmt_double(s.error.mean), fmt_double(s.error.sd), opt(s.error.skew), fmt_double(s.corr),
                       opt(s.se_ratio_median), opt(s.se_ratio_q25), opt(s.se_ratio_q75), opt(s.rel_error_mean),
                       opt(s.rel_error_median), fmt_double(s.ks_normal), fmt_double(s.ks_bb),
                       join_counts(s.pit_normal_counts), join_counts(s.pit_bb_counts), join_counts(lo),
                       join_counts(hi)});
    }
}

}  // namespace loocvlab::io
