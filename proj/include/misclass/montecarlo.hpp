#pragma once

// Replicated simulation studies: run estimators over scenario grids, stream
// per-replication records, and summarize bias, spread and coverage.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "misclass/data.hpp"
#include "misclass/error.hpp"
#include "misclass/estimators.hpp"
#include "misclass/mla.hpp"
#include "misclass/rng.hpp"
#include "misclass/simulate.hpp"

namespace misclass {

struct StudyConfig {
    std::vector<ScenarioConfig> grid;
    std::vector<EstimatorKind> estimators;
    std::size_t replications = 500;
    std::uint64_t master_seed = 0;
    unsigned workers = 1;
    std::string output_path;
    /// MLA uses the nondifferential error model (misspecification study).
    bool nondifferential_mla = false;
    int mi_imputations = 200;
    /// Fill fit_millis; off by default so record files are reproducible.
    bool record_timing = false;

    void validate() const;
};

struct ReplicationRecord {
    std::size_t cell = 0;
    std::string label;
    ScenarioConfig scenario;
    std::size_t replication = 0;
    EstimatorKind estimator = EstimatorKind::Naive;
    std::string term;
    double estimate = kMissing;
    double std_error = kMissing;
    double ci_low = kMissing;
    double ci_high = kMissing;
    double true_value = 0.0;
    bool covered = false;
    bool converged = false;
    double fit_millis = kMissing;
    std::string error; ///< error code when the fit threw
};

struct SummaryRow {
    std::size_t cell = 0;
    std::string label;
    EstimatorKind estimator = EstimatorKind::Naive;
    std::string term;
    double true_value = 0.0;
    std::size_t n_ok = 0;
    std::size_t n_failed = 0;
    double mean_estimate = kMissing;
    double bias = kMissing;
    double sd_estimate = kMissing;
    double mc_se = kMissing; ///< Monte Carlo standard error of the mean
    double q025 = kMissing;
    double q975 = kMissing;
    double coverage = kMissing;
    double mean_ci_width = kMissing;
};

struct StudySummary {
    std::vector<SummaryRow> rows; ///< ordered by cell, estimator, term

    const SummaryRow* find(std::size_t cell, EstimatorKind k, const std::string& term) const {
        for (const auto& r : rows) {
            if (r.cell == cell && r.estimator == k && r.term == term) return &r;
        }
        return nullptr;
    }
};

/// Terms recorded for every fit.
inline const std::vector<std::string>& recorded_terms() {
    static const std::vector<std::string> terms{kInterceptName, "x", "z"};
    return terms;
}

/// Stable, human-readable key for a grid cell.
inline std::string cell_label(const ScenarioConfig& c) {
    std::ostringstream os;
    os << to_string(c.scenario) << "/n=" << c.n_obs << "/m=" << c.n_annotated
       << "/acc=" << format_number(c.target_accuracy) << "/sys=" << format_number(c.systematic_coefficient)
       << "/g0=" << format_number(c.p_x_intercept) << "/g1=" << format_number(c.zx_coefficient)
       << "/s2=" << format_number(c.sigma2_extra) << "/b0=" << format_number(c.b0);
    if (c.binary_z) os << "/binz";
    return os.str();
}

inline void StudyConfig::validate() const {
    if (replications < 1) fail(ErrorCode::InvalidConfig, "replications must be at least 1");
    if (estimators.empty()) fail(ErrorCode::InvalidConfig, "no estimators requested");
    if (grid.empty()) fail(ErrorCode::InvalidConfig, "empty scenario grid");
    if (mi_imputations < 1) fail(ErrorCode::InvalidConfig, "mi_imputations must be at least 1");
    std::set<std::string> labels;
    for (const auto& c : grid) {
        c.validate();
        if (!labels.insert(cell_label(c)).second) fail(ErrorCode::InvalidConfig, "duplicate grid cell " + cell_label(c));
    }
}

// ---------------------------------------------------------------------------
// Records CSV

inline const std::vector<std::string>& record_columns() {
    static const std::vector<std::string> cols{
        "cell",       "label",       "scenario",   "n_obs",    "n_annotated", "target_accuracy",
        "systematic_coefficient",    "p_x_intercept",          "zx_coefficient", "sigma2_extra",
        "b0",         "b_x",         "b_z",        "r_squared", "binary_z",   "replication",
        "estimator",  "term",        "estimate",   "std_error", "ci_low",     "ci_high",
        "true_value", "covered",     "converged",  "fit_millis", "error"};
    return cols;
}

inline void write_record_header(std::ostream& out) {
    const auto& cols = record_columns();
    for (std::size_t j = 0; j < cols.size(); ++j) out << (j ? "," : "") << cols[j];
    out << '\n';
}

inline void write_record(std::ostream& out, const ReplicationRecord& r) {
    const auto& s = r.scenario;
    out << r.cell << ',' << r.label << ',' << to_string(s.scenario) << ',' << s.n_obs << ',' << s.n_annotated << ','
        << format_number(s.target_accuracy) << ',' << format_number(s.systematic_coefficient) << ','
        << format_number(s.p_x_intercept) << ',' << format_number(s.zx_coefficient) << ','
        << format_number(s.sigma2_extra) << ',' << format_number(s.b0) << ',' << format_number(s.b_x) << ','
        << format_number(s.b_z) << ',' << format_number(s.r_squared) << ',' << (s.binary_z ? 1 : 0) << ','
        << r.replication << ',' << to_string(r.estimator) << ',' << r.term << ',' << format_number(r.estimate) << ','
        << format_number(r.std_error) << ',' << format_number(r.ci_low) << ',' << format_number(r.ci_high) << ','
        << format_number(r.true_value) << ',' << (r.covered ? 1 : 0) << ',' << (r.converged ? 1 : 0) << ','
        << format_number(r.fit_millis) << ',' << r.error << '\n';
}

namespace detail {

inline double parse_number_cell(const std::string& cell, std::size_t line, const std::string& column) {
    return parse_cell(cell, line, column);
}

inline std::size_t parse_count(const std::string& cell, std::size_t line, const std::string& column) {
    const double v = parse_cell(cell, line, column);
    if (is_missing(v) || v < 0 || v != std::floor(v)) {
        fail(ErrorCode::ParseError, "expected a count in column '" + column + "' at row " + std::to_string(line));
    }
    return static_cast<std::size_t>(v);
}

} // namespace detail

inline std::vector<ReplicationRecord> read_records(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::HeaderError, "empty records file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    for (auto c : detail::split_commas(line)) header.emplace_back(detail::trim(c));
    if (header != record_columns()) fail(ErrorCode::HeaderError, "records header does not match the expected columns");

    std::vector<ReplicationRecord> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        for (auto c : detail::split_commas(line)) cells.emplace_back(detail::trim(c));
        if (cells.size() != header.size()) {
            fail(ErrorCode::RaggedRows, "records row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells");
        }
        auto num = [&](std::size_t j) { return detail::parse_number_cell(cells[j], row, header[j]); };
        auto cnt = [&](std::size_t j) { return detail::parse_count(cells[j], row, header[j]); };
        ReplicationRecord r;
        r.cell = cnt(0);
        r.label = cells[1];
        const auto sc = parse_scenario(cells[2]);
        if (!sc) fail(ErrorCode::ParseError, "unknown scenario '" + cells[2] + "' at row " + std::to_string(row));
        r.scenario.scenario = *sc;
        r.scenario.n_obs = cnt(3);
        r.scenario.n_annotated = cnt(4);
        r.scenario.target_accuracy = num(5);
        r.scenario.systematic_coefficient = num(6);
        r.scenario.p_x_intercept = num(7);
        r.scenario.zx_coefficient = num(8);
        r.scenario.sigma2_extra = num(9);
        r.scenario.b0 = num(10);
        r.scenario.b_x = num(11);
        r.scenario.b_z = num(12);
        r.scenario.r_squared = num(13);
        r.scenario.binary_z = cnt(14) != 0;
        r.replication = cnt(15);
        const auto k = parse_estimator(cells[16]);
        if (!k) fail(ErrorCode::ParseError, "unknown estimator '" + cells[16] + "' at row " + std::to_string(row));
        r.estimator = *k;
        r.term = cells[17];
        r.estimate = num(18);
        r.std_error = num(19);
        r.ci_low = num(20);
        r.ci_high = num(21);
        r.true_value = num(22);
        r.covered = cnt(23) != 0;
        r.converged = cnt(24) != 0;
        r.fit_millis = num(25);
        r.error = cells[26];
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Running

/// Main-model family implied by the scenario family.
inline Family scenario_family(Scenario s) {
    return covariate_family(s) ? Family::GaussianIdentity : Family::BernoulliLogit;
}

/// Runs all estimators on one replication and returns its records.
inline std::vector<ReplicationRecord> run_replication(const StudyConfig& config, std::size_t cell,
                                                      const ScenarioConfig& base, std::size_t rep) {
    ScenarioConfig scenario = base;
    scenario.seed = rng::derive_seed(config.master_seed, {static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep)});
    const GeneratedData data = generate(scenario);
    const JointModelSpec spec = JointModelSpec::defaults(data.frame.spec(), scenario_family(scenario.scenario));
    const std::string label = cell_label(base);
    const auto truth = base.truth();

    std::vector<ReplicationRecord> out;
    for (EstimatorKind kind : config.estimators) {
        EstimatorOptions options;
        options.seed = rng::derive_seed(scenario.seed, {0x6573ULL, static_cast<std::uint64_t>(kind)});
        options.mi_imputations = config.mi_imputations;
        options.nondifferential_error = config.nondifferential_mla && kind == EstimatorKind::MLA;

        std::optional<FitResult> fit;
        std::string error;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fit = fit_estimator(kind, data.frame, spec, options);
        } catch (const Error& e) {
            error = std::string(to_string(e.code()));
        }
        const double millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        for (const auto& [term, value] : truth) {
            ReplicationRecord r;
            r.cell = cell;
            r.label = label;
            r.scenario = base;
            r.scenario.calibration.reset();
            r.replication = rep;
            r.estimator = kind;
            r.term = term;
            r.true_value = value;
            r.error = error;
            if (config.record_timing) r.fit_millis = millis;
            if (fit) {
                const auto k = static_cast<Eigen::Index>(*fit->index_of(term));
                r.estimate = fit->estimates[k];
                r.std_error = fit->std_errors[k];
                r.ci_low = fit->ci_low[k];
                r.ci_high = fit->ci_high[k];
                r.converged = fit->converged && std::isfinite(r.estimate) && std::isfinite(r.std_error);
                r.covered = r.converged && r.ci_low <= value && value <= r.ci_high;
            }
            out.push_back(std::move(r));
        }
    }
    return out;
}

/// Runs every cell x replication on up to `workers` threads. Records reach
/// `sink` in (cell, replication) order as soon as each prefix completes, so
/// output content and order are independent of scheduling.
inline void run_study(const StudyConfig& config, const std::function<void(const ReplicationRecord&)>& sink) {
    config.validate();
    std::vector<ScenarioConfig> cells = config.grid;
    for (auto& c : cells) {
        if (!c.calibration) c.calibration = calibrate_noise(c);
    }
    const std::size_t reps = config.replications;
    const std::size_t total = cells.size() * reps;

    std::mutex mu;
    std::map<std::size_t, std::vector<ReplicationRecord>> pending;
    std::size_t next_emit = 0;
    std::atomic<std::size_t> next_task{0};
    std::exception_ptr failure;

    auto flush = [&]() {
        // Caller holds mu.
        for (auto it = pending.find(next_emit); it != pending.end(); it = pending.find(next_emit)) {
            for (const auto& r : it->second) sink(r);
            pending.erase(it);
            ++next_emit;
        }
    };

    auto worker = [&]() {
        for (;;) {
            const std::size_t task = next_task.fetch_add(1);
            if (task >= total) return;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (failure) return;
            }
            const std::size_t cell = task / reps;
            const std::size_t rep = task % reps;
            try {
                auto records = run_replication(config, cell, cells[cell], rep);
                std::lock_guard<std::mutex> lock(mu);
                pending.emplace(task, std::move(records));
                flush();
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const unsigned n_threads = std::max(1u, std::min<unsigned>(config.workers, static_cast<unsigned>(total)));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

inline std::vector<ReplicationRecord> run_study(const StudyConfig& config) {
    std::vector<ReplicationRecord> out;
    run_study(config, [&](const ReplicationRecord& r) { out.push_back(r); });
    return out;
}

// ---------------------------------------------------------------------------
// Summaries

/// Quantile with linear interpolation between order statistics (type 7).
inline double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) fail(ErrorCode::EmptyInput, "quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline StudySummary summarize(const std::vector<ReplicationRecord>& records) {
    if (records.empty()) fail(ErrorCode::EmptyInput, "no records to summarize");
    // Sorting fixes the summation order, making the result independent of input order.
    std::vector<const ReplicationRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    const auto& terms = recorded_terms();
    auto term_rank = [&](const std::string& t) {
        const auto it = std::find(terms.begin(), terms.end(), t);
        return std::make_pair(static_cast<std::size_t>(it - terms.begin()), t);
    };
    std::sort(sorted.begin(), sorted.end(), [&](const ReplicationRecord* a, const ReplicationRecord* b) {
        return std::make_tuple(a->cell, static_cast<int>(a->estimator), term_rank(a->term), a->replication) <
               std::make_tuple(b->cell, static_cast<int>(b->estimator), term_rank(b->term), b->replication);
    });

    StudySummary out;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        const auto* first = sorted[i];
        while (j < sorted.size() && sorted[j]->cell == first->cell && sorted[j]->estimator == first->estimator &&
               sorted[j]->term == first->term) {
            ++j;
        }
        SummaryRow row;
        row.cell = first->cell;
        row.label = first->label;
        row.estimator = first->estimator;
        row.term = first->term;
        row.true_value = first->true_value;
        std::vector<double> est;
        double width = 0.0;
        std::size_t covered = 0;
        for (std::size_t k = i; k < j; ++k) {
            const auto* r = sorted[k];
            if (!r->converged) {
                ++row.n_failed;
                continue;
            }
            est.push_back(r->estimate);
            width += r->ci_high - r->ci_low;
            covered += r->covered ? 1 : 0;
        }
        row.n_ok = est.size();
        if (row.n_ok > 0) {
            const double n = static_cast<double>(row.n_ok);
            double sum = 0.0;
            for (double v : est) sum += v;
            row.mean_estimate = sum / n;
            row.bias = row.mean_estimate - row.true_value;
            double ss = 0.0;
            for (double v : est) ss += (v - row.mean_estimate) * (v - row.mean_estimate);
            row.sd_estimate = row.n_ok > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
            row.mc_se = row.sd_estimate / std::sqrt(n);
            row.q025 = quantile_type7(est, 0.025);
            row.q975 = quantile_type7(est, 0.975);
            row.coverage = static_cast<double>(covered) / n;
            row.mean_ci_width = width / n;
        }
        out.rows.push_back(std::move(row));
        i = j;
    }
    return out;
}

inline void write_summary_csv(std::ostream& out, const StudySummary& s) {
    out << "cell,label,estimator,term,true_value,n_ok,n_failed,mean_estimate,bias,sd_estimate,mc_se,q025,q975,"
           "coverage,mean_ci_width\n";
    for (const auto& r : s.rows) {
        out << r.cell << ',' << r.label << ',' << to_string(r.estimator) << ',' << r.term << ','
            << format_number(r.true_value) << ',' << r.n_ok << ',' << r.n_failed << ',' << format_number(r.mean_estimate)
            << ',' << format_number(r.bias) << ',' << format_number(r.sd_estimate) << ',' << format_number(r.mc_se)
            << ',' << format_number(r.q025) << ',' << format_number(r.q975) << ',' << format_number(r.coverage) << ','
            << format_number(r.mean_ci_width) << '\n';
    }
}

namespace detail {

inline nlohmann::ordered_json json_number(double v) {
    if (is_missing(v) || !std::isfinite(v)) return nullptr;
    return v;
}

} // namespace detail

/// Summary document: {"schema": 1, "cells": {label: {"cell": i, "estimators": {name: {term: {...}}}}}}.
inline nlohmann::ordered_json summary_json(const StudySummary& s) {
    nlohmann::ordered_json doc;
    doc["schema"] = 1;
    nlohmann::ordered_json cells = nlohmann::ordered_json::object();
    for (const auto& r : s.rows) {
        auto& cell = cells[r.label];
        cell["cell"] = r.cell;
        auto& entry = cell["estimators"][std::string(to_string(r.estimator))][r.term];
        entry["true_value"] = r.true_value;
        entry["n_ok"] = r.n_ok;
        entry["n_failed"] = r.n_failed;
        entry["mean_estimate"] = detail::json_number(r.mean_estimate);
        entry["bias"] = detail::json_number(r.bias);
        entry["sd_estimate"] = detail::json_number(r.sd_estimate);
        entry["mc_se"] = detail::json_number(r.mc_se);
        entry["q025"] = detail::json_number(r.q025);
        entry["q975"] = detail::json_number(r.q975);
        entry["coverage"] = detail::json_number(r.coverage);
        entry["mean_ci_width"] = detail::json_number(r.mean_ci_width);
    }
    doc["cells"] = std::move(cells);
    return doc;
}

// ---------------------------------------------------------------------------
// Presets

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{
        "sim1a", "sim1b", "sim2a", "sim2b", "robustness-accuracy", "robustness-imbalance",
        "robustness-systematic", "robustness-correlation", "robustness-nonnormal", "robustness-misspec"};
    return names;
}

inline constexpr std::size_t kPresetReplications = 500;

namespace detail {

inline ScenarioConfig sized(Scenario s, std::size_t n, std::size_t m) {
    ScenarioConfig c = ScenarioConfig::defaults(s);
    c.n_obs = n;
    c.n_annotated = m;
    return c;
}

inline std::vector<EstimatorKind> estimators_for(Scenario s, bool with_pl = true) {
    std::vector<EstimatorKind> out{EstimatorKind::Naive, EstimatorKind::Feasible, EstimatorKind::MLA};
    if (with_pl) out.push_back(EstimatorKind::PL);
    if (covariate_family(s)) out.push_back(EstimatorKind::GMM);
    out.push_back(EstimatorKind::MI);
    return out;
}

} // namespace detail

/// Named study designs. Grids mixing scenario families use the estimators
/// valid for both (GMM is omitted).
inline StudyConfig preset(const std::string& name) {
    StudyConfig cfg;
    cfg.replications = kPresetReplications;
    auto main_grid = [&](Scenario s) {
        for (std::size_t n : {1000, 5000, 10000}) {
            for (std::size_t m : {100, 200, 400}) cfg.grid.push_back(detail::sized(s, n, m));
        }
        cfg.estimators = detail::estimators_for(s);
    };
    if (name == "sim1a") {
        main_grid(Scenario::S1a);
    } else if (name == "sim1b") {
        main_grid(Scenario::S1b);
    } else if (name == "sim2a") {
        main_grid(Scenario::S2a);
    } else if (name == "sim2b") {
        main_grid(Scenario::S2b);
    } else if (name == "robustness-accuracy") {
        for (Scenario s : {Scenario::S1a, Scenario::S2a}) {
            for (double acc : {0.60, 0.70, 0.80, 0.90, 0.95}) {
                auto c = detail::sized(s, 5000, 200);
                c.target_accuracy = acc;
                cfg.grid.push_back(c);
            }
        }
        cfg.estimators = detail::estimators_for(Scenario::S2a);
    } else if (name == "robustness-imbalance") {
        for (double p : {0.5, 0.65, 0.8, 0.9, 0.95}) {
            auto c = detail::sized(Scenario::S1a, 5000, 200);
            c.p_x_intercept = logit(p);
            cfg.grid.push_back(c);
        }
        for (double p : {0.5, 0.65, 0.8, 0.9, 0.95}) {
            auto c = detail::sized(Scenario::S2a, 5000, 200);
            c.b0 = logit(p);
            cfg.grid.push_back(c);
        }
        cfg.estimators = detail::estimators_for(Scenario::S2a, false);
    } else if (name == "robustness-systematic") {
        for (double k : {-0.1, -0.2, -0.3, -0.4, -0.5}) {
            auto c = detail::sized(Scenario::S1b, 1000, 100);
            c.target_accuracy = 0.73;
            c.systematic_coefficient = k;
            cfg.grid.push_back(c);
        }
        for (double k : {0.1, 0.2, 0.34, 0.5, 0.7}) {
            auto c = detail::sized(Scenario::S2b, 1000, 100);
            c.systematic_coefficient = k;
            cfg.grid.push_back(c);
        }
        cfg.estimators = detail::estimators_for(Scenario::S2b);
    } else if (name == "robustness-correlation") {
        for (Scenario s : {Scenario::S1b, Scenario::S2b}) {
            for (double g1 : {0.0, 0.5, 1.0, 2.0, 4.0}) {
                auto c = detail::sized(s, 5000, 200);
                c.zx_coefficient = g1;
                cfg.grid.push_back(c);
            }
        }
        cfg.estimators = detail::estimators_for(Scenario::S2b);
    } else if (name == "robustness-nonnormal") {
        for (Scenario s : {Scenario::S1a, Scenario::S1b}) {
            for (double s2 : {0.0, 0.5, 1.0, 2.0}) {
                auto c = detail::sized(s, 5000, 200);
                c.sigma2_extra = s2;
                cfg.grid.push_back(c);
            }
        }
        cfg.estimators = detail::estimators_for(Scenario::S1a, false);
    } else if (name == "robustness-misspec") {
        cfg.grid.push_back(detail::sized(Scenario::S1b, 5000, 200));
        cfg.grid.push_back(detail::sized(Scenario::S2b, 5000, 200));
        cfg.estimators = {EstimatorKind::Naive, EstimatorKind::Feasible, EstimatorKind::MLA};
        cfg.nondifferential_mla = true;
    } else {
        fail(ErrorCode::InvalidConfig, "unknown preset '" + name + "'");
    }
    return cfg;
}

/// Study from a JSON document:
/// {"replications": 200, "estimators": ["mla", ...], "nondifferential_mla": false,
///  "mi_imputations": 200, "grid": [{"scenario": "s1a", "n_obs": 5000, ...}, ...]}.
/// Grid entries start from the scenario defaults; any ScenarioConfig field may be set.
inline StudyConfig study_from_json(const nlohmann::json& doc) {
    try {
        StudyConfig cfg;
        cfg.replications = doc.value("replications", kPresetReplications);
        cfg.nondifferential_mla = doc.value("nondifferential_mla", false);
        cfg.mi_imputations = doc.value("mi_imputations", 200);
        for (const auto& e : doc.at("estimators")) {
            const auto k = parse_estimator(e.get<std::string>());
            if (!k) fail(ErrorCode::InvalidConfig, "unknown estimator '" + e.get<std::string>() + "'");
            cfg.estimators.push_back(*k);
        }
        for (const auto& g : doc.at("grid")) {
            const auto s = parse_scenario(g.at("scenario").get<std::string>());
            if (!s) fail(ErrorCode::InvalidConfig, "unknown scenario '" + g.at("scenario").get<std::string>() + "'");
            ScenarioConfig c = ScenarioConfig::defaults(*s);
            c.n_obs = g.value("n_obs", c.n_obs);
            c.n_annotated = g.value("n_annotated", c.n_annotated);
            c.b0 = g.value("b0", c.b0);
            c.b_x = g.value("b_x", c.b_x);
            c.b_z = g.value("b_z", c.b_z);
            c.p_x_intercept = g.value("p_x_intercept", c.p_x_intercept);
            c.zx_coefficient = g.value("zx_coefficient", c.zx_coefficient);
            c.target_accuracy = g.value("target_accuracy", c.target_accuracy);
            c.systematic_coefficient = g.value("systematic_coefficient", c.systematic_coefficient);
            c.r_squared = g.value("r_squared", c.r_squared);
            c.sigma2_extra = g.value("sigma2_extra", c.sigma2_extra);
            c.binary_z = g.value("binary_z", c.binary_z);
            cfg.grid.push_back(c);
        }
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("study config: ") + e.what());
    }
}

} // namespace misclass
