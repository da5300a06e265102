// misclass: regression with a misclassified binary variable.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "misclass/data.hpp"
#include "misclass/error.hpp"
#include "misclass/estimators.hpp"
#include "misclass/formula.hpp"
#include "misclass/mla.hpp"
#include "misclass/montecarlo.hpp"
#include "misclass/report.hpp"
#include "misclass/simulate.hpp"

namespace {

using namespace misclass;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

int report_error(const std::string& code, const std::string& message) {
    std::string flat = message;
    if (flat.rfind(code + ": ", 0) == 0) flat.erase(0, code.size() + 2);
    for (auto& ch : flat) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    std::cerr << "error[" << code << "]: " << flat << '\n';
    return kExitUsage;
}

struct ModelFlags {
    std::string formula;
    std::string data;
    std::string data2;
    std::string family;
    std::string error_terms;
    std::string exposure_terms;
};

std::vector<std::string> split_terms(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',' || ch == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    return out;
}

Family parse_family(const std::string& name) {
    if (name == "gaussian") return Family::GaussianIdentity;
    if (name == "binomial") return Family::BernoulliLogit;
    fail(ErrorCode::InvalidConfig, "family must be 'gaussian' or 'binomial'");
}

/// Fills blank cells of `base` from `extra` row by row; adds absent columns.
Dataset merge_by_row(Dataset base, const Dataset& extra) {
    if (extra.n_rows() != base.n_rows()) {
        fail(ErrorCode::RaggedRows, "--data2 has " + std::to_string(extra.n_rows()) + " rows, --data has " +
                                        std::to_string(base.n_rows()));
    }
    for (const auto& name : extra.names()) {
        const auto src = extra.column(name);
        if (!base.has_column(name)) {
            base.set_column(name, std::vector<double>(src.begin(), src.end()));
            continue;
        }
        const auto cur = base.column(name);
        std::vector<double> merged(cur.begin(), cur.end());
        for (std::size_t i = 0; i < merged.size(); ++i) {
            if (is_missing(merged[i])) merged[i] = src[i];
        }
        base.set_column(name, std::move(merged));
    }
    return base;
}

struct LoadedModel {
    AnalysisFrame frame;
    JointModelSpec spec;
};

LoadedModel load_model(const ModelFlags& f) {
    const ModelSpec model = parse_formula(f.formula);
    Dataset ds = load_csv(f.data);
    if (!f.data2.empty()) ds = merge_by_row(std::move(ds), load_csv(f.data2));
    AnalysisFrame frame = build_frame(std::move(ds), model);
    if (!model.proxy) fail(ErrorCode::UnsupportedModel, "formula needs a '||' proxy binding");
    JointModelSpec spec = JointModelSpec::defaults(model, parse_family(f.family));
    if (!f.error_terms.empty()) spec.error_model_terms = split_terms(f.error_terms);
    if (!f.exposure_terms.empty()) spec.exposure_model_terms = split_terms(f.exposure_terms);
    spec.validate();
    return {std::move(frame), std::move(spec)};
}

void write_json_file(const std::string& path, const nlohmann::ordered_json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    out << doc.dump(2) << '\n';
    if (!out) fail(ErrorCode::IoError, "write to '" + path + "' failed");
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
    return out;
}

// ---------------------------------------------------------------------------

int cmd_fit(const ModelFlags& mf, const std::string& method, int mi_m, std::uint64_t seed, const std::string& out_path) {
    const auto kind = parse_estimator(method);
    if (!kind) fail(ErrorCode::InvalidConfig, "unknown method '" + method + "'");
    const LoadedModel m = load_model(mf);
    EstimatorOptions options;
    options.mi_imputations = mi_m;
    options.seed = seed;

    FitResult fit;
    std::vector<std::string> warnings;
    std::optional<MlaFit> mla;
    if (*kind == EstimatorKind::MLA) {
        mla = fit_mla(m.frame, m.spec, options.optim);
        fit = mla->main;
        warnings = mla->warnings;
    } else {
        fit = fit_estimator(*kind, m.frame, m.spec, options);
    }

    std::cout << "method: " << method << "\nformula: " << to_string(m.spec.main) << "\nfamily: " << mf.family
              << "\nobservations: " << m.frame.n_rows() << " (annotated " << m.frame.n_annotated() << ")\n\n";
    write_table(std::cout, fit);
    if (mla && mla->error_model) {
        std::cout << "\nerror model (" << m.spec.surrogate() << "):\n";
        write_table(std::cout, *mla->error_model);
    }
    if (mla && mla->exposure_model) {
        std::cout << "\nexposure model (" << m.spec.latent() << "):\n";
        write_table(std::cout, *mla->exposure_model);
    }
    for (const auto& w : warnings) std::cout << "warning: " << w << '\n';

    if (!out_path.empty()) {
        nlohmann::ordered_json doc;
        doc["schema"] = 1;
        doc["method"] = method;
        doc["formula"] = to_string(m.spec.main);
        doc["family"] = mf.family;
        doc["n_obs"] = m.frame.n_rows();
        doc["n_annotated"] = m.frame.n_annotated();
        doc["fit"] = fit_json(fit);
        if (mla && mla->error_model) doc["error_model"] = fit_json(*mla->error_model);
        if (mla && mla->exposure_model) doc["exposure_model"] = fit_json(*mla->exposure_model);
        doc["warnings"] = warnings;
        write_json_file(out_path, doc);
    }
    if (!fit.converged) {
        std::cerr << "error[NotConverged]: optimizer did not converge; estimates are unreliable\n";
        return kExitNumerical;
    }
    return kExitOk;
}

int cmd_diagnose(const ModelFlags& mf, double alpha, const std::string& out_path) {
    const LoadedModel m = load_model(mf);
    EstimatorOptions options;
    options.diagnostic_alpha = alpha;
    const ConfusionSummary c = confusion_summary(m.frame);
    const DiagnosisResult d = diagnose_systematic(m.frame, m.spec, options);
    write_confusion(std::cout, c);
    write_diagnosis(std::cout, d, alpha);
    if (!out_path.empty()) {
        nlohmann::ordered_json doc;
        doc["schema"] = 1;
        doc["confusion"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn},
                            {"accuracy", c.accuracy}, {"ppv", c.ppv}, {"npv", c.npv},
                            {"fpr", c.fpr}, {"fnr", c.fnr}};
        doc["diagnosis"] = {{"lr_statistic", d.lr_statistic}, {"df", d.df}, {"p_value", d.p_value},
                            {"alpha", alpha}, {"systematic", d.systematic}, {"full_terms", d.full_terms},
                            {"restricted_terms", d.restricted_terms}, {"warnings", d.warnings}};
        write_json_file(out_path, doc);
    }
    return kExitOk;
}

struct SimFlags {
    std::string scenario = "s1a";
    std::size_t n = 5000;
    std::size_t m = 200;
    std::uint64_t seed = 0;
    std::optional<double> accuracy, systematic, sigma2_extra, zx, px_intercept;
    bool binary_z = false;
    std::string out;
};

int cmd_simulate(const SimFlags& f) {
    const auto s = parse_scenario(f.scenario);
    if (!s) fail(ErrorCode::InvalidConfig, "unknown scenario '" + f.scenario + "'");
    ScenarioConfig c = ScenarioConfig::defaults(*s);
    c.n_obs = f.n;
    c.n_annotated = f.m;
    c.seed = f.seed;
    if (f.accuracy) c.target_accuracy = *f.accuracy;
    if (f.systematic) c.systematic_coefficient = *f.systematic;
    if (f.sigma2_extra) c.sigma2_extra = *f.sigma2_extra;
    if (f.zx) c.zx_coefficient = *f.zx;
    if (f.px_intercept) c.p_x_intercept = *f.px_intercept;
    c.binary_z = f.binary_z;
    const GeneratedData g = generate(c);
    {
        auto out = open_output(f.out);
        write_csv(out, g.frame.dataset(), simulated_columns());
    }
    auto meta = open_output(f.out + ".meta");
    write_metadata(meta, g);
    std::cout << "wrote " << f.out << " and " << f.out << ".meta (accuracy " << format_fixed(g.achieved.accuracy)
              << ")\n";
    return kExitOk;
}

void write_study_outputs(const std::string& dir, const StudySummary& summary) {
    {
        auto out = open_output((std::filesystem::path(dir) / "summary.csv").string());
        write_summary_csv(out, summary);
    }
    write_json_file((std::filesystem::path(dir) / "summary.json").string(), summary_json(summary));
}

int cmd_study(const std::string& preset_name, const std::string& config_path, std::optional<std::size_t> reps,
              std::uint64_t seed, unsigned workers, const std::string& out_dir, bool timing) {
    if (preset_name.empty() == config_path.empty()) fail(ErrorCode::InvalidConfig, "give exactly one of --preset or --config");
    StudyConfig cfg;
    if (!preset_name.empty()) {
        cfg = preset(preset_name);
    } else {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) fail(ErrorCode::IoError, "cannot open '" + config_path + "'");
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::InvalidConfig, std::string("study config is not valid JSON: ") + e.what());
        }
        cfg = study_from_json(doc);
    }
    if (reps) cfg.replications = *reps;
    cfg.master_seed = seed;
    cfg.workers = workers;
    cfg.record_timing = timing;
    cfg.output_path = out_dir;
    cfg.validate();

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create '" + out_dir + "': " + ec.message());
    const std::string records_path = (std::filesystem::path(out_dir) / "records.csv").string();
    auto out = open_output(records_path);
    write_record_header(out);
    std::vector<ReplicationRecord> records;
    run_study(cfg, [&](const ReplicationRecord& r) {
        write_record(out, r);
        records.push_back(r);
    });
    out.flush();
    if (!out) fail(ErrorCode::IoError, "write to '" + records_path + "' failed");
    const StudySummary summary = summarize(records);
    write_study_outputs(out_dir, summary);
    std::cout << "wrote " << records.size() << " records to " << records_path << '\n';
    return kExitOk;
}

int cmd_summarize(const std::string& records_path, const std::string& out_dir) {
    std::ifstream in(records_path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + records_path + "'");
    const StudySummary summary = summarize(read_records(in));
    if (out_dir.empty()) {
        write_summary_csv(std::cout, summary);
        return kExitOk;
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail(ErrorCode::IoError, "cannot create '" + out_dir + "': " + ec.message());
    write_study_outputs(out_dir, summary);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regression with a misclassified binary variable"};
    app.require_subcommand(1);

    ModelFlags mf;
    std::string method;
    int mi_m = 200;
    std::uint64_t seed = 0;
    std::string out;
    double alpha = 0.05;

    auto add_model_flags = [&](CLI::App* sub) {
        sub->add_option("--formula", mf.formula, "model formula, e.g. \"y ~ x || w + z\"")->required();
        sub->add_option("--data", mf.data, "CSV file; latent column blank on unannotated rows")->required();
        sub->add_option("--data2", mf.data2, "CSV with annotations, merged by row order");
        sub->add_option("--family", mf.family, "gaussian or binomial")->required();
        sub->add_option("--error-terms", mf.error_terms, "comma-separated error-model terms");
        sub->add_option("--exposure-terms", mf.exposure_terms, "comma-separated exposure-model terms");
    };

    auto* fit = app.add_subcommand("fit", "fit a model and print the coefficient table");
    add_model_flags(fit);
    fit->add_option("--method", method, "naive|feasible|mla|pl|gmm|mi")->required();
    fit->add_option("--mi-m", mi_m, "number of imputations for mi");
    fit->add_option("--seed", seed, "random seed");
    fit->add_option("--out", out, "write results as JSON");

    auto* diag = app.add_subcommand("diagnose", "confusion matrix and systematic-misclassification test");
    add_model_flags(diag);
    diag->add_option("--alpha", alpha, "significance level");
    diag->add_option("--seed", seed, "random seed (unused; accepted for uniformity)");
    diag->add_option("--out", out, "write results as JSON");

    SimFlags sf;
    auto* sim = app.add_subcommand("simulate", "generate one synthetic dataset");
    sim->add_option("--scenario", sf.scenario, "s1a|s1b|s2a|s2b");
    sim->add_option("--n", sf.n, "observations");
    sim->add_option("--m", sf.m, "annotated observations");
    sim->add_option("--seed", sf.seed, "random seed");
    sim->add_option("--accuracy", sf.accuracy, "target classifier accuracy");
    sim->add_option("--systematic", sf.systematic, "systematic misclassification coefficient");
    sim->add_option("--sigma2-extra", sf.sigma2_extra, "sd of the skewed extra outcome noise");
    sim->add_option("--zx", sf.zx, "coefficient of Z on X");
    sim->add_option("--px-intercept", sf.px_intercept, "intercept of the X model");
    sim->add_flag("--binary-z", sf.binary_z, "draw Z as Bernoulli(0.5)");
    sim->add_option("--out", sf.out, "output CSV path (metadata goes to <out>.meta)")->required();

    std::string preset_name, config_path, out_dir, records_path;
    std::optional<std::size_t> reps;
    unsigned workers = 1;
    bool timing = false;
    auto* study = app.add_subcommand("study", "run a replicated simulation study");
    study->add_option("--preset", preset_name, "named study design");
    study->add_option("--config", config_path, "JSON study configuration");
    study->add_option("--reps", reps, "replications per cell");
    study->add_option("--seed", seed, "master seed");
    study->add_option("--workers", workers, "worker threads");
    study->add_option("--out", out_dir, "output directory")->required();
    study->add_flag("--timing", timing, "record fit durations (makes records non-reproducible)");

    auto* summ = app.add_subcommand("summarize", "summarize a records CSV");
    summ->add_option("--records", records_path, "records CSV")->required();
    summ->add_option("--out", out_dir, "output directory for summary.csv and summary.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("Usage", e.what());
    }

    try {
        if (*fit) return cmd_fit(mf, method, mi_m, seed, out);
        if (*diag) return cmd_diagnose(mf, alpha, out);
        if (*sim) return cmd_simulate(sf);
        if (*study) return cmd_study(preset_name, config_path, reps, seed, workers, out_dir, timing);
        if (*summ) return cmd_summarize(records_path, out_dir);
    } catch (const Error& e) {
        report_error(std::string(to_string(e.code())), e.what());
        return is_numerical(e.code()) ? kExitNumerical : kExitUsage;
    } catch (const std::exception& e) {
        report_error("Internal", e.what());
        return kExitNumerical;
    }
    return kExitUsage;
}
