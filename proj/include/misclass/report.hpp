#pragma once

// Text tables and JSON for fitted models.

#include <cstdio>
#include <ostream>
#include <string>

#include <json.hpp>

#include "misclass/estimators.hpp"
#include "misclass/glm.hpp"
#include "misclass/montecarlo.hpp"

namespace misclass {

inline std::string format_fixed(double v, const char* fmt = "%.6g") {
    if (!std::isfinite(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

inline void write_table(std::ostream& out, const FitResult& fit) {
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %12s %12s %12s %12s\n", "term", "estimate", "std_error", "ci_low", "ci_high");
    out << line;
    for (std::size_t k = 0; k < fit.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        std::snprintf(line, sizeof line, "%-14s %12s %12s %12s %12s\n", fit.term_names[k].c_str(),
                      format_fixed(fit.estimates[i]).c_str(), format_fixed(fit.std_errors[i]).c_str(),
                      format_fixed(fit.ci_low[i]).c_str(), format_fixed(fit.ci_high[i]).c_str());
        out << line;
    }
}

inline nlohmann::ordered_json fit_json(const FitResult& fit) {
    nlohmann::ordered_json j;
    j["converged"] = fit.converged;
    j["n_iterations"] = fit.n_iterations;
    j["n_obs_used"] = fit.n_obs_used;
    j["log_likelihood"] = fit.log_likelihood ? detail::json_number(*fit.log_likelihood) : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < fit.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        terms.push_back({{"term", fit.term_names[k]},
                         {"estimate", detail::json_number(fit.estimates[i])},
                         {"std_error", detail::json_number(fit.std_errors[i])},
                         {"ci_low", detail::json_number(fit.ci_low[i])},
                         {"ci_high", detail::json_number(fit.ci_high[i])}});
    }
    j["terms"] = std::move(terms);
    return j;
}

inline void write_confusion(std::ostream& out, const ConfusionSummary& c) {
    out << "confusion (annotated rows): tp=" << c.tp << " fp=" << c.fp << " tn=" << c.tn << " fn=" << c.fn << '\n'
        << "accuracy=" << format_fixed(c.accuracy) << " ppv=" << format_fixed(c.ppv) << " npv=" << format_fixed(c.npv)
        << " fpr=" << format_fixed(c.fpr) << " fnr=" << format_fixed(c.fnr) << '\n';
}

inline std::string join_terms(const std::vector<std::string>& terms) {
    std::string s;
    for (std::size_t i = 0; i < terms.size(); ++i) s += (i ? ", " : "") + terms[i];
    return s;
}

inline void write_diagnosis(std::ostream& out, const DiagnosisResult& d, double alpha) {
    out << "error model, full:       W ~ " << join_terms(d.full_terms) << '\n'
        << "error model, restricted: W ~ " << join_terms(d.restricted_terms) << '\n'
        << "LR statistic=" << format_fixed(d.lr_statistic) << " df=" << d.df << " p=" << format_fixed(d.p_value) << '\n'
        << (d.systematic ? "systematic misclassification detected" : "no evidence of systematic misclassification")
        << " (alpha=" << format_fixed(alpha) << ")\n";
    for (const auto& w : d.warnings) out << "warning: " << w << '\n';
}

} // namespace misclass
