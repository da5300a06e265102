#pragma once

// The six estimators behind one interface, plus the confusion-matrix summary
// and the likelihood-ratio test for systematic misclassification.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Dense>

#include "misclass/data.hpp"
#include "misclass/error.hpp"
#include "misclass/glm.hpp"
#include "misclass/mla.hpp"
#include "misclass/optim.hpp"
#include "misclass/rng.hpp"

namespace misclass {

enum class EstimatorKind { Naive, Feasible, MLA, PL, GMM, MI };

inline constexpr std::array<EstimatorKind, 6> kAllEstimators{
    EstimatorKind::Naive, EstimatorKind::Feasible, EstimatorKind::MLA,
    EstimatorKind::PL,    EstimatorKind::GMM,      EstimatorKind::MI};

inline std::string_view to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::Naive: return "naive";
    case EstimatorKind::Feasible: return "feasible";
    case EstimatorKind::MLA: return "mla";
    case EstimatorKind::PL: return "pl";
    case EstimatorKind::GMM: return "gmm";
    case EstimatorKind::MI: return "mi";
    }
    return "?";
}

inline std::optional<EstimatorKind> parse_estimator(std::string_view name) {
    for (auto k : kAllEstimators) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

struct EstimatorOptions {
    OptimOptions optim;
    int mi_imputations = 200;
    std::uint64_t seed = 0;
    /// Fit MLA with the nondifferential error model instead of the given one.
    bool nondifferential_error = false;
    double diagnostic_alpha = 0.05;
};

/// Uniform term order for a model: intercept, formula terms, then sigma for
/// Gaussian outcomes.
inline std::vector<std::string> main_term_names(const JointModelSpec& spec) {
    std::vector<std::string> names{kInterceptName};
    names.insert(names.end(), spec.main.terms.begin(), spec.main.terms.end());
    if (spec.main_family == Family::GaussianIdentity) names.push_back(kSigmaName);
    return names;
}

namespace detail {

inline void require_proxy(const AnalysisFrame& frame, const JointModelSpec& spec) {
    spec.validate();
    if (!frame.spec().proxy || frame.spec().proxy->latent != spec.latent() ||
        frame.spec().proxy->surrogate != spec.surrogate()) {
        fail(ErrorCode::UnsupportedModel, "frame and model disagree on the proxy binding");
    }
}

/// Columns for the main-model design, with the latent column swapped for
/// `replacement` when given.
inline std::vector<std::span<const double>> main_columns(const AnalysisFrame& frame, const JointModelSpec& spec,
                                                         std::optional<std::span<const double>> replacement) {
    std::vector<std::span<const double>> cols;
    for (const auto& t : spec.main.terms) {
        cols.push_back(replacement && t == spec.latent() ? *replacement : frame.column(t));
    }
    return cols;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Naive and feasible

/// Treats the classifier output as if it were the truth, on all rows.
inline FitResult fit_naive(const AnalysisFrame& frame, const JointModelSpec& spec, const EstimatorOptions& options = {}) {
    detail::require_proxy(frame, spec);
    const auto w = frame.surrogate();
    const auto n = frame.n_rows();
    if (spec.is_iv()) {
        const auto d = make_design(detail::main_columns(frame, spec, w), spec.main.terms, {}, n);
        return fit_glm(d, gather(frame.column(spec.main.response), {}), spec.main_family, options.optim);
    }
    const auto d = make_design(detail::main_columns(frame, spec, std::nullopt), spec.main.terms, {}, n);
    return fit_glm(d, gather(w, {}), spec.main_family, options.optim);
}

/// Uses only the annotated rows and the true values.
inline FitResult fit_feasible(const AnalysisFrame& frame, const JointModelSpec& spec, const EstimatorOptions& options = {}) {
    detail::require_proxy(frame, spec);
    if (frame.n_annotated() <= spec.main.terms.size() + 2) {
        fail(ErrorCode::TooFewAnnotations, "feasible estimator needs more than " +
                                               std::to_string(spec.main.terms.size() + 2) + " annotated rows");
    }
    const auto rows = detail::annotated_rows(frame);
    const auto d = make_design(detail::main_columns(frame, spec, std::nullopt), spec.main.terms, rows, frame.n_rows());
    return fit_glm(d, gather(frame.column(spec.main.response), rows), spec.main_family, options.optim);
}

// ---------------------------------------------------------------------------
// Confusion summary

struct ConfusionSummary {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0, ppv = 0, npv = 0, fpr = 0, fnr = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

/// Cross-tabulates classifier output against the truth on annotated rows.
inline ConfusionSummary confusion_summary(const AnalysisFrame& frame) {
    if (!frame.spec().proxy) fail(ErrorCode::UnsupportedModel, "frame has no proxy binding");
    if (frame.n_annotated() == 0) fail(ErrorCode::NoAnnotations, "no annotated rows");
    const auto x = frame.latent();
    const auto w = frame.surrogate();
    ConfusionSummary c;
    for (std::size_t i = 0; i < frame.n_rows(); ++i) {
        if (!frame.annotated(i)) continue;
        const bool truth = x[i] == 1.0;
        const bool pred = w[i] == 1.0;
        if (pred && truth) ++c.tp;
        else if (pred) ++c.fp;
        else if (truth) ++c.fn;
        else ++c.tn;
    }
    auto ratio = [](std::size_t num, std::size_t den, const char* name) {
        if (den == 0) fail(ErrorCode::UndefinedRate, std::string(name) + " has a zero denominator");
        return static_cast<double>(num) / static_cast<double>(den);
    };
    c.accuracy = ratio(c.tp + c.tn, c.total(), "accuracy");
    c.ppv = ratio(c.tp, c.tp + c.fp, "ppv");
    c.npv = ratio(c.tn, c.tn + c.fn, "npv");
    c.fpr = ratio(c.fp, c.fp + c.tn, "fpr");
    c.fnr = ratio(c.fn, c.fn + c.tp, "fnr");
    return c;
}

// ---------------------------------------------------------------------------
// MLA

inline FitResult fit_mla_main(const AnalysisFrame& frame, const JointModelSpec& spec, const EstimatorOptions& options = {}) {
    detail::require_proxy(frame, spec);
    const JointModelSpec used = options.nondifferential_error ? nondifferential_variant(spec) : spec;
    return fit_mla(frame, used, options.optim).main;
}

// ---------------------------------------------------------------------------
// Pseudo-likelihood

/// Maximizes the joint likelihood with the error model frozen at rates from
/// the confusion matrix (IV: predictive values; DV: error rates) and no
/// exposure model. Rate uncertainty is not propagated.
inline FitResult fit_pl(const AnalysisFrame& frame, const JointModelSpec& spec, const EstimatorOptions& options = {}) {
    detail::require_proxy(frame, spec);
    options.optim.validate();
    const ConfusionSummary c = confusion_summary(frame);

    auto lg = [](double p) { return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity(); };
    std::array<std::array<double, 2>, 2> table{};
    if (spec.is_iv()) {
        // log P(X = truth | W = w)
        table[1][1] = lg(c.ppv);
        table[0][1] = lg(1.0 - c.ppv);
        table[0][0] = lg(c.npv);
        table[1][0] = lg(1.0 - c.npv);
    } else {
        // log P(W = w | Y = truth)
        table[0][1] = lg(c.fpr);
        table[0][0] = lg(1.0 - c.fpr);
        table[1][0] = lg(c.fnr);
        table[1][1] = lg(1.0 - c.fnr);
    }

    JointLikelihood lik(frame, spec, ErrorModelMode::Fixed, false);
    lik.set_fixed_error(table);
    ThetaVector theta = lik.layout();

    const FitResult start = fit_feasible(frame, spec, options);
    for (std::size_t k = 0; k < start.size(); ++k) {
        const auto& name = start.term_names[k];
        if (name == kSigmaName) {
            theta.at(Block::Main, kLogSigmaName) = std::log(std::max(start.estimates[static_cast<Eigen::Index>(k)], 1e-8));
        } else {
            theta.at(Block::Main, name) = start.estimates[static_cast<Eigen::Index>(k)];
        }
    }

    lik(theta.values());
    const Objective objective = [&lik](const Vector& t) { return lik.evaluate(t); };
    const GradientFn gradient = [&lik](const Vector& t) { return lik.gradient(t); };
    const MaximizeResult opt = maximize(objective, theta.values(), options.optim, gradient);
    theta.values() = opt.theta;
    const Matrix vcov = detail::invert_information(-hessian_from_gradient(gradient, opt.theta, options.optim.fd_step_scale));
    return detail::block_result(theta, vcov, Block::Main, opt.iterations, opt.converged, frame.n_rows(), opt.value);
}

// ---------------------------------------------------------------------------
// GMM calibration

struct CalibrationStages {
    Vector pi;      ///< stage-1 coefficients on (1, W, other covariates)
    Vector beta;    ///< stage-2 coefficients, main-model order without sigma
    Matrix cov;     ///< sandwich covariance of beta
};

/// Both regression-calibration stages without the feasible combination.
inline CalibrationStages calibration_stages(const AnalysisFrame& frame, const JointModelSpec& spec) {
    detail::require_proxy(frame, spec);
    if (!spec.is_iv() || spec.main_family != Family::GaussianIdentity) {
        fail(ErrorCode::UnsupportedModel, "GMM calibration needs a misclassified covariate and a gaussian outcome");
    }
    const auto n = frame.n_rows();
    const auto rows = detail::annotated_rows(frame);
    const auto others = spec.main.other_terms();

    // Stage 1 on annotated rows.
    std::vector<std::span<const double>> cal_cols{frame.surrogate()};
    std::vector<std::string> cal_names{spec.surrogate()};
    for (const auto& t : others) {
        cal_cols.push_back(frame.column(t));
        cal_names.push_back(t);
    }
    const Design cal_all = make_design(cal_cols, cal_names, {}, n);
    const Design cal_ann = make_design(cal_cols, cal_names, rows, n);
    detail::require_full_rank(cal_ann.X);
    const Vector x_ann = gather(frame.latent(), rows);
    const Vector pi = cal_ann.X.colPivHouseholderQr().solve(x_ann);
    const Vector x_hat = cal_all.X * pi;

    // Stage 2 on all rows.
    const std::span<const double> x_hat_span(x_hat.data(), static_cast<std::size_t>(x_hat.size()));
    const Design d = make_design(detail::main_columns(frame, spec, x_hat_span), spec.main.terms, {}, n);
    detail::require_full_rank(d.X);
    const Vector y = gather(frame.column(spec.main.response), {});
    const Vector beta = d.X.colPivHouseholderQr().solve(y);
    const Vector r = y - d.X * beta;

    // Sandwich over the stacked estimating equations (pi, beta).
    const Eigen::Index q = cal_all.X.cols();
    const Eigen::Index p = d.X.cols();
    Eigen::Index k_latent = 0;
    for (std::size_t j = 0; j < spec.main.terms.size(); ++j) {
        if (spec.main.terms[j] == spec.latent()) k_latent = static_cast<Eigen::Index>(j + 1);
    }
    Matrix J = Matrix::Zero(q + p, q + p);
    Matrix B = Matrix::Zero(q + p, q + p);
    Vector psi(q + p);
    const auto x = frame.latent();
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const Vector v = cal_all.X.row(ii).transpose();
        const Vector di = d.X.row(ii).transpose();
        psi.setZero();
        if (frame.annotated(i)) {
            psi.head(q) = v * (x[i] - v.dot(pi));
            J.topLeftCorner(q, q) -= v * v.transpose();
        }
        psi.tail(p) = di * r[ii];
        J.bottomRightCorner(p, p) -= di * di.transpose();
        Vector e = -di * beta[k_latent];
        e[k_latent] += r[ii];
        J.bottomLeftCorner(p, q) += e * v.transpose();
        B += psi * psi.transpose();
    }
    const Matrix Jinv = J.inverse();
    const Matrix cov = Jinv * B * Jinv.transpose();
    return {pi, beta, cov.bottomRightCorner(p, p)};
}

/// Regression calibration with inverse-variance combination.
///
/// Stage 1 projects the truth on (1, W, other covariates) over annotated
/// rows; stage 2 regresses the outcome on the projection and the other
/// covariates over all rows. The stage-2 covariance is the stacked
/// M-estimation sandwich of both stages. Each coefficient is then combined
/// with the feasible estimate by precision weighting.
inline FitResult fit_gmm(const AnalysisFrame& frame, const JointModelSpec& spec, const EstimatorOptions& options = {}) {
    const CalibrationStages stages = calibration_stages(frame, spec);
    const Vector& beta = stages.beta;
    const Matrix& cov_beta = stages.cov;
    const Eigen::Index p = beta.size();
    const auto n = frame.n_rows();
    const auto rows = detail::annotated_rows(frame);
    const FitResult feasible = fit_feasible(frame, spec, options);

    FitResult fit;
    fit.term_names = main_term_names(spec);
    fit.estimates.resize(p + 1);
    fit.vcov = Matrix::Zero(p + 1, p + 1);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double vc = cov_beta(k, k);
        const double vf = feasible.vcov(k, k);
        const double wc = vc > 0.0 ? 1.0 / vc : 0.0;
        const double wf = vf > 0.0 ? 1.0 / vf : 0.0;
        if (wc + wf == 0.0) {
            fit.estimates[k] = beta[k];
            fit.vcov(k, k) = 0.0;
        } else if (!std::isfinite(wc) || !std::isfinite(wf)) {
            fit.estimates[k] = std::isfinite(wc) ? feasible.estimates[k] : beta[k];
            fit.vcov(k, k) = 0.0;
        } else {
            fit.estimates[k] = (wc * beta[k] + wf * feasible.estimates[k]) / (wc + wf);
            fit.vcov(k, k) = 1.0 / (wc + wf);
        }
    }
    // Residual scale from annotated rows at the combined coefficients.
    const Design d_ann = make_design(detail::main_columns(frame, spec, std::nullopt), spec.main.terms, rows, n);
    const Vector resid = gather(frame.column(spec.main.response), rows) - d_ann.X * fit.estimates.head(p);
    const double m = static_cast<double>(rows.size());
    const double sigma = std::sqrt(resid.squaredNorm() / m);
    fit.estimates[p] = sigma;
    fit.vcov(p, p) = sigma * sigma / (2.0 * m);
    fit.converged = true;
    fit.n_iterations = 1;
    fit.n_obs_used = n;
    apply_wald(fit);
    return fit;
}

// ---------------------------------------------------------------------------
// Multiple imputation

struct RubinPooled {
    Vector mean;
    Matrix within;  ///< average complete-data covariance
    Matrix between; ///< covariance of the estimates across imputations (0 when m = 1)
    Matrix total;   ///< within + (1 + 1/m) * between
    int m = 0;
    double inflation = 0.0; ///< 1 + 1/m
};

inline RubinPooled rubin_pool(const std::vector<Vector>& estimates, const std::vector<Matrix>& covariances) {
    if (estimates.empty() || estimates.size() != covariances.size()) {
        fail(ErrorCode::EmptyInput, "Rubin pooling needs one covariance per estimate");
    }
    RubinPooled out;
    out.m = static_cast<int>(estimates.size());
    const Eigen::Index p = estimates.front().size();
    out.mean = Vector::Zero(p);
    out.within = Matrix::Zero(p, p);
    out.between = Matrix::Zero(p, p);
    for (std::size_t j = 0; j < estimates.size(); ++j) {
        out.mean += estimates[j];
        out.within += covariances[j];
    }
    out.mean /= out.m;
    out.within /= out.m;
    if (out.m > 1) {
        for (const auto& e : estimates) {
            const Vector dv = e - out.mean;
            out.between += dv * dv.transpose();
        }
        out.between /= (out.m - 1);
    }
    out.inflation = 1.0 + 1.0 / out.m;
    out.total = out.within + out.inflation * out.between;
    return out;
}

/// Multiple imputation of the misclassified variable from a logistic model
/// on the surrogate and every other model variable (including the outcome
/// when the covariate is misclassified), with parameter draws from the
/// normal approximation to the imputation-model posterior.
inline FitResult fit_mi(const AnalysisFrame& frame, const JointModelSpec& spec, const EstimatorOptions& options = {}) {
    detail::require_proxy(frame, spec);
    if (options.mi_imputations < 1) fail(ErrorCode::InvalidConfig, "need at least one imputation");
    const auto n = frame.n_rows();
    const auto rows = detail::annotated_rows(frame);

    std::vector<std::span<const double>> imp_cols{frame.surrogate()};
    std::vector<std::string> imp_names{spec.surrogate()};
    if (spec.is_iv()) {
        imp_cols.push_back(frame.column(spec.main.response));
        imp_names.push_back(spec.main.response);
    }
    for (const auto& t : spec.main.other_terms()) {
        imp_cols.push_back(frame.column(t));
        imp_names.push_back(t);
    }
    const Design imp_all = make_design(imp_cols, imp_names, {}, n);
    FitResult imp;
    try {
        imp = fit_glm(make_design(imp_cols, imp_names, rows, n), gather(frame.latent(), rows), Family::BernoulliLogit,
                      options.optim);
    } catch (const Error& e) {
        fail(ErrorCode::ImputationModelFailed, std::string("imputation model: ") + e.what());
    }
    Eigen::LLT<Matrix> chol(imp.vcov);
    if (chol.info() != Eigen::Success) fail(ErrorCode::ImputationModelFailed, "imputation covariance is not positive definite");
    const Matrix L = chol.matrixL();

    rng::Xoshiro256 gen(rng::derive_seed(options.seed, {0x4d49ULL}));
    const auto truth = frame.latent();
    std::vector<double> completed(truth.begin(), truth.end());
    std::vector<double> response;
    if (spec.is_dv()) response.assign(truth.begin(), truth.end());

    std::vector<Vector> estimates;
    std::vector<Matrix> covariances;
    const Eigen::Index q = imp.estimates.size();
    Vector z(q);
    for (int j = 0; j < options.mi_imputations; ++j) {
        for (Eigen::Index k = 0; k < q; ++k) z[k] = gen.normal();
        const Vector draw = imp.estimates + L * z;
        const Vector eta = imp_all.X * draw;
        for (std::size_t i = 0; i < n; ++i) {
            if (!frame.annotated(i)) completed[i] = gen.bernoulli(inv_logit(eta[static_cast<Eigen::Index>(i)])) ? 1.0 : 0.0;
        }
        const std::span<const double> done(completed);
        FitResult f;
        if (spec.is_iv()) {
            const auto d = make_design(detail::main_columns(frame, spec, done), spec.main.terms, {}, n);
            f = fit_glm(d, gather(frame.column(spec.main.response), {}), spec.main_family, options.optim);
        } else {
            const auto d = make_design(detail::main_columns(frame, spec, std::nullopt), spec.main.terms, {}, n);
            f = fit_glm(d, gather(done, {}), spec.main_family, options.optim);
        }
        estimates.push_back(f.estimates);
        covariances.push_back(f.vcov);
    }
    const RubinPooled pooled = rubin_pool(estimates, covariances);

    FitResult fit;
    fit.term_names = main_term_names(spec);
    fit.estimates = pooled.mean;
    fit.vcov = pooled.total;
    fit.converged = true;
    fit.n_iterations = options.mi_imputations;
    fit.n_obs_used = n;
    apply_wald(fit);
    return fit;
}

// ---------------------------------------------------------------------------
// Dispatcher

inline FitResult fit_estimator(EstimatorKind kind, const AnalysisFrame& frame, const JointModelSpec& spec,
                               const EstimatorOptions& options = {}) {
    switch (kind) {
    case EstimatorKind::Naive: return fit_naive(frame, spec, options);
    case EstimatorKind::Feasible: return fit_feasible(frame, spec, options);
    case EstimatorKind::MLA: return fit_mla_main(frame, spec, options);
    case EstimatorKind::PL: return fit_pl(frame, spec, options);
    case EstimatorKind::GMM: return fit_gmm(frame, spec, options);
    case EstimatorKind::MI: return fit_mi(frame, spec, options);
    }
    fail(ErrorCode::UnsupportedModel, "unknown estimator");
}

// ---------------------------------------------------------------------------
// Systematic-misclassification diagnostic

struct DiagnosisResult {
    double lr_statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    bool systematic = false;
    std::vector<std::string> full_terms;
    std::vector<std::string> restricted_terms;
    std::vector<std::string> warnings;
};

inline constexpr std::size_t kDiagnosticWarnAnnotations = 30;

/// Likelihood-ratio test of two nested logistic models for the surrogate,
/// fitted on the annotated rows.
inline DiagnosisResult diagnose_nested(const AnalysisFrame& frame, const std::vector<std::string>& full_terms,
                                       const std::vector<std::string>& restricted_terms,
                                       const EstimatorOptions& options = {}) {
    if (!frame.spec().proxy) fail(ErrorCode::UnsupportedModel, "frame has no proxy binding");
    for (const auto& t : restricted_terms) {
        if (std::find(full_terms.begin(), full_terms.end(), t) == full_terms.end()) {
            fail(ErrorCode::UnsupportedModel, "restricted term '" + t + "' is not in the full model");
        }
    }
    DiagnosisResult out;
    out.full_terms = full_terms;
    out.restricted_terms = restricted_terms;
    out.df = static_cast<int>(full_terms.size() - restricted_terms.size());
    if (frame.n_annotated() < kDiagnosticWarnAnnotations) {
        out.warnings.push_back("only " + std::to_string(frame.n_annotated()) + " annotated rows; the test may be unreliable");
    }
    if (out.df == 0) return out;

    const auto rows = detail::annotated_rows(frame);
    const Vector w = gather(frame.surrogate(), rows);
    auto loglik = [&](const std::vector<std::string>& terms) {
        const auto d = make_design(detail::columns(frame, terms), terms, rows, frame.n_rows());
        return *fit_glm(d, w, Family::BernoulliLogit, options.optim).log_likelihood;
    };
    const double stat = 2.0 * (loglik(full_terms) - loglik(restricted_terms));
    out.lr_statistic = std::max(stat, 0.0);
    const boost::math::chi_squared dist(out.df);
    out.p_value = out.lr_statistic > 0.0 ? boost::math::cdf(boost::math::complement(dist, out.lr_statistic)) : 1.0;
    out.systematic = out.p_value < options.diagnostic_alpha;
    return out;
}

/// Tests P(W | X, Z) = P(W | X, Y, Z) for a misclassified covariate, or
/// P(W | Y) = P(W | Y, X, Z) for a misclassified outcome.
inline DiagnosisResult diagnose_systematic(const AnalysisFrame& frame, const JointModelSpec& spec,
                                           const EstimatorOptions& options = {}) {
    detail::require_proxy(frame, spec);
    const JointModelSpec full = JointModelSpec::defaults(spec.main, spec.main_family);
    const JointModelSpec restricted = nondifferential_variant(full);
    return diagnose_nested(frame, full.error_model_terms, restricted.error_model_terms, options);
}

} // namespace misclass
