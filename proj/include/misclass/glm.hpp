#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "misclass/error.hpp"
#include "misclass/optim.hpp"

namespace misclass {

/// Two-sided 95% normal quantile used for every Wald interval.
inline constexpr double kWaldZ = 1.959964;

/// Coefficients beyond this magnitude in a logistic fit signal separation.
inline constexpr double kSeparationBound = 30.0;

inline constexpr const char* kInterceptName = "(Intercept)";
inline constexpr const char* kSigmaName = "sigma";

enum class Family { GaussianIdentity, BernoulliLogit };

inline const char* to_string(Family f) {
    return f == Family::GaussianIdentity ? "gaussian" : "binomial";
}

// ---------------------------------------------------------------------------
// Probability kernels

inline double gaussian_logdensity(double y, double mu, double sigma) {
    if (!(sigma > 0.0)) fail(ErrorCode::NonPositiveSigma, "sigma must be positive");
    const double z = (y - mu) / sigma;
    return -std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// y * log(sigmoid(eta)) + (1 - y) * log(1 - sigmoid(eta)).
inline double bernoulli_logit_logprob(double eta, int y) {
    return y == 1 ? -softplus(-eta) : -softplus(eta);
}

inline double inv_logit(double eta) {
    return eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(exp(a) + exp(b)); either argument may be -inf.
inline double log_sum_exp(double a, double b) {
    if (a < b) std::swap(a, b);
    if (a == -std::numeric_limits<double>::infinity()) return a;
    return a + std::log1p(std::exp(b - a));
}

// Vectorized forms over Eigen arrays.

inline Eigen::ArrayXd softplus(const Eigen::ArrayXd& t) {
    return t.max(0.0) + (-t.abs()).exp().log1p();
}

inline Eigen::ArrayXd bernoulli_logit_logprob(const Eigen::ArrayXd& eta, const Eigen::ArrayXd& y) {
    // y in {0,1}: -softplus(-eta) when y = 1, -softplus(eta) when y = 0.
    return -softplus(eta * (1.0 - 2.0 * y));
}

inline Eigen::ArrayXd gaussian_logdensity(const Eigen::ArrayXd& y, const Eigen::ArrayXd& mu, double log_sigma) {
    const double inv = std::exp(-log_sigma);
    const Eigen::ArrayXd z = (y - mu) * inv;
    return -log_sigma - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z.square();
}

inline Eigen::ArrayXd log_sum_exp(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
    const Eigen::ArrayXd hi = a.max(b);
    const Eigen::ArrayXd lo = a.min(b);
    Eigen::ArrayXd out = hi + (lo - hi).exp().log1p();
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (hi[i] == -std::numeric_limits<double>::infinity()) out[i] = hi[i];
    }
    return out;
}

/// Pairwise summation in a fixed order (deterministic for a given length).
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 32) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const Eigen::ArrayXd& x) {
    return pairwise_sum(x.data(), static_cast<std::size_t>(x.size()));
}

// ---------------------------------------------------------------------------
// Fit results

struct FitResult {
    std::vector<std::string> term_names;
    Vector estimates;
    Vector std_errors;
    Vector ci_low;
    Vector ci_high;
    std::optional<double> log_likelihood;
    Matrix vcov;
    bool converged = false;
    int n_iterations = 0;
    std::size_t n_obs_used = 0;

    std::size_t size() const { return term_names.size(); }

    std::optional<std::size_t> index_of(const std::string& term) const {
        for (std::size_t i = 0; i < term_names.size(); ++i) {
            if (term_names[i] == term) return i;
        }
        return std::nullopt;
    }

    double estimate(const std::string& term) const { return estimates[static_cast<Eigen::Index>(at(term))]; }
    double std_error(const std::string& term) const { return std_errors[static_cast<Eigen::Index>(at(term))]; }

private:
    std::size_t at(const std::string& term) const {
        const auto i = index_of(term);
        if (!i) fail(ErrorCode::MissingColumn, "no term named '" + term + "' in fit");
        return *i;
    }
};

/// Fills standard errors and Wald intervals from estimates and vcov.
inline void apply_wald(FitResult& fit) {
    const Eigen::Index p = fit.estimates.size();
    fit.std_errors.resize(p);
    fit.ci_low.resize(p);
    fit.ci_high.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const double v = fit.vcov(k, k);
        fit.std_errors[k] = std::sqrt(std::max(v, 0.0));
        fit.ci_low[k] = fit.estimates[k] - kWaldZ * fit.std_errors[k];
        fit.ci_high[k] = fit.estimates[k] + kWaldZ * fit.std_errors[k];
    }
}

// ---------------------------------------------------------------------------
// Design matrices

struct Design {
    Matrix X;                       ///< n x (1 + terms), intercept first
    std::vector<std::string> names; ///< column names, "(Intercept)" first
};

/// Assembles [1, columns...] over the selected rows (all rows when empty).
inline Design make_design(const std::vector<std::span<const double>>& columns,
                          const std::vector<std::string>& names, const std::vector<std::size_t>& rows,
                          std::size_t n_total) {
    const std::size_t n = rows.empty() ? n_total : rows.size();
    Design d;
    d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(columns.size() + 1));
    d.names.push_back(kInterceptName);
    d.names.insert(d.names.end(), names.begin(), names.end());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = rows.empty() ? i : rows[i];
        const auto ii = static_cast<Eigen::Index>(i);
        d.X(ii, 0) = 1.0;
        for (std::size_t j = 0; j < columns.size(); ++j) d.X(ii, static_cast<Eigen::Index>(j + 1)) = columns[j][r];
    }
    return d;
}

inline Vector gather(std::span<const double> column, const std::vector<std::size_t>& rows) {
    if (rows.empty()) return Eigen::Map<const Vector>(column.data(), static_cast<Eigen::Index>(column.size()));
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = column[rows[i]];
    return out;
}

// ---------------------------------------------------------------------------
// GLM fitting

namespace detail {

inline void require_full_rank(const Matrix& X) {
    if (X.rows() <= X.cols()) {
        fail(ErrorCode::RankDeficient, "need more rows (" + std::to_string(X.rows()) + ") than columns (" +
                                           std::to_string(X.cols()) + ")");
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    if (qr.rank() < X.cols()) {
        fail(ErrorCode::RankDeficient, "design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                           std::to_string(X.cols()));
    }
}

inline FitResult fit_gaussian(const Matrix& X, const Vector& y, const std::vector<std::string>& names) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    const Vector beta = qr.solve(y);
    const Vector resid = y - X * beta;
    const double rss = resid.squaredNorm();
    const double sigma2 = rss / static_cast<double>(n);
    const double sigma = std::sqrt(sigma2);

    const Matrix xtx_inv = (X.transpose() * X).ldlt().solve(Matrix::Identity(p, p));

    FitResult fit;
    fit.term_names = names;
    fit.term_names.push_back(kSigmaName);
    fit.estimates.resize(p + 1);
    fit.estimates.head(p) = beta;
    fit.estimates[p] = sigma;
    fit.vcov = Matrix::Zero(p + 1, p + 1);
    fit.vcov.topLeftCorner(p, p) = sigma2 * xtx_inv;
    // Observed information of log sigma is 2n; delta method to sigma.
    fit.vcov(p, p) = sigma2 / (2.0 * static_cast<double>(n));
    fit.log_likelihood = sigma > 0.0 ? -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * sigma2) + 1.0)
                                     : std::numeric_limits<double>::infinity();
    fit.converged = true;
    fit.n_iterations = 1;
    fit.n_obs_used = static_cast<std::size_t>(n);
    apply_wald(fit);
    return fit;
}

inline FitResult fit_logistic(const Matrix& X, const Vector& y, const std::vector<std::string>& names,
                              const OptimOptions& options) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) fail(ErrorCode::NonBinaryLatent, "binomial response must be 0 or 1");
    }
    const Eigen::Index p = X.cols();
    Vector beta = Vector::Zero(p);
    auto loglik = [&](const Vector& b) {
        return pairwise_sum(bernoulli_logit_logprob((X * b).array(), y.array()));
    };
    double ll = loglik(beta);
    bool converged = false;
    int iter = 0;
    Matrix info(p, p);
    for (; iter < options.max_iterations; ++iter) {
        const Eigen::ArrayXd eta = (X * beta).array();
        const Eigen::ArrayXd mu = eta.unaryExpr([](double e) { return inv_logit(e); });
        const Eigen::ArrayXd w = mu * (1.0 - mu);
        info = X.transpose() * (X.array().colwise() * w).matrix();
        const Vector score = X.transpose() * (y.array() - mu).matrix();
        Eigen::LDLT<Matrix> ldlt(info);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) {
            fail(ErrorCode::Separation, "information matrix became singular (fitted probabilities 0 or 1)");
        }
        Vector delta = ldlt.solve(score);
        // Step halving keeps the log-likelihood non-decreasing.
        double step = 1.0;
        Vector candidate = beta + delta;
        double ll_new = loglik(candidate);
        for (int h = 0; h < 30 && !(ll_new >= ll - 1e-12 * std::abs(ll)); ++h) {
            step *= 0.5;
            candidate = beta + step * delta;
            ll_new = loglik(candidate);
        }
        const double change = (step * delta).cwiseAbs().maxCoeff();
        beta = candidate;
        ll = ll_new;
        if (beta.cwiseAbs().maxCoeff() > kSeparationBound) {
            fail(ErrorCode::Separation, "logistic coefficient exceeded |" + std::to_string(kSeparationBound) +
                                            "| (perfect or quasi-perfect separation)");
        }
        if (change <= 1e-10 * (1.0 + beta.cwiseAbs().maxCoeff())) {
            converged = true;
            ++iter;
            break;
        }
    }
    if (!converged) fail(ErrorCode::NotConverged, "IRLS did not converge");

    const Eigen::ArrayXd mu = (X * beta).array().unaryExpr([](double e) { return inv_logit(e); });
    info = X.transpose() * (X.array().colwise() * (mu * (1.0 - mu))).matrix();

    FitResult fit;
    fit.term_names = names;
    fit.estimates = beta;
    fit.vcov = info.ldlt().solve(Matrix::Identity(p, p));
    fit.log_likelihood = ll;
    fit.converged = true;
    fit.n_iterations = iter;
    fit.n_obs_used = static_cast<std::size_t>(X.rows());
    apply_wald(fit);
    return fit;
}

} // namespace detail

/// Maximum-likelihood GLM fit with Wald intervals from the inverse observed
/// information. Gaussian fits are closed-form least squares and append a
/// "sigma" term (MLE, divisor n); logistic fits use Newton-Raphson (IRLS).
inline FitResult fit_glm(const Matrix& X, const Vector& y, const std::vector<std::string>& names, Family family,
                         const OptimOptions& options = {}) {
    options.validate();
    detail::require_full_rank(X);
    if (family == Family::GaussianIdentity) return detail::fit_gaussian(X, y, names);
    return detail::fit_logistic(X, y, names, options);
}

inline FitResult fit_glm(const Design& design, const Vector& y, Family family, const OptimOptions& options = {}) {
    return fit_glm(design.X, y, design.names, family, options);
}

/// Log-likelihood of a GLM at given coefficients (log sigma for Gaussian).
inline double glm_loglik(const Matrix& X, const Vector& y, const Vector& beta, Family family,
                         double log_sigma = 0.0) {
    const Eigen::ArrayXd eta = (X * beta).array();
    if (family == Family::GaussianIdentity) return pairwise_sum(gaussian_logdensity(y.array(), eta, log_sigma));
    return pairwise_sum(bernoulli_logit_logprob(eta, y.array()));
}

} // namespace misclass
