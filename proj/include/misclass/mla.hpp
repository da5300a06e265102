#pragma once

// Maximum likelihood adjustment for a misclassified binary variable.
//
// The joint model factors into the main model, an error model for the
// classifier output given the truth, and (when the misclassified variable is
// a covariate) an exposure model for the truth. On annotated rows all three
// are evaluated at the observed truth; on the remaining rows the truth is
// summed out over {0, 1}.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "misclass/data.hpp"
#include "misclass/error.hpp"
#include "misclass/formula.hpp"
#include "misclass/glm.hpp"
#include "misclass/optim.hpp"

namespace misclass {

inline constexpr const char* kLogSigmaName = "log_sigma";

struct JointModelSpec {
    ModelSpec main;
    std::vector<std::string> error_model_terms;
    std::vector<std::string> exposure_model_terms;
    Family main_family = Family::GaussianIdentity;

    ProxyPosition proxy_case() const { return main.proxy->position; }
    bool is_iv() const { return main.is_iv(); }
    bool is_dv() const { return main.is_dv(); }
    const std::string& latent() const { return main.proxy->latent; }
    const std::string& surrogate() const { return main.proxy->surrogate; }

    /// Default sub-models: error model on {X, Y, Z...} (IV) or {Y, X, Z...}
    /// (DV); exposure model on the non-latent covariates (IV only).
    static JointModelSpec defaults(const ModelSpec& main, Family family) {
        if (!main.proxy) fail(ErrorCode::UnsupportedModel, "formula has no '||' proxy binding");
        JointModelSpec spec;
        spec.main = main;
        spec.main_family = family;
        const auto others = main.other_terms();
        spec.error_model_terms.push_back(main.proxy->latent);
        if (main.is_iv()) {
            spec.error_model_terms.push_back(main.response);
            spec.exposure_model_terms = others;
        }
        spec.error_model_terms.insert(spec.error_model_terms.end(), others.begin(), others.end());
        return spec;
    }

    void validate() const {
        if (!main.proxy) fail(ErrorCode::UnsupportedModel, "formula has no '||' proxy binding");
        if (std::find(error_model_terms.begin(), error_model_terms.end(), latent()) == error_model_terms.end()) {
            fail(ErrorCode::UnsupportedModel, "error model must include the latent variable '" + latent() + "'");
        }
        std::vector<std::string> allowed{main.response};
        allowed.insert(allowed.end(), main.terms.begin(), main.terms.end());
        for (const auto& t : error_model_terms) {
            if (std::find(allowed.begin(), allowed.end(), t) == allowed.end()) {
                fail(ErrorCode::UnsupportedModel, "error-model term '" + t + "' is not a model variable");
            }
        }
        if (is_dv()) {
            if (main_family != Family::BernoulliLogit) {
                fail(ErrorCode::UnsupportedModel, "a misclassified outcome requires the binomial family");
            }
            if (!exposure_model_terms.empty()) {
                fail(ErrorCode::UnsupportedModel, "exposure model applies only to a misclassified covariate");
            }
        } else {
            for (const auto& t : exposure_model_terms) {
                if (t == latent() || t == main.response ||
                    std::find(main.terms.begin(), main.terms.end(), t) == main.terms.end()) {
                    fail(ErrorCode::UnsupportedModel, "exposure-model term '" + t + "' must be a non-latent covariate");
                }
            }
        }
    }
};

/// Drops the dependence of the classifier output on everything but the truth
/// (IV: removes the outcome; DV: keeps only the outcome).
inline JointModelSpec nondifferential_variant(const JointModelSpec& spec) {
    JointModelSpec out = spec;
    out.error_model_terms.clear();
    for (const auto& t : spec.error_model_terms) {
        if (spec.is_iv() ? t != spec.main.response : t == spec.latent()) out.error_model_terms.push_back(t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter vector

enum class Block { Main, Error, Exposure };

inline const char* to_string(Block b) {
    switch (b) {
    case Block::Main: return "main";
    case Block::Error: return "error";
    case Block::Exposure: return "exposure";
    }
    return "?";
}

struct ThetaSlot {
    Block block;
    std::string term;
};

/// Packed parameters with a (block, term) -> position index. The main block
/// holds the intercept, the formula terms, and log_sigma for Gaussian fits.
class ThetaVector {
public:
    ThetaVector() = default;

    ThetaVector(std::vector<ThetaSlot> slots) : slots_(std::move(slots)), values_(Vector::Zero(static_cast<Eigen::Index>(slots_.size()))) {}

    static ThetaVector layout(const JointModelSpec& spec, bool with_error = true) {
        std::vector<ThetaSlot> slots;
        slots.push_back({Block::Main, kInterceptName});
        for (const auto& t : spec.main.terms) slots.push_back({Block::Main, t});
        if (spec.main_family == Family::GaussianIdentity) slots.push_back({Block::Main, kLogSigmaName});
        if (with_error) {
            slots.push_back({Block::Error, kInterceptName});
            for (const auto& t : spec.error_model_terms) slots.push_back({Block::Error, t});
        }
        if (spec.is_iv()) {
            slots.push_back({Block::Exposure, kInterceptName});
            for (const auto& t : spec.exposure_model_terms) slots.push_back({Block::Exposure, t});
        }
        return ThetaVector(std::move(slots));
    }

    std::size_t size() const { return slots_.size(); }
    const std::vector<ThetaSlot>& slots() const { return slots_; }
    Vector& values() { return values_; }
    const Vector& values() const { return values_; }

    std::optional<std::size_t> find(Block block, const std::string& term) const {
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            if (slots_[i].block == block && slots_[i].term == term) return i;
        }
        return std::nullopt;
    }

    std::size_t index(Block block, const std::string& term) const {
        const auto i = find(block, term);
        if (!i) fail(ErrorCode::MissingColumn, std::string("no parameter ") + to_string(block) + ":" + term);
        return *i;
    }

    double& at(Block block, const std::string& term) { return values_[static_cast<Eigen::Index>(index(block, term))]; }
    double at(Block block, const std::string& term) const { return values_[static_cast<Eigen::Index>(index(block, term))]; }

    /// Positions of a block's slots, in order.
    std::vector<std::size_t> block_positions(Block block) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            if (slots_[i].block == block) out.push_back(i);
        }
        return out;
    }

private:
    std::vector<ThetaSlot> slots_;
    Vector values_;
};

// ---------------------------------------------------------------------------
// Joint likelihood

/// How the classifier output enters the likelihood.
enum class ErrorModelMode {
    Estimated,     ///< logistic error model with free parameters
    Deterministic, ///< classifier agrees with the truth on every annotated row
    Fixed,         ///< frozen log P(w | truth), supplied by the caller
};

/// Precomputed designs for the joint log-likelihood of one frame.
class JointLikelihood {
public:
    JointLikelihood(const AnalysisFrame& frame, JointModelSpec spec,
                    ErrorModelMode mode = ErrorModelMode::Estimated, bool with_exposure = true)
        : spec_(std::move(spec)), mode_(mode), with_exposure_(with_exposure && spec_.is_iv()) {
        spec_.validate();
        if (spec_.is_iv() != frame.spec().is_iv() || spec_.latent() != frame.spec().proxy->latent) {
            fail(ErrorCode::UnsupportedModel, "joint model and frame disagree on the proxy binding");
        }
        if (spec_.is_iv()) {
            if (spec_.main_family == Family::BernoulliLogit) check_binary(frame, spec_.main.response);
        }
        theta_ = ThetaVector::layout(spec_, mode_ == ErrorModelMode::Estimated);
        if (!with_exposure_ && spec_.is_iv()) {
            std::vector<ThetaSlot> kept;
            for (const auto& s : theta_.slots()) {
                if (s.block != Block::Exposure) kept.push_back(s);
            }
            theta_ = ThetaVector(std::move(kept));
        }
        main_pos_ = theta_.block_positions(Block::Main);
        if (spec_.main_family == Family::GaussianIdentity) {
            log_sigma_pos_ = main_pos_.back();
            main_pos_.pop_back();
        }
        error_pos_ = theta_.block_positions(Block::Error);
        exposure_pos_ = theta_.block_positions(Block::Exposure);

        std::vector<std::size_t> ann, unann;
        for (std::size_t i = 0; i < frame.n_rows(); ++i) (frame.annotated(i) ? ann : unann).push_back(i);
        annotated_ = make_partition(frame, ann, true);
        unannotated_ = make_partition(frame, unann, false);

        // Column of the latent variable inside each design (intercept is column 0).
        if (spec_.is_iv()) main_latent_col_ = column_of(spec_.main.terms, spec_.latent());
        error_latent_col_ = column_of(spec_.error_model_terms, spec_.latent());
    }

    const JointModelSpec& spec() const { return spec_; }
    ErrorModelMode mode() const { return mode_; }
    bool has_exposure() const { return with_exposure_; }

    /// Parameter layout (values zeroed); copy and fill to evaluate.
    const ThetaVector& layout() const { return theta_; }

    /// log P(w | truth) table used in Fixed mode, indexed [truth][w]. In
    /// that mode annotated rows contribute the main (and exposure) terms only.
    void set_fixed_error(const std::array<std::array<double, 2>, 2>& log_prob) { fixed_error_ = log_prob; }

    std::size_t n_annotated() const { return annotated_.rows.size(); }
    std::size_t n_unannotated() const { return unannotated_.rows.size(); }

    /// Per-row log contributions in the frame's row order.
    Eigen::ArrayXd row_contributions(const Vector& theta) const {
        const Eigen::ArrayXd a = contributions(annotated_, theta, true);
        const Eigen::ArrayXd u = contributions(unannotated_, theta, false);
        Eigen::ArrayXd out(static_cast<Eigen::Index>(annotated_.rows.size() + unannotated_.rows.size()));
        for (std::size_t i = 0; i < annotated_.rows.size(); ++i) out[static_cast<Eigen::Index>(annotated_.rows[i])] = a[static_cast<Eigen::Index>(i)];
        for (std::size_t i = 0; i < unannotated_.rows.size(); ++i) out[static_cast<Eigen::Index>(unannotated_.rows[i])] = u[static_cast<Eigen::Index>(i)];
        return out;
    }

    /// Total log-likelihood; throws NonFiniteRowError naming the first bad row.
    double operator()(const Vector& theta) const {
        const double v = evaluate(theta);
        if (!std::isfinite(v)) {
            const Eigen::ArrayXd rows = row_contributions(theta);
            for (Eigen::Index i = 0; i < rows.size(); ++i) {
                if (!std::isfinite(rows[i])) throw NonFiniteRowError(static_cast<std::size_t>(i), "non-finite likelihood contribution");
            }
        }
        return v;
    }

    /// Total log-likelihood without the row diagnosis (non-finite allowed).
    double evaluate(const Vector& theta) const {
        return pairwise_sum(contributions(annotated_, theta, true)) +
               pairwise_sum(contributions(unannotated_, theta, false));
    }

    /// Analytic gradient of evaluate().
    Vector gradient(const Vector& theta) const {
        Vector g = Vector::Zero(theta.size());
        accumulate_gradient(annotated_, theta, true, g);
        accumulate_gradient(unannotated_, theta, false, g);
        return g;
    }

private:
    struct Partition {
        std::vector<std::size_t> rows;
        Matrix main_X;     // latent column zeroed (IV)
        Matrix error_X;    // latent column zeroed
        Matrix exposure_X; // IV only
        Eigen::ArrayXd y;
        Eigen::ArrayXd w;
        Eigen::ArrayXd truth; // annotated partition only
    };

    static void check_binary(const AnalysisFrame& frame, const std::string& name) {
        for (double v : frame.column(name)) {
            if (v != 0.0 && v != 1.0) fail(ErrorCode::NonBinaryLatent, "column '" + name + "' must be 0 or 1 for the binomial family");
        }
    }

    static Eigen::Index column_of(const std::vector<std::string>& terms, const std::string& name) {
        for (std::size_t i = 0; i < terms.size(); ++i) {
            if (terms[i] == name) return static_cast<Eigen::Index>(i + 1);
        }
        return -1;
    }

    Partition make_partition(const AnalysisFrame& frame, const std::vector<std::size_t>& rows, bool annotated) const {
        Partition p;
        p.rows = rows;
        const auto n = static_cast<Eigen::Index>(rows.size());
        const std::string& latent = spec_.latent();
        auto design = [&](const std::vector<std::string>& terms) {
            Matrix X(n, static_cast<Eigen::Index>(terms.size() + 1));
            X.col(0).setOnes();
            for (std::size_t j = 0; j < terms.size(); ++j) {
                const auto col = static_cast<Eigen::Index>(j + 1);
                if (terms[j] == latent) {
                    X.col(col).setZero();
                } else {
                    const auto src = frame.column(terms[j]);
                    for (Eigen::Index i = 0; i < n; ++i) X(i, col) = src[rows[static_cast<std::size_t>(i)]];
                }
            }
            return X;
        };
        auto values = [&](const std::string& name) {
            Eigen::ArrayXd out(n);
            const auto src = frame.column(name);
            for (Eigen::Index i = 0; i < n; ++i) out[i] = src[rows[static_cast<std::size_t>(i)]];
            return out;
        };
        p.main_X = design(spec_.main.terms);
        p.error_X = design(spec_.error_model_terms);
        if (spec_.is_iv()) p.exposure_X = design(spec_.exposure_model_terms);
        p.w = values(spec_.surrogate());
        if (spec_.is_iv() || annotated) p.y = values(spec_.main.response);
        if (annotated) p.truth = values(latent);
        return p;
    }

    Vector gather(const Vector& theta, const std::vector<std::size_t>& pos) const {
        Vector out(static_cast<Eigen::Index>(pos.size()));
        for (std::size_t i = 0; i < pos.size(); ++i) out[static_cast<Eigen::Index>(i)] = theta[static_cast<Eigen::Index>(pos[i])];
        return out;
    }

    Eigen::ArrayXd main_logf(const Eigen::ArrayXd& y, const Eigen::ArrayXd& eta, const Vector& theta) const {
        if (spec_.main_family == Family::GaussianIdentity) {
            return gaussian_logdensity(y, eta, theta[static_cast<Eigen::Index>(*log_sigma_pos_)]);
        }
        return bernoulli_logit_logprob(eta, y);
    }

    /// log P(w | truth = k) for every row of a partition.
    Eigen::ArrayXd error_logp(const Partition& p, const Eigen::ArrayXd& base, double coef, const Eigen::ArrayXd& truth) const {
        const auto n = p.w.size();
        switch (mode_) {
        case ErrorModelMode::Estimated:
            return bernoulli_logit_logprob(base + coef * truth, p.w);
        case ErrorModelMode::Deterministic: {
            Eigen::ArrayXd out(n);
            for (Eigen::Index i = 0; i < n; ++i) out[i] = p.w[i] == truth[i] ? 0.0 : -std::numeric_limits<double>::infinity();
            return out;
        }
        case ErrorModelMode::Fixed: {
            Eigen::ArrayXd out(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                out[i] = fixed_error_[truth[i] != 0.0 ? 1 : 0][p.w[i] != 0.0 ? 1 : 0];
            }
            return out;
        }
        }
        return {};
    }

    Eigen::ArrayXd contributions(const Partition& p, const Vector& theta, bool annotated) const {
        const auto n = static_cast<Eigen::Index>(p.rows.size());
        if (n == 0) return Eigen::ArrayXd(0);

        const Vector beta = gather(theta, main_pos_);
        const Eigen::ArrayXd main_base = (p.main_X * beta).array();

        Eigen::ArrayXd err_base = Eigen::ArrayXd::Zero(n);
        double err_coef = 0.0;
        if (mode_ == ErrorModelMode::Estimated) {
            const Vector alpha = gather(theta, error_pos_);
            err_base = (p.error_X * alpha).array();
            err_coef = alpha[error_latent_col_];
        }

        if (spec_.is_iv()) {
            const double beta_latent = beta[main_latent_col_];
            Eigen::ArrayXd expo_eta;
            if (with_exposure_) expo_eta = (p.exposure_X * gather(theta, exposure_pos_)).array();

            if (annotated) {
                Eigen::ArrayXd total = main_logf(p.y, main_base + beta_latent * p.truth, theta);
                if (mode_ != ErrorModelMode::Fixed) total += error_logp(p, err_base, err_coef, p.truth);
                if (with_exposure_) total += bernoulli_logit_logprob(expo_eta, p.truth);
                return total;
            }
            const Eigen::ArrayXd zero = Eigen::ArrayXd::Zero(n);
            const Eigen::ArrayXd one = Eigen::ArrayXd::Ones(n);
            Eigen::ArrayXd t0 = main_logf(p.y, main_base, theta) + error_logp(p, err_base, err_coef, zero);
            Eigen::ArrayXd t1 = main_logf(p.y, main_base + beta_latent, theta) + error_logp(p, err_base, err_coef, one);
            if (with_exposure_) {
                t0 -= softplus(expo_eta);
                t1 -= softplus(-expo_eta);
            }
            return log_sum_exp(t0, t1);
        }

        // Misclassified outcome: the main model is the distribution of the truth.
        if (annotated) {
            Eigen::ArrayXd total = bernoulli_logit_logprob(main_base, p.truth);
            if (mode_ != ErrorModelMode::Fixed) total += error_logp(p, err_base, err_coef, p.truth);
            return total;
        }
        const Eigen::ArrayXd zero = Eigen::ArrayXd::Zero(n);
        const Eigen::ArrayXd one = Eigen::ArrayXd::Ones(n);
        const Eigen::ArrayXd t0 = -softplus(main_base) + error_logp(p, err_base, err_coef, zero);
        const Eigen::ArrayXd t1 = -softplus(-main_base) + error_logp(p, err_base, err_coef, one);
        return log_sum_exp(t0, t1);
    }

    /// Per-row log term and its derivatives with respect to each linear
    /// predictor, for one value of the truth.
    struct Component {
        Eigen::ArrayXd logc, d_main, d_log_sigma, d_error, d_exposure;
    };

    Component component(const Partition& p, const Vector& theta, const Eigen::ArrayXd& main_base,
                        const Eigen::ArrayXd& err_base, double err_coef, const Eigen::ArrayXd& expo_eta,
                        const Eigen::ArrayXd& truth, bool with_error) const {
        Component c;
        if (spec_.is_iv()) {
            const double beta_latent = theta[static_cast<Eigen::Index>(main_pos_[static_cast<std::size_t>(main_latent_col_)])];
            const Eigen::ArrayXd eta = main_base + beta_latent * truth;
            c.logc = main_logf(p.y, eta, theta);
            if (spec_.main_family == Family::GaussianIdentity) {
                const double ls = theta[static_cast<Eigen::Index>(*log_sigma_pos_)];
                const double inv_var = std::exp(-2.0 * ls);
                const Eigen::ArrayXd r = p.y - eta;
                c.d_main = r * inv_var;
                c.d_log_sigma = r.square() * inv_var - 1.0;
            } else {
                c.d_main = p.y - eta.unaryExpr([](double v) { return inv_logit(v); });
            }
        } else {
            c.logc = bernoulli_logit_logprob(main_base, truth);
            c.d_main = truth - main_base.unaryExpr([](double v) { return inv_logit(v); });
        }
        if (with_error) {
            c.logc += error_logp(p, err_base, err_coef, truth);
            if (mode_ == ErrorModelMode::Estimated) {
                c.d_error = p.w - (err_base + err_coef * truth).unaryExpr([](double v) { return inv_logit(v); });
            }
        }
        if (with_exposure_) {
            c.logc += bernoulli_logit_logprob(expo_eta, truth);
            c.d_exposure = truth - expo_eta.unaryExpr([](double v) { return inv_logit(v); });
        }
        return c;
    }

    void accumulate_gradient(const Partition& p, const Vector& theta, bool annotated, Vector& g) const {
        const auto n = static_cast<Eigen::Index>(p.rows.size());
        if (n == 0) return;
        const Vector beta = gather(theta, main_pos_);
        const Eigen::ArrayXd main_base = (p.main_X * beta).array();
        Eigen::ArrayXd err_base = Eigen::ArrayXd::Zero(n);
        double err_coef = 0.0;
        const bool estimated = mode_ == ErrorModelMode::Estimated;
        if (estimated) {
            const Vector alpha = gather(theta, error_pos_);
            err_base = (p.error_X * alpha).array();
            err_coef = alpha[error_latent_col_];
        }
        Eigen::ArrayXd expo_eta;
        if (with_exposure_) expo_eta = (p.exposure_X * gather(theta, exposure_pos_)).array();

        // Weighted derivative sums over the truth values.
        Eigen::ArrayXd dm, ds, de, dx, dm_t, de_t;
        if (annotated) {
            const bool with_error = mode_ != ErrorModelMode::Fixed;
            const Component c = component(p, theta, main_base, err_base, err_coef, expo_eta, p.truth, with_error);
            dm = c.d_main;
            dm_t = c.d_main * p.truth;
            if (c.d_log_sigma.size()) ds = c.d_log_sigma;
            if (estimated) {
                de = c.d_error;
                de_t = c.d_error * p.truth;
            }
            if (with_exposure_) dx = c.d_exposure;
        } else {
            const Eigen::ArrayXd zero = Eigen::ArrayXd::Zero(n);
            const Eigen::ArrayXd one = Eigen::ArrayXd::Ones(n);
            const Component c0 = component(p, theta, main_base, err_base, err_coef, expo_eta, zero, true);
            const Component c1 = component(p, theta, main_base, err_base, err_coef, expo_eta, one, true);
            const Eigen::ArrayXd lse = log_sum_exp(c0.logc, c1.logc);
            const Eigen::ArrayXd w1 = (c1.logc - lse).exp();
            const Eigen::ArrayXd w0 = (c0.logc - lse).exp();
            dm = w0 * c0.d_main + w1 * c1.d_main;
            dm_t = w1 * c1.d_main;
            if (c0.d_log_sigma.size()) ds = w0 * c0.d_log_sigma + w1 * c1.d_log_sigma;
            if (estimated) {
                de = w0 * c0.d_error + w1 * c1.d_error;
                de_t = w1 * c1.d_error;
            }
            if (with_exposure_) dx = w0 * c0.d_exposure + w1 * c1.d_exposure;
        }

        const Vector gm = p.main_X.transpose() * dm.matrix();
        for (std::size_t k = 0; k < main_pos_.size(); ++k) g[static_cast<Eigen::Index>(main_pos_[k])] += gm[static_cast<Eigen::Index>(k)];
        if (spec_.is_iv()) g[static_cast<Eigen::Index>(main_pos_[static_cast<std::size_t>(main_latent_col_)])] += dm_t.sum();
        if (ds.size()) g[static_cast<Eigen::Index>(*log_sigma_pos_)] += ds.sum();
        if (estimated) {
            const Vector ge = p.error_X.transpose() * de.matrix();
            for (std::size_t k = 0; k < error_pos_.size(); ++k) g[static_cast<Eigen::Index>(error_pos_[k])] += ge[static_cast<Eigen::Index>(k)];
            g[static_cast<Eigen::Index>(error_pos_[static_cast<std::size_t>(error_latent_col_)])] += de_t.sum();
        }
        if (with_exposure_) {
            const Vector gx = p.exposure_X.transpose() * dx.matrix();
            for (std::size_t k = 0; k < exposure_pos_.size(); ++k) g[static_cast<Eigen::Index>(exposure_pos_[k])] += gx[static_cast<Eigen::Index>(k)];
        }
    }

    JointModelSpec spec_;
    ErrorModelMode mode_;
    bool with_exposure_;
    ThetaVector theta_;
    std::vector<std::size_t> main_pos_;
    std::optional<std::size_t> log_sigma_pos_;
    std::vector<std::size_t> error_pos_;
    std::vector<std::size_t> exposure_pos_;
    Eigen::Index main_latent_col_ = -1;
    Eigen::Index error_latent_col_ = -1;
    Partition annotated_;
    Partition unannotated_;
    std::array<std::array<double, 2>, 2> fixed_error_{};
};

inline double joint_loglik_iv(const AnalysisFrame& frame, const JointModelSpec& spec, const ThetaVector& theta) {
    if (!spec.is_iv()) fail(ErrorCode::UnsupportedModel, "joint_loglik_iv needs a misclassified covariate");
    return JointLikelihood(frame, spec)(theta.values());
}

inline double joint_loglik_dv(const AnalysisFrame& frame, const JointModelSpec& spec, const ThetaVector& theta) {
    if (!spec.is_dv()) fail(ErrorCode::UnsupportedModel, "joint_loglik_dv needs a misclassified outcome");
    return JointLikelihood(frame, spec)(theta.values());
}

// ---------------------------------------------------------------------------
// Fitting

struct MlaFit {
    FitResult main;
    std::optional<FitResult> error_model; ///< absent when the classifier is deterministic on annotated rows
    std::optional<FitResult> exposure_model;
    double joint_log_likelihood = 0.0;
    ThetaVector theta;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::size_t> annotated_rows(const AnalysisFrame& frame) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < frame.n_rows(); ++i) {
        if (frame.annotated(i)) rows.push_back(i);
    }
    return rows;
}

inline std::vector<std::span<const double>> columns(const AnalysisFrame& frame, const std::vector<std::string>& names) {
    std::vector<std::span<const double>> out;
    for (const auto& n : names) out.push_back(frame.column(n));
    return out;
}

/// True when the surrogate equals the truth on every annotated row.
inline bool perfect_agreement(const AnalysisFrame& frame) {
    const auto x = frame.latent();
    const auto w = frame.surrogate();
    for (std::size_t i = 0; i < frame.n_rows(); ++i) {
        if (frame.annotated(i) && x[i] != w[i]) return false;
    }
    return true;
}

inline void require_both_classes(const AnalysisFrame& frame) {
    const auto x = frame.latent();
    std::size_t ones = 0;
    for (std::size_t i = 0; i < frame.n_rows(); ++i) {
        if (frame.annotated(i) && x[i] == 1.0) ++ones;
    }
    if (ones == 0 || ones == frame.n_annotated()) {
        fail(ErrorCode::OneClassAnnotated, "annotated rows contain only one class of '" + frame.spec().proxy->latent + "'");
    }
}

/// Sub-block of a joint fit as a FitResult.
inline FitResult block_result(const ThetaVector& theta, const Matrix& vcov, Block block, int iterations,
                              bool converged, std::size_t n_obs, std::optional<double> loglik) {
    const auto pos = theta.block_positions(block);
    FitResult fit;
    const auto p = static_cast<Eigen::Index>(pos.size());
    fit.estimates.resize(p);
    fit.vcov.resize(p, p);
    for (Eigen::Index a = 0; a < p; ++a) {
        const auto ia = static_cast<Eigen::Index>(pos[static_cast<std::size_t>(a)]);
        fit.term_names.push_back(theta.slots()[pos[static_cast<std::size_t>(a)]].term);
        fit.estimates[a] = theta.values()[ia];
        for (Eigen::Index b = 0; b < p; ++b) fit.vcov(a, b) = vcov(ia, static_cast<Eigen::Index>(pos[static_cast<std::size_t>(b)]));
    }
    // Report sigma on its natural scale (delta method from log sigma).
    if (!fit.term_names.empty() && fit.term_names.back() == kLogSigmaName) {
        const Eigen::Index k = p - 1;
        const double sigma = std::exp(fit.estimates[k]);
        fit.term_names.back() = kSigmaName;
        fit.estimates[k] = sigma;
        fit.vcov.row(k) *= sigma;
        fit.vcov.col(k) *= sigma;
    }
    fit.converged = converged;
    fit.n_iterations = iterations;
    fit.n_obs_used = n_obs;
    fit.log_likelihood = loglik;
    apply_wald(fit);
    return fit;
}

/// Inverse of the observed information; throws SingularInformation.
inline Matrix invert_information(const Matrix& info) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (!(lo > 0.0) || !(hi / lo < 1e14)) {
        const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
        fail(ErrorCode::SingularInformation, "observed information is not invertible (condition estimate " +
                                                 std::to_string(cond) + ")");
    }
    return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

} // namespace detail

/// Minimum annotated rows for fit_mla; below kMlaWarnAnnotations a warning is attached.
inline constexpr std::size_t kMlaMinAnnotations = 20;
inline constexpr std::size_t kMlaWarnAnnotations = 50;

inline MlaFit fit_mla(const AnalysisFrame& frame, const JointModelSpec& spec, const OptimOptions& options = {}) {
    options.validate();
    spec.validate();
    if (!frame.spec().proxy) fail(ErrorCode::UnsupportedModel, "frame has no proxy binding");
    if (frame.n_annotated() < kMlaMinAnnotations) {
        fail(ErrorCode::TooFewAnnotations, "MLA needs at least " + std::to_string(kMlaMinAnnotations) +
                                               " annotated rows, got " + std::to_string(frame.n_annotated()));
    }
    detail::require_both_classes(frame);

    MlaFit out;
    if (frame.n_annotated() < kMlaWarnAnnotations) {
        out.warnings.push_back("only " + std::to_string(frame.n_annotated()) + " annotated rows; inference may be unreliable");
    }

    const bool deterministic = detail::perfect_agreement(frame);
    if (deterministic) {
        out.warnings.push_back("classifier agrees with every annotation; error model treated as deterministic");
    }
    const JointLikelihood lik(frame, spec, deterministic ? ErrorModelMode::Deterministic : ErrorModelMode::Estimated);
    ThetaVector theta = lik.layout();

    // Start from the component models fitted on the annotated rows.
    const auto rows = detail::annotated_rows(frame);
    const auto n = frame.n_rows();
    {
        const auto d = make_design(detail::columns(frame, spec.main.terms), spec.main.terms, rows, n);
        const auto f = fit_glm(d, gather(frame.column(spec.main.response), rows), spec.main_family, options);
        for (std::size_t k = 0; k < d.names.size(); ++k) theta.at(Block::Main, d.names[k]) = f.estimates[static_cast<Eigen::Index>(k)];
        if (spec.main_family == Family::GaussianIdentity) {
            const double sigma = f.estimates[static_cast<Eigen::Index>(d.names.size())];
            theta.at(Block::Main, kLogSigmaName) = std::log(std::max(sigma, 1e-8));
        }
    }
    if (!deterministic) {
        const auto d = make_design(detail::columns(frame, spec.error_model_terms), spec.error_model_terms, rows, n);
        const auto f = fit_glm(d, gather(frame.surrogate(), rows), Family::BernoulliLogit, options);
        for (std::size_t k = 0; k < d.names.size(); ++k) theta.at(Block::Error, d.names[k]) = f.estimates[static_cast<Eigen::Index>(k)];
    }
    if (spec.is_iv()) {
        const auto d = make_design(detail::columns(frame, spec.exposure_model_terms), spec.exposure_model_terms, rows, n);
        const auto f = fit_glm(d, gather(frame.latent(), rows), Family::BernoulliLogit, options);
        for (std::size_t k = 0; k < d.names.size(); ++k) theta.at(Block::Exposure, d.names[k]) = f.estimates[static_cast<Eigen::Index>(k)];
    }

    const Objective objective = [&lik](const Vector& t) { return lik.evaluate(t); };
    const GradientFn gradient = [&lik](const Vector& t) { return lik.gradient(t); };
    lik(theta.values()); // diagnoses a non-finite start with its row

    const MaximizeResult opt = maximize(objective, theta.values(), options, gradient);
    theta.values() = opt.theta;

    const Matrix info = -hessian_from_gradient(gradient, opt.theta, options.fd_step_scale);
    const Matrix vcov = detail::invert_information(info);

    const auto n_obs = frame.n_rows();
    out.joint_log_likelihood = opt.value;
    out.main = detail::block_result(theta, vcov, Block::Main, opt.iterations, opt.converged, n_obs, opt.value);
    if (!deterministic) {
        out.error_model = detail::block_result(theta, vcov, Block::Error, opt.iterations, opt.converged, n_obs, std::nullopt);
    }
    if (spec.is_iv()) {
        out.exposure_model = detail::block_result(theta, vcov, Block::Exposure, opt.iterations, opt.converged, n_obs, std::nullopt);
    }
    out.theta = std::move(theta);
    return out;
}

} // namespace misclass
